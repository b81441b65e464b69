#include "hyperpave/split.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <unordered_map>
#include <unordered_set>

#include <json.hpp>

namespace hyperpave::split {

using nlohmann::json;

namespace {

std::uint64_t pair_key(NodeId p, NodeId a) {
    return (static_cast<std::uint64_t>(p) << 32) | a;
}

struct LinkIndex {
    std::vector<NodeId> products;  // ascending ids
    std::vector<NodeId> aspects;
    std::unordered_set<std::uint64_t> links;  // product-aspect pair edges

    explicit LinkIndex(const Hypergraph& g) {
        for (NodeId v = 0; v < g.node_count(); ++v) {
            if (g.kind_of(v) == NodeKind::Product) products.push_back(v);
            else if (g.kind_of(v) == NodeKind::Aspect) aspects.push_back(v);
        }
        for (const PairEdge& e : g.pair_edges())
            if (e.kind == PairKind::ProductAspect) links.insert(pair_key(e.a, e.b));
    }
};

// Uniform sample of `count` distinct non-edges, drawn by enumerating the
// complement and taking a partial Fisher-Yates prefix. `exclude` holds pairs
// already used by the caller.
std::vector<CandidateLink> sample_nonedges(const LinkIndex& idx, std::size_t count, Rng& rng,
                                           std::unordered_set<std::uint64_t>& exclude,
                                           bool* shortfall) {
    std::vector<std::pair<NodeId, NodeId>> complement;
    for (NodeId p : idx.products)
        for (NodeId a : idx.aspects) {
            const std::uint64_t key = pair_key(p, a);
            if (!idx.links.count(key) && !exclude.count(key)) complement.emplace_back(p, a);
        }
    std::vector<CandidateLink> out;
    if (complement.size() <= count) {
        if (shortfall && complement.size() < count) *shortfall = true;
        for (auto [p, a] : complement) {
            exclude.insert(pair_key(p, a));
            out.push_back(CandidateLink{p, a, LinkLabel::Negative});
        }
        return out;
    }
    for (std::size_t i : rng.sample_indices(complement.size(), count)) {
        auto [p, a] = complement[i];
        exclude.insert(pair_key(p, a));
        out.push_back(CandidateLink{p, a, LinkLabel::Negative});
    }
    return out;
}

std::size_t negative_count(double rate, std::size_t positives) {
    return static_cast<std::size_t>(std::ceil(rate * static_cast<double>(positives)));
}

}  // namespace

std::vector<CandidateLink> sample_negatives(const Hypergraph& g,
                                            const std::vector<CandidateLink>& positives,
                                            double rate, std::uint64_t seed, bool* shortfall) {
    if (positives.empty()) throw InputError("sample_negatives: positive list is empty");
    if (!(rate > 0.0)) throw InputError("sample_negatives: rate must be positive");
    LinkIndex idx(g);
    Rng rng(seed);
    std::unordered_set<std::uint64_t> used;
    bool short_ = false;
    auto out = sample_nonedges(idx, negative_count(rate, positives.size()), rng, used, &short_);
    if (shortfall) *shortfall = short_;
    return out;
}

namespace {

// Rebuild a graph keeping nodes outside `removed` plus the `restored` subset.
// Restored nodes keep only their category-bundle memberships and C-P pair
// edges; hyperedges that lose their defining member or fall under two
// members are dropped.
struct RebuiltGraph {
    Hypergraph graph;
    std::vector<NodeId> old_to_new;  // kInvalid when absent
    static constexpr NodeId kInvalid = static_cast<NodeId>(-1);
};

RebuiltGraph build_split_graph(const Hypergraph& g, const std::unordered_set<NodeId>& removed,
                               const std::unordered_set<NodeId>& restored) {
    RebuiltGraph out;
    out.old_to_new.assign(g.node_count(), RebuiltGraph::kInvalid);
    auto present = [&](NodeId v) { return !removed.count(v) || restored.count(v); };

    for (NodeId v = 0; v < g.node_count(); ++v)
        if (present(v)) out.old_to_new[v] = out.graph.add_node(g.kind_of(v), g.key_of(v));

    for (const Hyperedge& e : g.hyperedges()) {
        std::vector<NodeId> members;
        std::size_t categories = 0, products = 0, aspects = 0;
        for (NodeId v : e.members) {
            // Only category bundles recover restored members; session and
            // product-aspect memberships of removed nodes stay removed.
            const bool keep = e.kind == HyperedgeKind::CategoryBundle ? present(v)
                                                                      : !removed.count(v);
            if (!keep) continue;
            members.push_back(out.old_to_new[v]);
            switch (g.kind_of(v)) {
                case NodeKind::Category: ++categories; break;
                case NodeKind::Product: ++products; break;
                case NodeKind::Aspect: ++aspects; break;
            }
        }
        if (members.size() < 2) continue;
        bool valid = true;
        switch (e.kind) {
            case HyperedgeKind::AlsoView:
            case HyperedgeKind::AlsoBuy: valid = products == members.size(); break;
            case HyperedgeKind::ProductAspects: valid = products == 1 && aspects >= 1; break;
            case HyperedgeKind::CategoryBundle: valid = categories == 1 && products >= 1; break;
        }
        if (valid) out.graph.add_hyperedge(e.kind, std::move(members), e.weight);
    }

    for (const PairEdge& p : g.pair_edges()) {
        bool keep = false;
        if (p.kind == PairKind::CategoryProduct)
            keep = present(p.a) && present(p.b);  // category membership is inventory data
        else
            keep = !removed.count(p.a) && !removed.count(p.b);  // P-A links are labels
        if (keep) out.graph.add_pair_edge(p.kind, out.old_to_new[p.a], out.old_to_new[p.b]);
    }
    out.graph.finalize();
    return out;
}

}  // namespace

SplitBundle zero_shot_split(const Hypergraph& g, const SplitConfig& cfg) {
    if (!g.finalized()) throw InvariantError("zero_shot_split needs a finalized graph");
    if (cfg.n_unseen < 1) throw InputError("n_unseen must be >= 1");
    if (!(cfg.negative_rate > 0.0)) throw InputError("negative_rate must be positive");
    const std::size_t total_aspects = g.count_nodes(NodeKind::Aspect);
    if (cfg.n_unseen >= total_aspects)
        throw InputError("n_unseen (" + std::to_string(cfg.n_unseen) +
                         ") must be smaller than the aspect count (" +
                         std::to_string(total_aspects) + ")");

    LinkIndex idx(g);
    std::unordered_map<NodeId, std::vector<NodeId>> aspect_products;
    for (const PairEdge& e : g.pair_edges())
        if (e.kind == PairKind::ProductAspect) aspect_products[e.b].push_back(e.a);
    for (auto& [a, ps] : aspect_products) std::sort(ps.begin(), ps.end());

    struct Chosen {
        NodeId aspect;
        std::vector<NodeId> products;  // removed together with the aspect
    };
    std::vector<Chosen> chosen[2];  // 0 = val, 1 = test
    std::unordered_set<NodeId> removed_all;
    std::unordered_set<NodeId> side_nodes[2];

    std::vector<NodeId> pool;  // aspects still eligible, ascending
    for (NodeId a : idx.aspects) pool.push_back(a);

    Rng rng(derive_seed(cfg.seed, "unseen"));
    for (std::size_t i = 0; i < cfg.n_unseen; ++i) {
        Chosen pick;
        bool found = false;
        while (!pool.empty()) {
            const std::size_t at = static_cast<std::size_t>(rng.below(pool.size()));
            const NodeId aspect = pool[at];
            pool.erase(pool.begin() + static_cast<std::ptrdiff_t>(at));
            std::vector<NodeId> alive;
            if (auto it = aspect_products.find(aspect); it != aspect_products.end())
                for (NodeId p : it->second)
                    if (!removed_all.count(p)) alive.push_back(p);
            if (alive.empty()) continue;  // orphaned by earlier removals; resample
            pick = Chosen{aspect, std::move(alive)};
            found = true;
            break;
        }
        if (!found)
            throw InputError("zero_shot_split: ran out of aspects with incident products at i=" +
                             std::to_string(i));
        const std::size_t side = i % 2;  // even -> validation, odd -> test
        removed_all.insert(pick.aspect);
        side_nodes[side].insert(pick.aspect);
        for (NodeId p : pick.products) {
            removed_all.insert(p);
            side_nodes[side].insert(p);
        }
        chosen[side].push_back(std::move(pick));
    }

    SplitBundle bundle;
    bundle.config = cfg;

    RebuiltGraph train = build_split_graph(g, removed_all, {});
    if (train.graph.count_nodes(NodeKind::Product) == 0 ||
        train.graph.count_nodes(NodeKind::Aspect) == 0 ||
        train.graph.count_pair_edges(PairKind::ProductAspect) == 0)
        throw InputError("zero_shot_split removed too much: training graph has no links left");
    bundle.train_graph = std::move(train.graph);

    // Training candidates: surviving links plus sampled non-edges.
    {
        std::vector<CandidateLink> positives;
        for (const PairEdge& e : bundle.train_graph.pair_edges())
            if (e.kind == PairKind::ProductAspect)
                positives.push_back(CandidateLink{e.a, e.b, LinkLabel::Positive});
        bool short_ = false;
        auto negatives = sample_negatives(bundle.train_graph, positives, cfg.negative_rate,
                                          derive_seed(cfg.seed, "train-neg"), &short_);
        bundle.negative_shortfall += short_;
        bundle.train_candidates = std::move(positives);
        bundle.train_candidates.insert(bundle.train_candidates.end(), negatives.begin(),
                                       negatives.end());
    }

    for (std::size_t side = 0; side < 2; ++side) {
        SplitSide& out = side == 0 ? bundle.val : bundle.test;
        RebuiltGraph merged = build_split_graph(g, removed_all, side_nodes[side]);
        LinkIndex visible(merged.graph);
        // Negatives must be non-edges of the ORIGINAL graph. Purged links
        // (removed positives, and removed-product links to seen aspects) have
        // no pair edge in the side graph, so re-exclude them from the pool.
        for (const PairEdge& e : g.pair_edges()) {
            if (e.kind != PairKind::ProductAspect) continue;
            const NodeId p = merged.old_to_new[e.a], a = merged.old_to_new[e.b];
            if (p != RebuiltGraph::kInvalid && a != RebuiltGraph::kInvalid)
                visible.links.insert(pair_key(p, a));
        }

        std::unordered_set<std::uint64_t> used;
        Rng neg_rng(derive_seed(cfg.seed, side == 0 ? "val-neg" : "test-neg"));
        for (const Chosen& c : chosen[side]) {
            out.unseen_aspects.push_back(g.key_of(c.aspect));
            const NodeId aspect = merged.old_to_new[c.aspect];
            std::vector<CandidateLink> positives;
            for (NodeId p : c.products) {
                out.removed_products.push_back(g.key_of(p));
                positives.push_back(CandidateLink{merged.old_to_new[p], aspect, LinkLabel::Positive});
            }
            bool short_ = false;
            auto negatives = sample_nonedges(visible, negative_count(cfg.negative_rate,
                                                                     positives.size()),
                                             neg_rng, used, &short_);
            bundle.negative_shortfall += short_;
            out.candidates.insert(out.candidates.end(), positives.begin(), positives.end());
            out.candidates.insert(out.candidates.end(), negatives.begin(), negatives.end());
        }
        // A product can be removed by several of the side's aspects; report it once.
        std::sort(out.removed_products.begin(), out.removed_products.end());
        out.removed_products.erase(
            std::unique(out.removed_products.begin(), out.removed_products.end()),
            out.removed_products.end());
        out.graph = std::move(merged.graph);
    }
    return bundle;
}

namespace {

json candidates_to_json(const Hypergraph& g, const std::vector<CandidateLink>& candidates) {
    json arr = json::array();
    for (const CandidateLink& c : candidates)
        arr.push_back({g.key_of(c.product), g.key_of(c.aspect),
                       c.label == LinkLabel::Positive ? 1 : 0});
    return arr;
}

void check_candidates(const Hypergraph& g, const std::vector<CandidateLink>& candidates,
                      const json& expect, const char* where) {
    json got = candidates_to_json(g, candidates);
    if (got != expect)
        throw DependencyError(std::string("split manifest does not match the graph (") + where +
                              " candidates differ); re-run the split command");
}

}  // namespace

void save_manifest(const SplitBundle& bundle, const std::string& path) {
    json j;
    j["format"] = "HPAVESPLIT1";
    j["config"] = {{"n_unseen", bundle.config.n_unseen},
                   {"negative_rate", bundle.config.negative_rate},
                   {"seed", bundle.config.seed}};
    j["train"] = {{"candidates", candidates_to_json(bundle.train_graph, bundle.train_candidates)}};
    for (const auto* side : {&bundle.val, &bundle.test}) {
        json s;
        s["unseen_aspects"] = side->unseen_aspects;
        s["removed_products"] = side->removed_products;
        s["candidates"] = candidates_to_json(side->graph, side->candidates);
        j[side == &bundle.val ? "val" : "test"] = std::move(s);
    }
    j["warnings"] = {{"negative_shortfall", bundle.negative_shortfall}};
    std::ofstream out(path, std::ios::binary);
    if (!out) throw InputError("cannot write split manifest: " + path);
    out << j.dump(2) << "\n";
}

SplitBundle load_split(const Hypergraph& original, const std::string& manifest_path) {
    std::ifstream in(manifest_path);
    if (!in)
        throw DependencyError("split manifest not found: " + manifest_path +
                              " (run the split command first)");
    json j = json::parse(in, nullptr, false);
    if (j.is_discarded() || !j.is_object() || j.value("format", "") != std::string("HPAVESPLIT1"))
        throw DependencyError("split manifest " + manifest_path +
                              " is malformed or has the wrong format version");
    SplitConfig cfg;
    cfg.n_unseen = j.at("config").at("n_unseen").get<std::size_t>();
    cfg.negative_rate = j.at("config").at("negative_rate").get<double>();
    cfg.seed = j.at("config").at("seed").get<std::uint64_t>();

    SplitBundle bundle = zero_shot_split(original, cfg);
    check_candidates(bundle.train_graph, bundle.train_candidates, j.at("train").at("candidates"),
                     "train");
    check_candidates(bundle.val.graph, bundle.val.candidates, j.at("val").at("candidates"), "val");
    check_candidates(bundle.test.graph, bundle.test.candidates, j.at("test").at("candidates"),
                     "test");
    return bundle;
}

}  // namespace hyperpave::split
