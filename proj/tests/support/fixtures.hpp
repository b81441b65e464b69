// fixtures.hpp - toy corpora, random typed hypergraphs, and the planted
// cluster synthetic used by the learning and inductive tests.
#ifndef HYPERPAVE_TESTS_FIXTURES_HPP
#define HYPERPAVE_TESTS_FIXTURES_HPP

#include <algorithm>
#include <cmath>
#include <string>
#include <unordered_set>
#include <vector>

#include "hyperpave/common.hpp"
#include "hyperpave/hypergraph.hpp"
#include "hyperpave/ingest.hpp"
#include "hyperpave/model.hpp"
#include "hyperpave/split.hpp"

namespace fixtures {

using hyperpave::EdgeId;
using hyperpave::Hypergraph;
using hyperpave::HyperedgeKind;
using hyperpave::NodeId;
using hyperpave::NodeKind;
using hyperpave::PairKind;
using hyperpave::Rng;

// Random typed hypergraph (valid kind memberships, optional non-unit
// weights). Used by the linear-algebra oracle tests.
inline Hypergraph random_graph(Rng& rng, std::size_t max_nodes = 50, bool unit_weights = false) {
    const std::size_t categories = 1 + rng.below(3);
    const std::size_t products = 2 + rng.below(std::max<std::size_t>(2, max_nodes / 2));
    const std::size_t aspects = 1 + rng.below(std::max<std::size_t>(1, max_nodes / 3));

    Hypergraph g;
    std::vector<NodeId> cat, prod, asp;
    for (std::size_t i = 0; i < categories; ++i)
        cat.push_back(g.add_node(NodeKind::Category, "c" + std::to_string(i)));
    for (std::size_t i = 0; i < products; ++i)
        prod.push_back(g.add_node(NodeKind::Product, "p" + std::to_string(i)));
    for (std::size_t i = 0; i < aspects; ++i)
        asp.push_back(g.add_node(NodeKind::Aspect, "a" + std::to_string(i)));

    auto weight = [&]() { return unit_weights ? 1.0 : 0.5 + 2.0 * rng.uniform(); };
    auto subset = [&](const std::vector<NodeId>& pool, std::size_t min_count) {
        const std::size_t count = min_count + rng.below(pool.size() - min_count + 1);
        std::vector<NodeId> out;
        for (std::size_t i : rng.sample_indices(pool.size(), count)) out.push_back(pool[i]);
        return out;
    };

    const std::size_t n_edges = 1 + rng.below(8);
    for (std::size_t e = 0; e < n_edges; ++e) {
        switch (rng.below(4)) {
            case 0:
            case 1: {  // session edge over >= 2 products
                auto members = subset(prod, 2);
                g.add_hyperedge(e % 2 ? HyperedgeKind::AlsoView : HyperedgeKind::AlsoBuy,
                                std::move(members), weight());
                break;
            }
            case 2: {  // one product + >= 1 aspects
                std::vector<NodeId> members{prod[rng.below(prod.size())]};
                for (NodeId a : subset(asp, 1)) members.push_back(a);
                g.add_hyperedge(HyperedgeKind::ProductAspects, std::move(members), weight());
                break;
            }
            default: {  // one category + products (+ maybe aspects)
                std::vector<NodeId> members{cat[rng.below(cat.size())]};
                for (NodeId p : subset(prod, 1)) members.push_back(p);
                if (rng.below(2))
                    for (NodeId a : subset(asp, 1)) members.push_back(a);
                g.add_hyperedge(HyperedgeKind::CategoryBundle, std::move(members), weight());
                break;
            }
        }
    }
    g.finalize();
    return g;
}

// The spec's toy corpus: 5 products, 2 categories, 6 distinct aspects,
// 3 sessions (one of which collapses below two known products).
inline std::vector<hyperpave::ingest::ProductRecord> toy_products() {
    using hyperpave::ingest::AspectPair;
    using hyperpave::ingest::ProductRecord;
    return {
        {"p1", "cat_a", "alpha", "first product", {{"color", "red"}, {"size", "small"}}},
        {"p2", "cat_a", "beta", "second product", {{"color", "red"}, {"material", "wood"}}},
        {"p3", "cat_b", "gamma", "third product", {{"color", "blue"}}},
        {"p4", "cat_b", "delta", "fourth product", {{"size", "large"}, {"finish", "matte"}}},
        {"p5", "cat_b", "epsilon", "fifth product", {{"size", "small"}}},
    };
}

inline std::vector<hyperpave::ingest::SessionRecord> toy_sessions() {
    using hyperpave::ingest::SessionKind;
    using hyperpave::ingest::SessionRecord;
    return {
        {"u1", SessionKind::View, {"p1", "p2", "p3"}},
        {"u2", SessionKind::Buy, {"p2", "p4"}},
        {"u3", SessionKind::View, {"p5", "missing_product"}},  // collapses, dropped
    };
}

inline Hypergraph toy_graph() {
    return hyperpave::ingest::build_graph(toy_products(), toy_sessions());
}

// Sparse random corpus: every product carries 1-3 aspects from a shared
// pool, so removing one aspect removes only a handful of products. Suited to
// the split tests.
struct Corpus {
    std::vector<hyperpave::ingest::ProductRecord> products;
    std::vector<hyperpave::ingest::SessionRecord> sessions;
};

inline Corpus sparse_corpus(std::uint64_t seed, std::size_t n_products = 24,
                            std::size_t n_aspects = 12, std::size_t n_categories = 3,
                            std::size_t n_sessions = 6) {
    using hyperpave::ingest::AspectPair;
    using hyperpave::ingest::ProductRecord;
    using hyperpave::ingest::SessionKind;
    using hyperpave::ingest::SessionRecord;
    Rng rng(hyperpave::derive_seed(seed, "sparse"));
    Corpus out;
    for (std::size_t j = 0; j < n_products; ++j) {
        ProductRecord rec;
        rec.product_key = "p" + std::to_string(j);
        rec.category_key = "cat" + std::to_string(rng.below(n_categories));
        rec.title = "product " + std::to_string(j);
        rec.description = "desc " + std::to_string(j);
        const std::size_t count = 1 + rng.below(3);
        for (std::size_t i : rng.sample_indices(n_aspects, count))
            rec.aspects.push_back(AspectPair{"attr" + std::to_string(i), "v" + std::to_string(i)});
        out.products.push_back(std::move(rec));
    }
    for (std::size_t s = 0; s < n_sessions; ++s) {
        SessionRecord rec;
        rec.user_key = "u" + std::to_string(s);
        rec.kind = s % 2 ? SessionKind::Buy : SessionKind::View;
        for (std::size_t i : rng.sample_indices(n_products, 2 + rng.below(3)))
            rec.product_keys.push_back("p" + std::to_string(i));
        out.sessions.push_back(std::move(rec));
    }
    return out;
}

// Cluster-planted synthetic: products and aspects carry a cluster id; a link
// exists iff the clusters match; features are noisy cluster centers. The
// holdout rows follow the same generating process but never appear in the
// training records.
struct Planted {
    std::vector<hyperpave::ingest::ProductRecord> products;  // training inventory
    std::vector<hyperpave::ingest::SessionRecord> sessions;
    std::vector<std::string> holdout_products;                // keys
    std::vector<std::string> holdout_aspects;                 // keys
    std::vector<std::string> holdout_product_category;        // parallel to holdout_products
    std::vector<std::pair<std::string, std::string>> holdout_links;  // (product, aspect) truths
    hyperpave::ingest::FeatureStore features;                 // covers every key
    std::size_t clusters = 3;
};

struct PlantedConfig {
    std::size_t n_products = 30;
    std::size_t n_aspects = 10;
    std::size_t n_holdout_products = 8;
    std::size_t n_holdout_aspects = 4;
    std::size_t feature_dim = 8;
    std::size_t clusters = 3;
    std::size_t categories = 2;
    double noise = 0.25;
};

inline Planted make_planted(std::uint64_t seed, const PlantedConfig& cfg = {}) {
    using hyperpave::ingest::AspectPair;
    using hyperpave::ingest::ProductRecord;
    using hyperpave::ingest::SessionKind;
    using hyperpave::ingest::SessionRecord;

    Rng rng(hyperpave::derive_seed(seed, "planted"));
    Planted out;
    out.clusters = cfg.clusters;
    out.features.dim = cfg.feature_dim;

    // orthonormal cluster centers (Gram-Schmidt over random draws)
    std::vector<std::vector<double>> centers;
    for (std::size_t c = 0; c < cfg.clusters; ++c) {
        std::vector<double> center(cfg.feature_dim);
        for (double& x : center) x = rng.normal();
        for (const auto& prev : centers) {
            double proj = 0.0;
            for (std::size_t i = 0; i < center.size(); ++i) proj += center[i] * prev[i];
            for (std::size_t i = 0; i < center.size(); ++i) center[i] -= proj * prev[i];
        }
        double norm = 0.0;
        for (double x : center) norm += x * x;
        norm = std::sqrt(norm);
        for (double& x : center) x /= norm;
        centers.push_back(std::move(center));
    }
    auto draw_feature = [&](std::size_t cluster) {
        std::vector<double> f(cfg.feature_dim);
        double norm = 0.0;
        for (std::size_t i = 0; i < f.size(); ++i) {
            f[i] = centers[cluster][i] + cfg.noise * rng.normal();
            norm += f[i] * f[i];
        }
        norm = std::sqrt(norm);
        for (double& x : f) x /= norm;
        return f;
    };

    auto aspect_attr = [](std::size_t i) { return "attr" + std::to_string(i); };
    auto aspect_value = [](std::size_t i) { return "v" + std::to_string(i); };
    auto aspect_cluster = [&](std::size_t i) { return i % cfg.clusters; };

    // Training aspects: features keyed by the global "attribute: value" key.
    for (std::size_t i = 0; i < cfg.n_aspects + cfg.n_holdout_aspects; ++i) {
        const std::string key =
            hyperpave::ingest::make_aspect_key(aspect_attr(i), aspect_value(i));
        out.features.entries[key] = draw_feature(aspect_cluster(i));
        if (i >= cfg.n_aspects) out.holdout_aspects.push_back(key);
    }

    auto category_of = [&](std::size_t j) { return "cat" + std::to_string(j % cfg.categories); };
    for (std::size_t j = 0; j < cfg.n_products + cfg.n_holdout_products; ++j) {
        const std::string key = "p" + std::to_string(j);
        const std::size_t cluster = j % cfg.clusters;
        out.features.entries[key] = draw_feature(cluster);
        const bool holdout = j >= cfg.n_products;
        if (holdout) {
            out.holdout_products.push_back(key);
            out.holdout_product_category.push_back(category_of(j));
            for (std::size_t i = 0; i < cfg.n_aspects + cfg.n_holdout_aspects; ++i)
                if (aspect_cluster(i) == cluster)
                    out.holdout_links.emplace_back(
                        key, hyperpave::ingest::make_aspect_key(aspect_attr(i), aspect_value(i)));
            continue;
        }
        ProductRecord rec;
        rec.product_key = key;
        rec.category_key = category_of(j);
        rec.title = "item " + std::to_string(j);
        rec.description = "cluster " + std::to_string(cluster);
        for (std::size_t i = 0; i < cfg.n_aspects; ++i)
            if (aspect_cluster(i) == cluster)
                rec.aspects.push_back(AspectPair{aspect_attr(i), aspect_value(i)});
        out.products.push_back(std::move(rec));
        // Seen products also truly link the holdout aspects of their cluster.
        for (std::size_t i = cfg.n_aspects; i < cfg.n_aspects + cfg.n_holdout_aspects; ++i)
            if (aspect_cluster(i) == cluster)
                out.holdout_links.emplace_back(
                    key, hyperpave::ingest::make_aspect_key(aspect_attr(i), aspect_value(i)));
    }

    // Category features.
    for (std::size_t c = 0; c < cfg.categories; ++c) {
        std::vector<double> f(cfg.feature_dim);
        double norm = 0.0;
        for (double& x : f) {
            x = rng.normal();
            norm += x * x;
        }
        norm = std::sqrt(norm);
        for (double& x : f) x /= norm;
        out.features.entries["cat" + std::to_string(c)] = std::move(f);
    }

    // Same-cluster browse/purchase sessions over training products.
    std::size_t user = 0;
    for (std::size_t c = 0; c < cfg.clusters; ++c) {
        std::vector<std::string> members;
        for (std::size_t j = 0; j < cfg.n_products; ++j)
            if (j % cfg.clusters == c) members.push_back("p" + std::to_string(j));
        if (members.size() < 2) continue;
        for (SessionKind kind : {SessionKind::View, SessionKind::Buy}) {
            std::vector<std::string> picked;
            const std::size_t want = std::min<std::size_t>(members.size(), 4);
            for (std::size_t i : rng.sample_indices(members.size(), want))
                picked.push_back(members[i]);
            out.sessions.push_back(SessionRecord{"u" + std::to_string(user++), kind, picked});
        }
    }
    return out;
}

inline EdgeId find_bundle(const Hypergraph& g, const std::string& category_key) {
    const auto cat = g.find(category_key);
    if (!cat) throw hyperpave::InvariantError("no such category: " + category_key);
    for (const auto& e : g.hyperedges())
        if (e.kind == HyperedgeKind::CategoryBundle && e.members.front() == *cat) return e.id;
    throw hyperpave::InvariantError("category has no bundle edge: " + category_key);
}

// Bundle for train(): the planted training graph with positives from its
// pair edges, negatives sampled at the given rate, and a held-in validation
// slice (every 5th candidate) scored on the training graph itself.
inline hyperpave::split::SplitBundle planted_bundle(const Planted& planted, std::uint64_t seed,
                                                    double negative_rate = 2.0) {
    using hyperpave::split::CandidateLink;
    using hyperpave::split::LinkLabel;
    hyperpave::split::SplitBundle bundle;
    bundle.config.seed = seed;
    bundle.config.negative_rate = negative_rate;
    bundle.train_graph = hyperpave::ingest::build_graph(planted.products, planted.sessions);

    std::vector<CandidateLink> positives;
    for (const auto& e : bundle.train_graph.pair_edges())
        if (e.kind == PairKind::ProductAspect)
            positives.push_back(CandidateLink{e.a, e.b, LinkLabel::Positive});
    auto negatives = hyperpave::split::sample_negatives(bundle.train_graph, positives,
                                                        negative_rate,
                                                        hyperpave::derive_seed(seed, "negs"));
    bundle.train_candidates = positives;
    bundle.train_candidates.insert(bundle.train_candidates.end(), negatives.begin(),
                                   negatives.end());

    bundle.val.graph = bundle.train_graph;
    for (std::size_t i = 0; i < bundle.train_candidates.size(); i += 5)
        bundle.val.candidates.push_back(bundle.train_candidates[i]);
    bundle.test.graph = bundle.train_graph;
    return bundle;
}

// Merged graph + candidates for the inductive zero-shot check: the holdout
// nodes join with features and category membership only, candidates are the
// holdout truths plus sampled same-universe non-links.
struct InductiveCase {
    Hypergraph merged;
    std::vector<hyperpave::split::CandidateLink> candidates;
};

inline InductiveCase make_inductive_case(const Planted& planted, const Hypergraph& train_graph,
                                         std::uint64_t seed, double negative_rate = 2.0) {
    using hyperpave::model::GraphDelta;
    using hyperpave::split::CandidateLink;
    using hyperpave::split::LinkLabel;

    GraphDelta delta;
    for (std::size_t i = 0; i < planted.holdout_products.size(); ++i) {
        const std::string& key = planted.holdout_products[i];
        const std::string& cat = planted.holdout_product_category[i];
        delta.nodes.push_back({NodeKind::Product, key});
        delta.join_hyperedges.emplace_back(find_bundle(train_graph, cat), key);
        delta.pair_edges.push_back({PairKind::CategoryProduct, cat, key});
    }
    // Holdout aspects join every category bundle whose products truly carry
    // them (inventory-style placement).
    for (const std::string& aspect : planted.holdout_aspects) {
        delta.nodes.push_back({NodeKind::Aspect, aspect});
        std::vector<std::string> cats;
        for (const auto& [pkey, akey] : planted.holdout_links) {
            if (akey != aspect) continue;
            std::string cat;
            for (std::size_t i = 0; i < planted.holdout_products.size(); ++i)
                if (planted.holdout_products[i] == pkey) cat = planted.holdout_product_category[i];
            if (cat.empty())
                if (auto pid = train_graph.find(pkey))
                    for (const auto& e : train_graph.pair_edges())
                        if (e.kind == PairKind::CategoryProduct && e.b == *pid)
                            cat = train_graph.key_of(e.a);
            if (!cat.empty() && std::find(cats.begin(), cats.end(), cat) == cats.end())
                cats.push_back(cat);
        }
        for (const std::string& cat : cats)
            delta.join_hyperedges.emplace_back(find_bundle(train_graph, cat), aspect);
    }

    // New products arrive with behavior data: session hyperedges mixing each
    // holdout product with seen products of its cluster.
    {
        Rng rng(hyperpave::derive_seed(seed, "holdout-sessions"));
        for (std::size_t i = 0; i < planted.holdout_products.size(); ++i) {
            const std::string& key = planted.holdout_products[i];
            const std::size_t cluster = std::stoul(key.substr(1)) % planted.clusters;
            std::vector<std::string> cluster_seen;
            for (const auto& rec : planted.products)
                if (std::stoul(rec.product_key.substr(1)) % planted.clusters == cluster)
                    cluster_seen.push_back(rec.product_key);
            if (cluster_seen.empty()) continue;
            for (auto kind : {HyperedgeKind::AlsoView, HyperedgeKind::AlsoBuy}) {
                hyperpave::model::GraphDelta::NewHyperedge session;
                session.kind = kind;
                session.member_keys.push_back(key);
                const std::size_t want = std::min<std::size_t>(cluster_seen.size(), 3);
                for (std::size_t j : rng.sample_indices(cluster_seen.size(), want))
                    session.member_keys.push_back(cluster_seen[j]);
                delta.hyperedges.push_back(std::move(session));
            }
        }
    }

    InductiveCase out;
    out.merged = hyperpave::model::apply_delta(train_graph, delta);
    (void)negative_rate;

    auto id_of = [&](const std::string& key) {
        auto id = out.merged.find(key);
        if (!id) throw hyperpave::InvariantError("missing key in merged graph: " + key);
        return *id;
    };
    // Products carrying an unseen aspect are held out with it, so the
    // zero-shot candidates are exactly the held-out product x held-out
    // aspect pairs; the complete truth table keeps the readout exhaustive.
    std::unordered_set<std::uint64_t> truth;
    for (const auto& [pkey, akey] : planted.holdout_links) {
        if (std::find(planted.holdout_products.begin(), planted.holdout_products.end(), pkey) ==
            planted.holdout_products.end())
            continue;
        if (std::find(planted.holdout_aspects.begin(), planted.holdout_aspects.end(), akey) ==
            planted.holdout_aspects.end())
            continue;
        truth.insert((static_cast<std::uint64_t>(id_of(pkey)) << 32) | id_of(akey));
    }
    for (const std::string& pkey : planted.holdout_products)
        for (const std::string& akey : planted.holdout_aspects) {
            const NodeId p = id_of(pkey), a = id_of(akey);
            const bool linked = truth.count((static_cast<std::uint64_t>(p) << 32) | a) != 0;
            out.candidates.push_back(
                CandidateLink{p, a, linked ? LinkLabel::Positive : LinkLabel::Negative});
        }
    return out;
}

}  // namespace fixtures

#endif  // HYPERPAVE_TESTS_FIXTURES_HPP
