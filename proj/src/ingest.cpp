#include "hyperpave/ingest.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <unordered_set>

#include <json.hpp>

namespace hyperpave::ingest {

using nlohmann::json;

namespace {

json parse_line(const std::string& path, std::size_t line_no, const std::string& line) {
    json j = json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object())
        throw InputError(path + ":" + std::to_string(line_no) + ": not a JSON object");
    return j;
}

std::string want_string(const json& j, const char* field, const std::string& where,
                        bool required) {
    auto it = j.find(field);
    if (it == j.end()) {
        if (required) throw InputError(where + ": missing field '" + field + "'");
        return {};
    }
    if (!it->is_string()) throw InputError(where + ": field '" + field + "' must be a string");
    return it->get<std::string>();
}

}  // namespace

std::vector<ProductRecord> read_products(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open products file: " + path);
    std::vector<ProductRecord> out;
    std::unordered_set<std::string> seen_keys;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        const std::string where = path + ":" + std::to_string(line_no);
        json j = parse_line(path, line_no, line);
        ProductRecord rec;
        rec.product_key = want_string(j, "product_key", where, true);
        rec.category_key = want_string(j, "category_key", where, true);
        rec.title = want_string(j, "title", where, false);
        rec.description = want_string(j, "description", where, false);
        if (rec.product_key.empty() || rec.category_key.empty())
            throw InputError(where + ": product_key and category_key must be non-empty");
        if (!seen_keys.insert(rec.product_key).second)
            throw InputError(where + ": duplicate product_key '" + rec.product_key + "'");
        if (auto it = j.find("aspects"); it != j.end()) {
            if (!it->is_array()) throw InputError(where + ": 'aspects' must be an array");
            for (const json& a : *it) {
                if (!a.is_object()) throw InputError(where + ": aspect entries must be objects");
                AspectPair pair;
                pair.attribute = want_string(a, "attribute", where, true);
                pair.value = want_string(a, "value", where, true);
                if (pair.attribute.empty() || pair.value.empty())
                    throw InputError(where + ": aspect attribute and value must be non-empty");
                rec.aspects.push_back(std::move(pair));
            }
        }
        out.push_back(std::move(rec));
    }
    return out;
}

std::vector<SessionRecord> read_sessions(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open sessions file: " + path);
    std::vector<SessionRecord> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        const std::string where = path + ":" + std::to_string(line_no);
        json j = parse_line(path, line_no, line);
        SessionRecord rec;
        rec.user_key = want_string(j, "user_key", where, true);
        const std::string kind = want_string(j, "kind", where, true);
        if (kind == "view") rec.kind = SessionKind::View;
        else if (kind == "buy") rec.kind = SessionKind::Buy;
        else throw InputError(where + ": kind must be 'view' or 'buy', got '" + kind + "'");
        auto it = j.find("product_keys");
        if (it == j.end() || !it->is_array())
            throw InputError(where + ": missing 'product_keys' array");
        std::unordered_set<std::string> seen;
        for (const json& k : *it) {
            if (!k.is_string()) throw InputError(where + ": product_keys must be strings");
            std::string key = k.get<std::string>();
            if (seen.insert(key).second) rec.product_keys.push_back(std::move(key));
        }
        out.push_back(std::move(rec));
    }
    return out;
}

std::string make_aspect_key(const std::string& attribute, const std::string& value) {
    return attribute + ": " + value;
}

std::string expand_aspect_text(const std::string& attribute, const std::string& value) {
    return attribute + " is " + value;
}

Hypergraph build_graph(const std::vector<ProductRecord>& products,
                       const std::vector<SessionRecord>& sessions, BuildStats* stats) {
    Hypergraph g;
    BuildStats local;

    // Nodes, in record order: category on first sight, then the product,
    // then any new aspects. Ids are therefore a pure function of input order.
    for (const ProductRecord& p : products) {
        if (!g.find(p.category_key)) g.add_node(NodeKind::Category, p.category_key);
        g.add_node(NodeKind::Product, p.product_key);
        for (const AspectPair& a : p.aspects) {
            const std::string key = make_aspect_key(a.attribute, a.value);
            if (!g.find(key)) g.add_node(NodeKind::Aspect, key);
        }
    }

    struct CategoryAccum {
        NodeId id;
        std::vector<NodeId> products;
        std::vector<NodeId> aspects;  // first-seen order
        std::unordered_set<NodeId> aspect_set;
    };
    std::vector<CategoryAccum> categories;
    std::unordered_map<NodeId, std::size_t> category_index;

    // Per-product hyperedges and pairwise edges.
    for (const ProductRecord& p : products) {
        const NodeId cat = *g.find(p.category_key);
        const NodeId prod = *g.find(p.product_key);
        auto [it, fresh] = category_index.try_emplace(cat, categories.size());
        if (fresh) categories.push_back(CategoryAccum{cat, {}, {}, {}});
        CategoryAccum& acc = categories[it->second];
        acc.products.push_back(prod);

        std::vector<NodeId> members{prod};
        std::unordered_set<NodeId> in_edge;
        for (const AspectPair& a : p.aspects) {
            const NodeId asp = *g.find(make_aspect_key(a.attribute, a.value));
            if (!in_edge.insert(asp).second) continue;  // duplicate pair within one record
            members.push_back(asp);
            if (acc.aspect_set.insert(asp).second) acc.aspects.push_back(asp);
        }
        if (members.size() > 1) g.add_hyperedge(HyperedgeKind::ProductAspects, members);
        g.add_pair_edge(PairKind::CategoryProduct, cat, prod);
        for (std::size_t i = 1; i < members.size(); ++i)
            g.add_pair_edge(PairKind::ProductAspect, prod, members[i]);
    }

    // One bundle per category: category + its products + their aspects.
    for (const CategoryAccum& acc : categories) {
        std::vector<NodeId> members{acc.id};
        members.insert(members.end(), acc.products.begin(), acc.products.end());
        members.insert(members.end(), acc.aspects.begin(), acc.aspects.end());
        g.add_hyperedge(HyperedgeKind::CategoryBundle, members);
    }

    // One hyperedge per session; unresolved keys are dropped, sessions left
    // with fewer than two products are dropped entirely.
    for (const SessionRecord& s : sessions) {
        std::vector<NodeId> members;
        for (const std::string& key : s.product_keys) {
            auto id = g.find(key);
            if (id && g.kind_of(*id) == NodeKind::Product) members.push_back(*id);
            else ++local.dropped_session_keys;
        }
        if (members.size() < 2) {
            ++local.dropped_sessions;
            continue;
        }
        g.add_hyperedge(s.kind == SessionKind::View ? HyperedgeKind::AlsoView
                                                    : HyperedgeKind::AlsoBuy,
                        std::move(members));
    }

    g.finalize();
    local.categories = g.count_nodes(NodeKind::Category);
    local.products = g.count_nodes(NodeKind::Product);
    local.aspects = g.count_nodes(NodeKind::Aspect);
    if (g.node_count() != local.categories + local.products + local.aspects)
        throw InvariantError("node count mismatch after build");
    if (!products.empty() && !g.is_heterogeneous())
        throw InvariantError("built graph is not heterogeneous");
    if (stats) *stats = local;
    return g;
}

PayloadMap text_payloads(const std::vector<ProductRecord>& products) {
    PayloadMap payloads;
    for (const ProductRecord& p : products) {
        payloads.emplace(p.category_key, p.category_key);
        payloads.emplace(p.product_key, "[CLS] " + p.title + " [SEP] " + p.description);
        for (const AspectPair& a : p.aspects)
            payloads.emplace(make_aspect_key(a.attribute, a.value),
                             expand_aspect_text(a.attribute, a.value));
    }
    return payloads;
}

std::vector<double> fallback_featurize(const std::string& text, std::size_t dim,
                                       std::uint64_t seed, bool* empty_flag) {
    if (dim < 1) throw InvariantError("fallback_featurize: dim must be >= 1");
    std::vector<double> v(dim, 0.0);
    if (empty_flag) *empty_flag = false;

    std::size_t tokens = 0;
    std::string token;
    auto flush = [&]() {
        if (token.empty()) return;
        ++tokens;
        const std::uint64_t h = fnv1a64(token, seed ^ 0xa076'1d64'78bd'642fULL);
        v[h % dim] += (h & 0x8000'0000'0000'0000ULL) ? -1.0 : 1.0;
        token.clear();
    };
    for (char c : text) {
        if (std::isalnum(static_cast<unsigned char>(c)))
            token += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
        else
            flush();
    }
    flush();

    if (tokens == 0) {
        if (empty_flag) *empty_flag = true;
        return v;  // zero vector, flagged
    }
    double norm_sq = 0.0;
    for (double x : v) norm_sq += x * x;
    if (norm_sq == 0.0) {
        // Signs cancelled exactly; pin one deterministic coordinate instead.
        v[fnv1a64(text, seed) % dim] = 1.0;
        norm_sq = 1.0;
    }
    const double inv = 1.0 / std::sqrt(norm_sq);
    for (double& x : v) x *= inv;
    return v;
}

const std::vector<double>& FeatureStore::at(const std::string& key) const {
    auto it = entries.find(key);
    if (it == entries.end())
        throw InvariantError("no feature vector for node key '" + key + "'");
    return it->second;
}

namespace {

FeatureStore read_feature_file(const std::string& path, LoadStats& stats) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open features file: " + path);
    std::string line;
    if (!std::getline(in, line) || line.rfind("dim=", 0) != 0)
        throw InputError(path + ":1: expected header 'dim=<d>'");
    FeatureStore store;
    try {
        store.dim = std::stoul(line.substr(4));
    } catch (const std::exception&) {
        throw InputError(path + ":1: bad dim value '" + line.substr(4) + "'");
    }
    if (store.dim < 1) throw InputError(path + ":1: dim must be >= 1");

    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        const std::string where = path + ":" + std::to_string(line_no);
        const std::size_t tab = line.find('\t');
        if (tab == std::string::npos) throw InputError(where + ": expected key<TAB>values");
        std::string key = line.substr(0, tab);
        std::vector<double> vec;
        vec.reserve(store.dim);
        std::istringstream vs(line.substr(tab + 1));
        std::string tok;
        while (std::getline(vs, tok, ',')) {
            try {
                std::size_t used = 0;
                double x = std::stod(tok, &used);
                if (used != tok.size()) throw std::invalid_argument(tok);
                vec.push_back(x);
            } catch (const std::exception&) {
                throw InputError(where + ": bad float '" + tok + "'");
            }
        }
        if (vec.size() != store.dim)
            throw InputError(where + ": record has " + std::to_string(vec.size()) +
                             " values, declared dim is " + std::to_string(store.dim));
        for (double x : vec)
            if (!std::isfinite(x)) throw InputError(where + ": non-finite feature value");
        ++stats.file_records;
        store.entries[std::move(key)] = std::move(vec);
    }
    return store;
}

}  // namespace

FeatureStore load_features(const std::optional<std::string>& path, const Hypergraph& g,
                           const PayloadMap& payloads, std::size_t fallback_dim,
                           std::uint64_t seed, LoadStats* stats) {
    LoadStats local;
    FeatureStore file_store;
    if (path) file_store = read_feature_file(*path, local);
    else file_store.dim = fallback_dim;
    if (file_store.dim < 1) throw InputError("feature dimension must be >= 1");

    FeatureStore out;
    out.dim = file_store.dim;
    for (NodeId v = 0; v < g.node_count(); ++v) {
        const std::string& key = g.key_of(v);
        if (auto it = file_store.entries.find(key); it != file_store.entries.end()) {
            out.entries[key] = it->second;
            ++local.matched;
            continue;
        }
        auto pit = payloads.find(key);
        const std::string& text = pit != payloads.end() ? pit->second : key;
        bool empty = false;
        out.entries[key] = fallback_featurize(text, out.dim, seed, &empty);
        ++local.fallback;
        if (empty) ++local.empty_texts;
    }
    if (stats) *stats = local;
    return out;
}

void write_features(const std::string& path, const FeatureStore& store) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw InputError("cannot open features file for writing: " + path);
    out << "dim=" << store.dim << "\n";
    std::map<std::string, const std::vector<double>*> sorted;
    for (const auto& [key, vec] : store.entries) sorted.emplace(key, &vec);
    char buf[64];
    for (const auto& [key, vec] : sorted) {
        out << key << '\t';
        for (std::size_t i = 0; i < vec->size(); ++i) {
            std::snprintf(buf, sizeof(buf), "%.17g", (*vec)[i]);
            if (i) out << ',';
            out << buf;
        }
        out << "\n";
    }
}

}  // namespace hyperpave::ingest
