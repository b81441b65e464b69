#include "hyperpave/hypergraph.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <unordered_set>

namespace hyperpave {

const char* to_string(NodeKind k) {
    switch (k) {
        case NodeKind::Category: return "category";
        case NodeKind::Product: return "product";
        case NodeKind::Aspect: return "aspect";
    }
    return "?";
}

const char* to_string(HyperedgeKind k) {
    switch (k) {
        case HyperedgeKind::AlsoView: return "also_view";
        case HyperedgeKind::AlsoBuy: return "also_buy";
        case HyperedgeKind::ProductAspects: return "product_aspects";
        case HyperedgeKind::CategoryBundle: return "category_bundle";
    }
    return "?";
}

void Hypergraph::require_mutable() const {
    if (finalized_) throw InvariantError("Hypergraph is immutable after finalize()");
}

void Hypergraph::require_finalized() const {
    if (!finalized_) throw InvariantError("Hypergraph must be finalized first");
}

NodeId Hypergraph::add_node(NodeKind kind, std::string key) {
    require_mutable();
    if (key_to_id_.count(key))
        throw InvariantError("duplicate node key: " + key);
    NodeId id = static_cast<NodeId>(node_kinds_.size());
    key_to_id_.emplace(key, id);
    node_kinds_.push_back(kind);
    node_keys_.push_back(std::move(key));
    return id;
}

EdgeId Hypergraph::add_hyperedge(HyperedgeKind kind, std::vector<NodeId> members, double weight) {
    require_mutable();
    if (members.empty()) throw InvariantError("hyperedge must have members");
    if (!(weight > 0.0)) throw InvariantError("hyperedge weight must be positive");
    std::unordered_set<NodeId> seen;
    for (NodeId v : members) {
        if (v >= node_kinds_.size())
            throw InvariantError("hyperedge member " + std::to_string(v) + " does not exist");
        if (!seen.insert(v).second)
            throw InvariantError("hyperedge has duplicate member " + std::to_string(v));
    }
    EdgeId id = static_cast<EdgeId>(edges_.size());
    edges_.push_back(Hyperedge{id, kind, std::move(members), weight});
    return id;
}

void Hypergraph::add_pair_edge(PairKind kind, NodeId a, NodeId b) {
    require_mutable();
    if (a >= node_kinds_.size() || b >= node_kinds_.size())
        throw InvariantError("pair edge endpoint does not exist");
    pairs_.push_back(PairEdge{kind, a, b});
}

namespace {

void validate_edge_typing(const Hypergraph& g, const Hyperedge& e) {
    std::size_t categories = 0, products = 0, aspects = 0;
    for (NodeId v : e.members) {
        switch (g.kind_of(v)) {
            case NodeKind::Category: ++categories; break;
            case NodeKind::Product: ++products; break;
            case NodeKind::Aspect: ++aspects; break;
        }
    }
    const std::string where = std::string(to_string(e.kind)) + " hyperedge " + std::to_string(e.id);
    switch (e.kind) {
        case HyperedgeKind::AlsoView:
        case HyperedgeKind::AlsoBuy:
            if (products != e.members.size())
                throw InvariantError(where + ": members must all be products");
            break;
        case HyperedgeKind::ProductAspects:
            if (products != 1 || categories != 0 || aspects < 1)
                throw InvariantError(where + ": needs exactly one product and at least one aspect");
            break;
        case HyperedgeKind::CategoryBundle:
            if (categories != 1 || products < 1)
                throw InvariantError(where + ": needs exactly one category and at least one product");
            break;
    }
}

}  // namespace

void Hypergraph::finalize() {
    require_mutable();
    node_edges_.assign(node_kinds_.size(), {});
    for (const Hyperedge& e : edges_) {
        validate_edge_typing(*this, e);
        for (NodeId v : e.members) node_edges_[v].push_back(e.id);
    }
    for (const PairEdge& p : pairs_) {
        const bool ok = p.kind == PairKind::CategoryProduct
                            ? kind_of(p.a) == NodeKind::Category && kind_of(p.b) == NodeKind::Product
                            : kind_of(p.a) == NodeKind::Product && kind_of(p.b) == NodeKind::Aspect;
        if (!ok) throw InvariantError("pair edge endpoints have wrong node kinds");
    }
    finalized_ = true;
}

std::optional<NodeId> Hypergraph::find(const std::string& key) const {
    auto it = key_to_id_.find(key);
    if (it == key_to_id_.end()) return std::nullopt;
    return it->second;
}

std::span<const EdgeId> Hypergraph::incident_edges(NodeId v) const {
    require_finalized();
    return node_edges_.at(v);
}

std::size_t Hypergraph::count_nodes(NodeKind k) const {
    std::size_t n = 0;
    for (NodeKind kind : node_kinds_) n += kind == k;
    return n;
}

std::size_t Hypergraph::count_hyperedges(HyperedgeKind k) const {
    std::size_t n = 0;
    for (const Hyperedge& e : edges_) n += e.kind == k;
    return n;
}

std::size_t Hypergraph::count_pair_edges(PairKind k) const {
    std::size_t n = 0;
    for (const PairEdge& p : pairs_) n += p.kind == k;
    return n;
}

bool Hypergraph::is_heterogeneous() const {
    bool nk[3] = {false, false, false};
    for (NodeKind k : node_kinds_) nk[static_cast<int>(k)] = true;
    bool ek[kHyperedgeKinds] = {};
    for (const Hyperedge& e : edges_) ek[static_cast<int>(e.kind)] = true;
    std::size_t kinds = 0;
    for (bool b : nk) kinds += b;
    for (bool b : ek) kinds += b;
    return kinds > 2;
}

IncidenceMatrix incidence_matrix(const Hypergraph& g, std::optional<HyperedgeKind> kind_filter) {
    IncidenceMatrix h;
    h.rows = g.node_count();
    for (const Hyperedge& e : g.hyperedges()) {
        if (kind_filter && e.kind != *kind_filter) continue;
        h.edge_ids.push_back(e.id);
        h.col_members.push_back(e.members);
        h.edge_weights.push_back(e.weight);
    }
    return h;
}

DegreeVectors degree_matrices(const IncidenceMatrix& h) {
    DegreeVectors d;
    d.node.assign(h.rows, 0.0);
    d.edge.assign(h.cols(), 0.0);
    for (std::size_t c = 0; c < h.cols(); ++c) {
        d.edge[c] = static_cast<double>(h.col_members[c].size());
        for (NodeId v : h.col_members[c]) d.node[v] += h.edge_weights[c];
    }
    return d;
}

DenseMatrix normalized_adjacency(const Hypergraph& g, std::optional<HyperedgeKind> kind_filter) {
    const IncidenceMatrix h = incidence_matrix(g, kind_filter);
    const DegreeVectors d = degree_matrices(h);
    std::vector<double> inv_sqrt(h.rows, 0.0);
    for (std::size_t v = 0; v < h.rows; ++v)
        if (d.node[v] > 0.0) inv_sqrt[v] = 1.0 / std::sqrt(d.node[v]);

    DenseMatrix a(h.rows, h.rows);
    for (std::size_t c = 0; c < h.cols(); ++c) {
        const double scale = h.edge_weights[c] / d.edge[c];
        for (NodeId u : h.col_members[c])
            for (NodeId v : h.col_members[c])
                a.at(u, v) += scale * inv_sqrt[u] * inv_sqrt[v];
    }
    return a;
}

ChannelView::ChannelView(const Hypergraph& g, HyperedgeKind kind) : g_(&g), kind_(kind) {
    if (!g.finalized()) throw InvariantError("ChannelView needs a finalized graph");
    node_incident_.assign(g.node_count(), {});
    for (const Hyperedge& e : g.hyperedges()) {
        if (e.kind != kind) continue;
        const std::size_t col = edge_ids_.size();
        edge_ids_.push_back(e.id);
        for (NodeId v : e.members) node_incident_[v].push_back(col);
    }
}

std::span<const std::size_t> ChannelView::incident(NodeId v) const {
    return node_incident_.at(v);
}

namespace {

constexpr const char* kGraphMagic = "HGAVE1";

std::string format_weight(double w) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", w);
    return buf;
}

char node_kind_char(NodeKind k) {
    switch (k) {
        case NodeKind::Category: return 'C';
        case NodeKind::Product: return 'P';
        case NodeKind::Aspect: return 'A';
    }
    return '?';
}

NodeKind node_kind_from_char(char c) {
    switch (c) {
        case 'C': return NodeKind::Category;
        case 'P': return NodeKind::Product;
        case 'A': return NodeKind::Aspect;
    }
    throw InputError(std::string("bad node kind char '") + c + "' in graph file");
}

char edge_kind_char(HyperedgeKind k) {
    switch (k) {
        case HyperedgeKind::AlsoView: return 'V';
        case HyperedgeKind::AlsoBuy: return 'B';
        case HyperedgeKind::ProductAspects: return 'P';
        case HyperedgeKind::CategoryBundle: return 'C';
    }
    return '?';
}

HyperedgeKind edge_kind_from_char(char c) {
    switch (c) {
        case 'V': return HyperedgeKind::AlsoView;
        case 'B': return HyperedgeKind::AlsoBuy;
        case 'P': return HyperedgeKind::ProductAspects;
        case 'C': return HyperedgeKind::CategoryBundle;
    }
    throw InputError(std::string("bad hyperedge kind char '") + c + "' in graph file");
}

std::vector<std::string> split_tabs(const std::string& line) {
    std::vector<std::string> fields;
    std::size_t start = 0;
    for (;;) {
        std::size_t pos = line.find('\t', start);
        if (pos == std::string::npos) {
            fields.push_back(line.substr(start));
            return fields;
        }
        fields.push_back(line.substr(start, pos - start));
        start = pos + 1;
    }
}

}  // namespace

void save_graph(const Hypergraph& g, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw InputError("cannot open graph file for writing: " + path);
    out << kGraphMagic << "\n";
    out << "nodes " << g.node_count() << "\n";
    for (NodeId v = 0; v < g.node_count(); ++v)
        out << v << '\t' << node_kind_char(g.kind_of(v)) << '\t' << escape_field(g.key_of(v)) << "\n";
    out << "hyperedges " << g.hyperedge_count() << "\n";
    for (const Hyperedge& e : g.hyperedges()) {
        out << e.id << '\t' << edge_kind_char(e.kind) << '\t' << format_weight(e.weight) << '\t';
        for (std::size_t i = 0; i < e.members.size(); ++i) {
            if (i) out << ',';
            out << e.members[i];
        }
        out << "\n";
    }
    out << "pairs " << g.pair_edges().size() << "\n";
    for (const PairEdge& p : g.pair_edges())
        out << (p.kind == PairKind::CategoryProduct ? "CP" : "PA") << '\t' << p.a << '\t' << p.b
            << "\n";
    out << "end\n";
    if (!out) throw InputError("write failed for graph file: " + path);
}

Hypergraph load_graph(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DependencyError("graph file not found: " + path + " (run the build command first)");
    std::string line;
    if (!std::getline(in, line) || line != kGraphMagic)
        throw DependencyError("graph file " + path + " has wrong magic header (expected " +
                              kGraphMagic + ")");

    auto expect_section = [&](const char* name) -> std::size_t {
        if (!std::getline(in, line)) throw InputError("truncated graph file: " + path);
        std::istringstream ss(line);
        std::string word;
        std::size_t n = 0;
        if (!(ss >> word >> n) || word != name)
            throw InputError("graph file " + path + ": expected '" + name + "' section");
        return n;
    };

    Hypergraph g;
    const std::size_t n_nodes = expect_section("nodes");
    for (std::size_t i = 0; i < n_nodes; ++i) {
        if (!std::getline(in, line)) throw InputError("truncated node table in " + path);
        auto fields = split_tabs(line);
        if (fields.size() != 3 || fields[1].size() != 1)
            throw InputError("malformed node line in " + path + ": " + line);
        NodeId id = g.add_node(node_kind_from_char(fields[1][0]), unescape_field(fields[2]));
        if (id != static_cast<NodeId>(std::stoul(fields[0])))
            throw InputError("non-contiguous node ids in " + path);
    }
    const std::size_t n_edges = expect_section("hyperedges");
    for (std::size_t i = 0; i < n_edges; ++i) {
        if (!std::getline(in, line)) throw InputError("truncated hyperedge table in " + path);
        auto fields = split_tabs(line);
        if (fields.size() != 4 || fields[1].size() != 1)
            throw InputError("malformed hyperedge line in " + path + ": " + line);
        std::vector<NodeId> members;
        std::istringstream ms(fields[3]);
        std::string tok;
        while (std::getline(ms, tok, ','))
            members.push_back(static_cast<NodeId>(std::stoul(tok)));
        EdgeId id = g.add_hyperedge(edge_kind_from_char(fields[1][0]), std::move(members),
                                    std::stod(fields[2]));
        if (id != static_cast<EdgeId>(std::stoul(fields[0])))
            throw InputError("non-contiguous hyperedge ids in " + path);
    }
    const std::size_t n_pairs = expect_section("pairs");
    for (std::size_t i = 0; i < n_pairs; ++i) {
        if (!std::getline(in, line)) throw InputError("truncated pair table in " + path);
        auto fields = split_tabs(line);
        if (fields.size() != 3) throw InputError("malformed pair line in " + path + ": " + line);
        PairKind kind;
        if (fields[0] == "CP") kind = PairKind::CategoryProduct;
        else if (fields[0] == "PA") kind = PairKind::ProductAspect;
        else throw InputError("bad pair kind in " + path + ": " + fields[0]);
        g.add_pair_edge(kind, static_cast<NodeId>(std::stoul(fields[1])),
                        static_cast<NodeId>(std::stoul(fields[2])));
    }
    if (!std::getline(in, line) || line != "end")
        throw InputError("graph file " + path + " missing end marker");
    g.finalize();
    return g;
}

}  // namespace hyperpave
