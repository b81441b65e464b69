// hypergraph.hpp - typed heterogeneous hypergraph and its linear-algebra views
#ifndef HYPERPAVE_HYPERGRAPH_HPP
#define HYPERPAVE_HYPERGRAPH_HPP

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "hyperpave/common.hpp"

namespace hyperpave {

using NodeId = std::uint32_t;
using EdgeId = std::uint32_t;

enum class NodeKind : std::uint8_t { Category = 0, Product = 1, Aspect = 2 };

// The four hyperedge channels: two from user sessions (all-product members),
// one per product ({product} + its aspects), one per category
// ({category} + its products + their aspects).
enum class HyperedgeKind : std::uint8_t {
    AlsoView = 0,
    AlsoBuy = 1,
    ProductAspects = 2,
    CategoryBundle = 3
};
inline constexpr std::size_t kHyperedgeKinds = 4;

enum class PairKind : std::uint8_t { CategoryProduct = 0, ProductAspect = 1 };

const char* to_string(NodeKind k);
const char* to_string(HyperedgeKind k);

struct Hyperedge {
    EdgeId id = 0;
    HyperedgeKind kind = HyperedgeKind::AlsoView;
    std::vector<NodeId> members;  // insertion order, no duplicates
    double weight = 1.0;
};

struct PairEdge {
    PairKind kind = PairKind::CategoryProduct;
    NodeId a = 0;  // category or product
    NodeId b = 0;  // product or aspect
};

// Immutable after finalize(). Node ids are dense and assigned in insertion
// order; external string keys map to ids through a stable dictionary.
class Hypergraph {
public:
    NodeId add_node(NodeKind kind, std::string key);
    EdgeId add_hyperedge(HyperedgeKind kind, std::vector<NodeId> members, double weight = 1.0);
    void add_pair_edge(PairKind kind, NodeId a, NodeId b);

    // Validates membership typing and builds the incidence index. Must be
    // called exactly once; mutation afterwards throws.
    void finalize();
    bool finalized() const { return finalized_; }

    std::size_t node_count() const { return node_kinds_.size(); }
    std::size_t hyperedge_count() const { return edges_.size(); }

    NodeKind kind_of(NodeId v) const { return node_kinds_.at(v); }
    const std::string& key_of(NodeId v) const { return node_keys_.at(v); }
    std::optional<NodeId> find(const std::string& key) const;

    const std::vector<Hyperedge>& hyperedges() const { return edges_; }
    const Hyperedge& hyperedge(EdgeId e) const { return edges_.at(e); }
    const std::vector<PairEdge>& pair_edges() const { return pairs_; }

    // Edge ids incident to a node, ascending.
    std::span<const EdgeId> incident_edges(NodeId v) const;

    std::size_t count_nodes(NodeKind k) const;
    std::size_t count_hyperedges(HyperedgeKind k) const;
    std::size_t count_pair_edges(PairKind k) const;

    // Distinct node kinds present + distinct hyperedge kinds present > 2.
    // Ingest-built graphs always satisfy this; tiny single-kind test graphs
    // legitimately do not, so it is a query rather than a finalize() check.
    bool is_heterogeneous() const;

private:
    void require_mutable() const;
    void require_finalized() const;

    std::vector<NodeKind> node_kinds_;
    std::vector<std::string> node_keys_;
    std::unordered_map<std::string, NodeId> key_to_id_;
    std::vector<Hyperedge> edges_;
    std::vector<PairEdge> pairs_;
    std::vector<std::vector<EdgeId>> node_edges_;  // built by finalize()
    bool finalized_ = false;
};

// Sparse |V| x |E| binary incidence: one column per selected hyperedge,
// holding the member row indices. Dense only in test oracles.
struct IncidenceMatrix {
    std::size_t rows = 0;
    std::vector<EdgeId> edge_ids;                 // column -> hyperedge id
    std::vector<std::vector<NodeId>> col_members; // column -> member rows
    std::vector<double> edge_weights;             // column -> w_e

    std::size_t cols() const { return edge_ids.size(); }
};

struct DegreeVectors {
    std::vector<double> node;  // Dv diagonal: sum_e w_e H(v,e)
    std::vector<double> edge;  // De diagonal: |members|
};

// Row-major dense matrix, used for the normalized adjacency and by oracles.
struct DenseMatrix {
    std::size_t rows = 0, cols = 0;
    std::vector<double> data;

    DenseMatrix() = default;
    DenseMatrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}
    double& at(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    double at(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
};

// H(v,e) = 1 iff v is a member of e, restricted to kind_filter when given.
IncidenceMatrix incidence_matrix(const Hypergraph& g,
                                 std::optional<HyperedgeKind> kind_filter = std::nullopt);

// Dv(i,i) = sum_e W(e) H(i,e); De(i,i) = sum_v H(v,i). Isolated nodes get 0.
DegreeVectors degree_matrices(const IncidenceMatrix& h);

// A = Dv^{-1/2} H W De^{-1} H^T Dv^{-1/2}, with 0 in place of 1/sqrt(0) for
// isolated nodes (Moore-Penrose convention), so the map is total.
DenseMatrix normalized_adjacency(const Hypergraph& g,
                                 std::optional<HyperedgeKind> kind_filter = std::nullopt);

// Read-only view of one hyperedge channel: all nodes, edges of one kind.
class ChannelView {
public:
    ChannelView(const Hypergraph& g, HyperedgeKind kind);

    const Hypergraph& graph() const { return *g_; }
    HyperedgeKind kind() const { return kind_; }
    const std::vector<EdgeId>& edges() const { return edge_ids_; }
    std::size_t edge_count() const { return edge_ids_.size(); }

    // Indices into edges() for the channel edges incident to v.
    std::span<const std::size_t> incident(NodeId v) const;

private:
    const Hypergraph* g_;
    HyperedgeKind kind_;
    std::vector<EdgeId> edge_ids_;
    std::vector<std::vector<std::size_t>> node_incident_;
};

inline ChannelView subgraph_channel(const Hypergraph& g, HyperedgeKind kind) {
    return ChannelView(g, kind);
}

// Line-based serialization, "HGAVE1" magic header. Byte-stable for a given
// graph, so identical builds produce identical files.
void save_graph(const Hypergraph& g, const std::string& path);
Hypergraph load_graph(const std::string& path);

}  // namespace hyperpave

#endif  // HYPERPAVE_HYPERGRAPH_HPP
