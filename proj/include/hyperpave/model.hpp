// model.hpp - projection, per-channel attention message passing, fusion,
// final GNN layers, cosine link scoring and loss
#ifndef HYPERPAVE_MODEL_HPP
#define HYPERPAVE_MODEL_HPP

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "hyperpave/autodiff.hpp"
#include "hyperpave/hypergraph.hpp"
#include "hyperpave/ingest.hpp"
#include "hyperpave/split.hpp"

namespace hyperpave::model {

using split::CandidateLink;

struct ModelConfig {
    std::size_t dim = 16;          // hidden size (768 at paper scale)
    std::size_t heads = 4;         // attention heads; dim % heads == 0
    std::size_t hyper_layers = 1;  // message-passing rounds per channel
    std::size_t gnn_layers = 2;    // final GNN layers over pairwise edges
    double leaky_slope = 0.2;
    double dropout = 0.5;
    std::size_t neighbor_cap = 20;  // per-hyperedge member subsample cap (training only)

    std::size_t head_dim() const { return dim / heads; }
    void validate() const;
};

// Convex mixing coefficients combining per-channel embeddings. Products use
// alpha (product_aspects), beta (category_bundle) and gamma splitting the
// remaining mass between also_view / also_buy; aspects use delta between
// product_aspects and category_bundle.
struct FusionWeights {
    double alpha = 0.25;
    double beta = 0.25;
    double gamma = 0.5;
    double delta = 0.5;
    void validate() const;
};

// All trainable tensors in a fixed, named order (checkpoint order).
class ModelParams {
public:
    ModelParams() = default;
    static ModelParams init(const ModelConfig& config, std::size_t feature_dim,
                            std::uint64_t seed);

    const ModelConfig& config() const { return config_; }
    std::size_t feature_dim() const { return feature_dim_; }

    autodiff::Param& proj_w(NodeKind k) { return params_[proj_index(k)]; }
    autodiff::Param& proj_b(NodeKind k) { return params_[proj_index(k) + 1]; }
    autodiff::Param& msg_node_w(std::size_t ch, std::size_t layer, std::size_t head);
    autodiff::Param& attn_node(std::size_t ch, std::size_t layer, std::size_t head);  // w1
    autodiff::Param& msg_edge_w(std::size_t ch, std::size_t layer, std::size_t head);
    autodiff::Param& attn_pair(std::size_t ch, std::size_t layer, std::size_t head);  // w2
    autodiff::Param& gnn_w(std::size_t layer);
    const autodiff::Param& proj_w(NodeKind k) const { return params_[proj_index(k)]; }
    const autodiff::Param& proj_b(NodeKind k) const { return params_[proj_index(k) + 1]; }
    const autodiff::Param& msg_node_w(std::size_t ch, std::size_t layer, std::size_t head) const;
    const autodiff::Param& attn_node(std::size_t ch, std::size_t layer, std::size_t head) const;
    const autodiff::Param& msg_edge_w(std::size_t ch, std::size_t layer, std::size_t head) const;
    const autodiff::Param& attn_pair(std::size_t ch, std::size_t layer, std::size_t head) const;
    const autodiff::Param& gnn_w(std::size_t layer) const;

    std::span<autodiff::Param> all() { return params_; }
    std::span<const autodiff::Param> all() const { return params_; }
    void zero_grads();
    double grad_norm() const;
    double value_norm() const;
    std::uint64_t checksum() const;  // over raw parameter bytes

    // Versioned binary checkpoint; round-trips bit-exactly.
    void save(const std::string& path) const;
    static ModelParams load(const std::string& path);

private:
    static std::size_t proj_index(NodeKind k) { return static_cast<std::size_t>(k) * 2; }
    std::size_t mp_index(std::size_t ch, std::size_t layer, std::size_t head,
                         std::size_t which) const;
    std::size_t gnn_index(std::size_t layer) const;

    ModelConfig config_;
    std::size_t feature_dim_ = 0;
    std::vector<autodiff::Param> params_;
};

class GraphIndex;

struct ForwardOptions {
    bool training = false;        // enables dropout + neighbor_cap subsampling
    std::uint64_t mask_seed = 0;  // seeds dropout masks and member subsampling
    // Links hidden from message passing (pairwise edges + product_aspects
    // memberships). Ignored when a prebuilt index is supplied.
    std::span<const CandidateLink> exclude_pairs = {};
    const GraphIndex* index = nullptr;  // reuse a prebuilt index across calls
};

// Canonical per-graph orderings: members and neighbors are aggregated in
// node-key order, so scores do not depend on node insertion order.
class GraphIndex {
public:
    struct Channel {
        std::vector<EdgeId> edges;
        std::vector<std::vector<NodeId>> members;         // per edge, key-sorted
        std::vector<std::vector<std::size_t>> incident;   // per node: indexes into edges
    };

    explicit GraphIndex(const Hypergraph& g,
                        std::span<const CandidateLink> exclude_pairs = {});

    const Hypergraph& graph() const { return *g_; }
    const Channel& channel(HyperedgeKind kind) const {
        return channels_[static_cast<std::size_t>(kind)];
    }
    const std::vector<std::vector<NodeId>>& gnn_neighbors() const { return gnn_neighbors_; }

private:
    const Hypergraph* g_;
    std::array<Channel, kHyperedgeKinds> channels_;
    std::vector<std::vector<NodeId>> gnn_neighbors_;  // per node, key-sorted
};

// Post-softmax attention rows, one per aggregation, for invariant checks.
struct AttentionTrace {
    std::vector<std::vector<double>> rows;
};

// --- tape-level operations (training path and gradient checking) -----------

// h_v = tanh(W_kind f_v + b_kind) per node.
std::vector<autodiff::Var> init_embeddings(autodiff::Tape& tape, const Hypergraph& g,
                                           const ingest::FeatureStore& features,
                                           ModelParams& params);

// Node-to-hyperedge attention aggregation for one channel/layer. Returns one
// embedding per channel edge (aligned with GraphIndex::Channel::edges).
std::vector<autodiff::Var> node_to_edge(autodiff::Tape& tape,
                                        std::span<const autodiff::Var> node_embs,
                                        const GraphIndex& index, HyperedgeKind kind,
                                        std::size_t layer, ModelParams& params,
                                        const ForwardOptions& options,
                                        AttentionTrace* trace = nullptr);

// Hyperedge-to-node attention aggregation; nodes without incident channel
// edges keep their embedding unchanged.
std::vector<autodiff::Var> edge_to_node(autodiff::Tape& tape,
                                        std::span<const autodiff::Var> node_embs,
                                        std::span<const autodiff::Var> edge_embs,
                                        const GraphIndex& index, HyperedgeKind kind,
                                        std::size_t layer, ModelParams& params,
                                        const ForwardOptions& options,
                                        AttentionTrace* trace = nullptr);

// Convex fusion across the four channels (per node kind).
std::vector<autodiff::Var> fuse(autodiff::Tape& tape,
                                const std::array<std::vector<autodiff::Var>, kHyperedgeKinds>&
                                    per_channel,
                                const Hypergraph& g, const FusionWeights& fw);

// L layers of mean-neighbor aggregation over the pairwise C-P / P-A edges.
std::vector<autodiff::Var> final_gnn(autodiff::Tape& tape,
                                     std::span<const autodiff::Var> fused,
                                     const GraphIndex& index, ModelParams& params,
                                     const ForwardOptions& options);

// Cosine similarity of the final product and aspect embeddings.
autodiff::Var score_link(autodiff::Tape& tape, autodiff::Var product_emb,
                         autodiff::Var aspect_emb);

// Mean BCE over candidates after mapping scores to (0,1) via s -> (s+1)/2.
autodiff::Var candidate_loss(autodiff::Tape& tape, std::span<const autodiff::Var> score_vars,
                             std::span<const double> labels);

struct ForwardResult {
    std::vector<double> scores;           // cosine scores per candidate
    std::vector<autodiff::Var> score_vars;
    autodiff::Var loss;                   // valid only when labels were given
};

// Full pipeline on one tape: init -> per-channel message passing -> fuse ->
// final GNN -> per-candidate scores (+ loss when labels are given).
ForwardResult forward(autodiff::Tape& tape, const Hypergraph& g,
                      const ingest::FeatureStore& features, ModelParams& params,
                      const FusionWeights& fw, std::span<const CandidateLink> candidates,
                      const ForwardOptions& options, std::span<const double> labels = {});

// --- no-grad inference path -------------------------------------------------

// Computes the per-channel embeddings once; scores() then only re-runs
// fusion + final GNN + cosine, which makes fusion sweeps cheap. Numerically
// identical to the tape path at dropout 0.
class EvalForward {
public:
    EvalForward(const Hypergraph& g, const ingest::FeatureStore& features,
                const ModelParams& params, std::span<const CandidateLink> exclude_pairs = {});

    std::vector<double> scores(const FusionWeights& fw,
                               std::span<const CandidateLink> candidates) const;

private:
    const ModelParams* params_;
    GraphIndex index_;
    std::array<std::vector<std::vector<double>>, kHyperedgeKinds> channel_embs_;
};

// --- inductive inference ------------------------------------------------

// Additions for unseen nodes: the node list, memberships joined into
// existing hyperedges of the base graph, new pairwise edges, and optional
// new hyperedges. All references are by key so ids stay internal.
struct GraphDelta {
    struct NewNode {
        NodeKind kind;
        std::string key;
    };
    struct NewPair {
        PairKind kind;
        std::string a, b;
    };
    struct NewHyperedge {
        HyperedgeKind kind;
        std::vector<std::string> member_keys;
        double weight = 1.0;
    };
    std::vector<NewNode> nodes;
    std::vector<std::pair<EdgeId, std::string>> join_hyperedges;  // base edge id, node key
    std::vector<NewPair> pair_edges;
    std::vector<NewHyperedge> hyperedges;
};

// New graph with base ids preserved and new nodes appended.
Hypergraph apply_delta(const Hypergraph& base, const GraphDelta& delta);

// Frozen-parameter scoring on an updated graph; candidates use the merged
// graph's node ids. Parameters are read-only by contract.
std::vector<double> inductive_update(const ModelParams& params, const FusionWeights& fw,
                                     const Hypergraph& merged,
                                     const ingest::FeatureStore& features,
                                     std::span<const CandidateLink> candidates);

}  // namespace hyperpave::model

#endif  // HYPERPAVE_MODEL_HPP
