// split.hpp - multi-label zero-shot data sampling over the hypergraph
#ifndef HYPERPAVE_SPLIT_HPP
#define HYPERPAVE_SPLIT_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "hyperpave/hypergraph.hpp"

namespace hyperpave::split {

struct SplitConfig {
    std::size_t n_unseen = 1;      // unseen aspect count N
    double negative_rate = 2.0;    // negatives per positive
    std::uint64_t seed = 0;
};

enum class LinkLabel : std::uint8_t { Negative = 0, Positive = 1 };

struct CandidateLink {
    NodeId product = 0;
    NodeId aspect = 0;
    LinkLabel label = LinkLabel::Negative;
};

// One zero-shot side (validation or test): the evaluation graph is the
// training graph with this side's unseen aspects and removed products added
// back carrying only category membership (category bundle + C-P pair edges);
// the removed product-aspect links never re-enter the structure.
struct SplitSide {
    Hypergraph graph;
    std::vector<CandidateLink> candidates;      // node ids of `graph`
    std::vector<std::string> unseen_aspects;    // node keys
    std::vector<std::string> removed_products;  // node keys
};

struct SplitBundle {
    SplitConfig config;
    Hypergraph train_graph;
    std::vector<CandidateLink> train_candidates;  // node ids of train_graph
    SplitSide val;
    SplitSide test;
    std::size_t negative_shortfall = 0;  // times the non-edge complement ran out
};

// Algorithm: draw N aspects; per aspect collect the products still linked to
// it, record the positive links, remove aspect + products + links from the
// working graph; aspects alternate validation (even index) / test (odd).
// Negatives are then sampled uniformly over non-edges among each side's
// visible nodes, and train candidates get ceil(rate * positives) negatives
// over the training graph's non-edges.
SplitBundle zero_shot_split(const Hypergraph& g, const SplitConfig& cfg);

// Uniform (product, aspect) non-edges of g, without duplicates,
// count = ceil(rate * |positives|) capped at the complement size
// (sets *shortfall when capped).
std::vector<CandidateLink> sample_negatives(const Hypergraph& g,
                                            const std::vector<CandidateLink>& positives,
                                            double rate, std::uint64_t seed,
                                            bool* shortfall = nullptr);

// Manifest carrying seed, config, unseen/removed keys and candidate triples;
// together with the original graph it reproduces the bundle exactly.
void save_manifest(const SplitBundle& bundle, const std::string& path);
SplitBundle load_split(const Hypergraph& original, const std::string& manifest_path);

}  // namespace hyperpave::split

#endif  // HYPERPAVE_SPLIT_HPP
