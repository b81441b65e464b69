// train.hpp - optimization loop, early stopping, fusion-weight grid search
#ifndef HYPERPAVE_TRAIN_HPP
#define HYPERPAVE_TRAIN_HPP

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "hyperpave/metrics.hpp"
#include "hyperpave/model.hpp"
#include "hyperpave/split.hpp"

namespace hyperpave::train {

struct TrainConfig {
    double learning_rate = 5e-3;  // paper grid: {5e-1, 5e-3, 5e-4, 5e-5}
    double weight_decay = 1e-6;
    std::size_t batch_size = 4;
    std::size_t max_epochs = 200;
    std::size_t patience = 20;
    std::uint64_t seed = 0;
    double fusion_resolution = 0.25;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    std::string val_metric = "map";  // map | auc | f1

    void validate() const;
};

struct AdamWState {
    std::vector<autodiff::Tensor> m;
    std::vector<autodiff::Tensor> v;
    std::size_t step = 0;
    std::size_t skipped = 0;  // steps skipped because of non-finite gradients
};

// One decoupled-weight-decay adaptive-moment update over all parameters,
// reading gradients from the Param grad slots. A non-finite gradient skips
// the whole step and bumps the skip counter.
void adamw_step(std::span<autodiff::Param> params, AdamWState& state, double lr,
                double weight_decay, double beta1 = 0.9, double beta2 = 0.999,
                double eps = 1e-8);

struct EpochStats {
    std::size_t epoch = 0;
    double train_loss = 0.0;
    double val_metric = 0.0;
    double param_norm = 0.0;
    double seconds = 0.0;  // wall clock; reported outside the deterministic artifacts
};

struct TrainHistory {
    std::vector<EpochStats> epochs;
    std::size_t best_epoch = 0;
    double best_val = 0.0;
    std::size_t adamw_skipped = 0;
};

struct TrainResult {
    model::ModelParams params;   // best-validation checkpoint
    model::FusionWeights fusion; // grid-searched on validation
    TrainHistory history;
};

// Mini-batched BCE training over the bundle's train candidates, validates by
// frozen-parameter inference on the validation side each epoch, early-stops
// after `patience` non-improving epochs, and finishes with the fusion grid
// search.
TrainResult train(const split::SplitBundle& bundle, const ingest::FeatureStore& features,
                  const model::ModelConfig& mc, const TrainConfig& tc);

struct SweepRow {
    model::FusionWeights fw;
    double metric = 0.0;
};

struct FusionSweep {
    model::FusionWeights best;
    double best_metric = 0.0;
    std::vector<SweepRow> table;
    bool empty_validation = false;
};

// Exhaustive grid over valid (alpha, beta, gamma, delta) at the given
// resolution, scored on the validation candidates; first tuple wins ties.
FusionSweep fusion_grid_search(const model::ModelParams& params,
                               const split::SplitBundle& bundle,
                               const ingest::FeatureStore& features, double resolution,
                               const std::string& metric = "map");

// Cosine scores -> probability-space ScoredCandidates keyed by node keys.
metrics::ScoredCandidates score_candidates(const Hypergraph& g,
                                           std::span<const model::CandidateLink> candidates,
                                           std::span<const double> cosine_scores);

// map | auc | f1 (f1 at its best threshold) over a scored candidate set.
double metric_by_name(const std::string& name, const metrics::ScoredCandidates& scored);

}  // namespace hyperpave::train

#endif  // HYPERPAVE_TRAIN_HPP
