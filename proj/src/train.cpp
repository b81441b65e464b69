#include "hyperpave/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>

namespace hyperpave::train {

namespace ad = hyperpave::autodiff;
using model::CandidateLink;
using model::EvalForward;
using model::ForwardOptions;
using model::FusionWeights;
using model::ModelParams;
using split::LinkLabel;

void TrainConfig::validate() const {
    if (!(learning_rate > 0.0)) throw InvariantError("learning_rate must be positive");
    if (!(weight_decay >= 0.0)) throw InvariantError("weight_decay must be non-negative");
    if (batch_size < 1) throw InvariantError("batch_size must be >= 1");
    if (patience < 1) throw InvariantError("patience must be >= 1");
    if (!(fusion_resolution > 0.0 && fusion_resolution <= 1.0))
        throw InvariantError("fusion_resolution must be in (0, 1]");
    if (val_metric != "map" && val_metric != "auc" && val_metric != "f1")
        throw InvariantError("val_metric must be one of map, auc, f1");
}

void adamw_step(std::span<ad::Param> params, AdamWState& state, double lr, double weight_decay,
                double beta1, double beta2, double eps) {
    if (state.m.empty()) {
        state.m.reserve(params.size());
        state.v.reserve(params.size());
        for (const ad::Param& p : params) {
            state.m.emplace_back(p.value.shape());
            state.v.emplace_back(p.value.shape());
        }
    }
    if (state.m.size() != params.size())
        throw InvariantError("adamw_step: state does not match the parameter list");

    for (const ad::Param& p : params)
        for (double g : p.grad.values())
            if (!std::isfinite(g)) {
                ++state.skipped;
                return;  // skip the whole step
            }

    ++state.step;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(state.step));
    for (std::size_t i = 0; i < params.size(); ++i) {
        ad::Param& p = params[i];
        ad::Tensor& m = state.m[i];
        ad::Tensor& v = state.v[i];
        for (std::size_t j = 0; j < p.value.size(); ++j) {
            const double g = p.grad[j];
            m[j] = beta1 * m[j] + (1.0 - beta1) * g;
            v[j] = beta2 * v[j] + (1.0 - beta2) * g * g;
            const double mhat = m[j] / bc1;
            const double vhat = v[j] / bc2;
            p.value[j] -= lr * (mhat / (std::sqrt(vhat) + eps) + weight_decay * p.value[j]);
        }
    }
}

metrics::ScoredCandidates score_candidates(const Hypergraph& g,
                                           std::span<const CandidateLink> candidates,
                                           std::span<const double> cosine_scores) {
    if (candidates.size() != cosine_scores.size())
        throw InvariantError("score_candidates: candidate/score count mismatch");
    metrics::ScoredCandidates scored;
    for (std::size_t i = 0; i < candidates.size(); ++i) {
        const CandidateLink& c = candidates[i];
        scored.add(g.key_of(c.product), g.key_of(c.aspect), 0.5 * (cosine_scores[i] + 1.0),
                   c.label == LinkLabel::Positive ? 1 : 0);
    }
    return scored;
}

double metric_by_name(const std::string& name, const metrics::ScoredCandidates& scored) {
    if (name == "map") return metrics::mean_average_precision(scored);
    if (name == "auc") return metrics::auc(scored);
    if (name == "f1") return metrics::macro_f1(scored, metrics::best_threshold(scored));
    throw InvariantError("unknown validation metric '" + name + "'");
}

TrainResult train(const split::SplitBundle& bundle, const ingest::FeatureStore& features,
                  const model::ModelConfig& mc, const TrainConfig& tc) {
    mc.validate();
    tc.validate();
    if (bundle.train_candidates.empty())
        throw InputError("train: the bundle has no training candidates");

    ModelParams params = ModelParams::init(mc, features.dim, derive_seed(tc.seed, "init"));
    const FusionWeights train_fw{};  // defaults while training; tuned afterwards

    std::vector<double> labels(bundle.train_candidates.size());
    for (std::size_t i = 0; i < labels.size(); ++i)
        labels[i] = bundle.train_candidates[i].label == LinkLabel::Positive ? 1.0 : 0.0;

    // Supervision links are hidden from message passing for the whole run:
    // scored pairs must be separated by features and surrounding structure,
    // which is what inductive inference sees for unseen nodes.
    const model::GraphIndex train_index(bundle.train_graph, bundle.train_candidates);

    TrainResult result;
    result.history.best_val = -std::numeric_limits<double>::infinity();
    ModelParams best = params;
    std::size_t best_epoch = 0;
    bool have_best = false;
    std::size_t stale = 0;
    AdamWState opt_state;

    std::vector<std::size_t> order(bundle.train_candidates.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    for (std::size_t epoch = 0; epoch < tc.max_epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        Rng shuffle_rng(derive_seed(tc.seed, "shuffle", epoch));
        shuffle_rng.shuffle(order);
        ForwardOptions opts;
        opts.training = true;
        opts.mask_seed = derive_seed(tc.seed, "mask", epoch);
        opts.index = &train_index;

        double loss_sum = 0.0;
        std::size_t batches = 0;
        for (std::size_t at = 0; at < order.size(); at += tc.batch_size) {
            const std::size_t end = std::min(order.size(), at + tc.batch_size);
            std::vector<CandidateLink> batch;
            std::vector<double> batch_labels;
            batch.reserve(end - at);
            for (std::size_t i = at; i < end; ++i) {
                batch.push_back(bundle.train_candidates[order[i]]);
                batch_labels.push_back(labels[order[i]]);
            }
            ad::Tape tape;
            auto fwd = model::forward(tape, bundle.train_graph, features, params, train_fw,
                                      batch, opts, batch_labels);
            params.zero_grads();
            tape.backward(fwd.loss);
            adamw_step(params.all(), opt_state, tc.learning_rate, tc.weight_decay, tc.adam_beta1,
                       tc.adam_beta2, tc.adam_eps);
            loss_sum += tape.value(fwd.loss)[0];
            ++batches;
        }

        double val = 0.0;
        if (!bundle.val.candidates.empty()) {
            EvalForward ef(bundle.val.graph, features, params, bundle.val.candidates);
            auto scores = ef.scores(train_fw, bundle.val.candidates);
            val = metric_by_name(tc.val_metric,
                                 score_candidates(bundle.val.graph, bundle.val.candidates,
                                                  scores));
        }

        EpochStats stats;
        stats.epoch = epoch;
        stats.train_loss = batches ? loss_sum / static_cast<double>(batches) : 0.0;
        stats.val_metric = val;
        stats.param_norm = params.value_norm();
        stats.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
                            .count();
        result.history.epochs.push_back(stats);

        if (val > result.history.best_val) {
            result.history.best_val = val;
            best = params;
            best_epoch = epoch;
            have_best = true;
            stale = 0;
        } else {
            ++stale;
            if (stale >= tc.patience) break;
        }
    }

    result.params = have_best ? std::move(best) : std::move(params);
    result.history.best_epoch = best_epoch;
    result.history.adamw_skipped = opt_state.skipped;
    if (result.history.best_val == -std::numeric_limits<double>::infinity())
        result.history.best_val = 0.0;

    FusionSweep sweep = fusion_grid_search(result.params, bundle, features,
                                           tc.fusion_resolution, tc.val_metric);
    result.fusion = sweep.best;
    return result;
}

FusionSweep fusion_grid_search(const ModelParams& params, const split::SplitBundle& bundle,
                               const ingest::FeatureStore& features, double resolution,
                               const std::string& metric) {
    if (!(resolution > 0.0 && resolution <= 1.0))
        throw InvariantError("fusion_grid_search: resolution must be in (0, 1]");
    FusionSweep sweep;
    if (bundle.val.candidates.empty()) {
        sweep.empty_validation = true;  // uniform defaults, nothing to score
        return sweep;
    }

    const auto steps = static_cast<std::size_t>(std::llround(1.0 / resolution));
    auto grid_value = [&](std::size_t i) {
        return static_cast<double>(i) / static_cast<double>(steps);
    };

    EvalForward ef(bundle.val.graph, features, params, bundle.val.candidates);
    sweep.best_metric = -std::numeric_limits<double>::infinity();
    for (std::size_t ia = 0; ia <= steps; ++ia)
        for (std::size_t ib = 0; ia + ib <= steps; ++ib)
            for (std::size_t ig = 0; ig <= steps; ++ig)
                for (std::size_t id = 0; id <= steps; ++id) {
                    FusionWeights fw;
                    fw.alpha = grid_value(ia);
                    fw.beta = grid_value(ib);
                    fw.gamma = grid_value(ig);
                    fw.delta = grid_value(id);
                    auto scores = ef.scores(fw, bundle.val.candidates);
                    const double m = metric_by_name(
                        metric, score_candidates(bundle.val.graph, bundle.val.candidates,
                                                 scores));
                    sweep.table.push_back(SweepRow{fw, m});
                    if (m > sweep.best_metric) {
                        sweep.best_metric = m;
                        sweep.best = fw;
                    }
                }
    return sweep;
}

}  // namespace hyperpave::train
