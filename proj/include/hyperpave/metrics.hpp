// metrics.hpp - ranking evaluation over per-product candidate scores
#ifndef HYPERPAVE_METRICS_HPP
#define HYPERPAVE_METRICS_HPP

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace hyperpave::metrics {

struct Candidate {
    std::string aspect_key;
    double score = 0.0;  // probability-space score in (0,1)
    int label = 0;       // 1 positive, 0 negative
};

// Candidates grouped per product. Ties rank by aspect key so orderings (and
// hence reports) are reproducible.
struct ScoredCandidates {
    std::map<std::string, std::vector<Candidate>> per_product;

    void add(const std::string& product_key, std::string aspect_key, double score, int label);
    std::size_t candidate_count() const;
    std::size_t positive_count() const;

    // Score-descending, aspect-key-ascending ordering of one product's list.
    static std::vector<Candidate> ranked(const std::vector<Candidate>& list);
};

// Unweighted mean of per-aspect F1 at threshold tau (predict positive when
// score >= tau). Aspects with neither a positive label nor a predicted
// positive are excluded from the mean.
double macro_f1(const ScoredCandidates& scored, double threshold);

// Threshold from the observed score values maximizing macro_f1
// (lowest such threshold on ties).
double best_threshold(const ScoredCandidates& scored);

// Mean over products with at least one positive of the average precision of
// the ranked list; products without positives are excluded.
double mean_average_precision(const ScoredCandidates& scored);

// Mann-Whitney AUC over the flat candidate list; ties count one half.
double auc(const ScoredCandidates& scored);

double mrr(const ScoredCandidates& scored);
double ndcg_at_k(const ScoredCandidates& scored, std::size_t k);
double hits_at_k(const ScoredCandidates& scored, std::size_t k);

struct EvalReport {
    double macro_f1 = 0.0;
    double map = 0.0;
    double auc = 0.0;
    double mrr = 0.0;
    std::map<std::size_t, double> ndcg;   // k -> value
    std::map<std::size_t, double> hits;   // k -> value
    double threshold = 0.5;

    // support block
    std::size_t products = 0;         // products with candidates
    std::size_t products_ranked = 0;  // products entering the ranking denominators
    std::size_t candidates = 0;
    std::size_t positives = 0;
    std::size_t negatives = 0;

    std::string to_json() const;     // machine-readable, values in [0,1]
    std::string render_table() const;  // percent-scaled text table
};

// Full metric bundle. When no threshold is given, the macro-F1 threshold is
// selected from this candidate set itself (use the validation split's
// threshold for test reports).
EvalReport evaluate(const ScoredCandidates& scored,
                    std::span<const std::size_t> ks = std::span<const std::size_t>(),
                    std::optional<double> threshold = std::nullopt);

}  // namespace hyperpave::metrics

#endif  // HYPERPAVE_METRICS_HPP
