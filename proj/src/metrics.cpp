#include "hyperpave/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <set>
#include <sstream>

#include <json.hpp>

#include "hyperpave/common.hpp"

namespace hyperpave::metrics {

void ScoredCandidates::add(const std::string& product_key, std::string aspect_key, double score,
                           int label) {
    if (!std::isfinite(score)) throw InvariantError("candidate score is not finite");
    if (label != 0 && label != 1) throw InvariantError("candidate label must be 0 or 1");
    per_product[product_key].push_back(Candidate{std::move(aspect_key), score, label});
}

std::size_t ScoredCandidates::candidate_count() const {
    std::size_t n = 0;
    for (const auto& [key, list] : per_product) n += list.size();
    return n;
}

std::size_t ScoredCandidates::positive_count() const {
    std::size_t n = 0;
    for (const auto& [key, list] : per_product)
        for (const Candidate& c : list) n += c.label;
    return n;
}

std::vector<Candidate> ScoredCandidates::ranked(const std::vector<Candidate>& list) {
    std::vector<Candidate> out = list;
    std::sort(out.begin(), out.end(), [](const Candidate& a, const Candidate& b) {
        if (a.score != b.score) return a.score > b.score;
        return a.aspect_key < b.aspect_key;
    });
    return out;
}

double macro_f1(const ScoredCandidates& scored, double threshold) {
    if (!(threshold > 0.0 && threshold < 1.0))
        throw InvariantError("macro_f1 threshold must be inside (0, 1)");
    if (scored.positive_count() == 0)
        throw InvariantError("macro_f1 needs at least one positive candidate");
    struct Counts {
        std::size_t tp = 0, fp = 0, fn = 0;
    };
    std::map<std::string, Counts> per_aspect;
    for (const auto& [product, list] : scored.per_product)
        for (const Candidate& c : list) {
            Counts& ct = per_aspect[c.aspect_key];
            const bool predicted = c.score >= threshold;
            if (predicted && c.label) ++ct.tp;
            else if (predicted) ++ct.fp;
            else if (c.label) ++ct.fn;
        }
    double sum = 0.0;
    std::size_t used = 0;
    for (const auto& [aspect, ct] : per_aspect) {
        if (ct.tp + ct.fp + ct.fn == 0) continue;  // no predictions, no positives
        ++used;
        const double denom = static_cast<double>(2 * ct.tp + ct.fp + ct.fn);
        sum += denom > 0.0 ? 2.0 * static_cast<double>(ct.tp) / denom : 0.0;
    }
    return used ? sum / static_cast<double>(used) : 0.0;
}

double best_threshold(const ScoredCandidates& scored) {
    std::set<double> values;
    for (const auto& [product, list] : scored.per_product)
        for (const Candidate& c : list)
            if (c.score > 0.0 && c.score < 1.0) values.insert(c.score);
    if (values.empty()) return 0.5;
    double best_tau = 0.0, best = -1.0;
    for (double tau : values) {  // ascending: lowest threshold wins ties
        const double f1 = macro_f1(scored, tau);
        if (f1 > best) {
            best = f1;
            best_tau = tau;
        }
    }
    return best_tau;
}

double mean_average_precision(const ScoredCandidates& scored) {
    double sum = 0.0;
    std::size_t products = 0;
    for (const auto& [product, list] : scored.per_product) {
        const auto ranked = ScoredCandidates::ranked(list);
        std::size_t positives = 0;
        double ap = 0.0;
        for (std::size_t i = 0; i < ranked.size(); ++i)
            if (ranked[i].label) {
                ++positives;
                ap += static_cast<double>(positives) / static_cast<double>(i + 1);
            }
        if (positives == 0) continue;
        sum += ap / static_cast<double>(positives);
        ++products;
    }
    if (products == 0)
        throw InvariantError("mean_average_precision: no product has a positive candidate");
    return sum / static_cast<double>(products);
}

double auc(const ScoredCandidates& scored) {
    std::vector<std::pair<double, int>> flat;
    for (const auto& [product, list] : scored.per_product)
        for (const Candidate& c : list) flat.emplace_back(c.score, c.label);
    std::size_t p = 0, n = 0;
    for (auto& [s, l] : flat) (l ? p : n) += 1;
    if (p == 0 || n == 0)
        throw InvariantError("auc needs both a positive and a negative candidate");
    std::sort(flat.begin(), flat.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });
    // average ranks over tie groups
    double rank_sum_pos = 0.0;
    std::size_t i = 0;
    while (i < flat.size()) {
        std::size_t j = i;
        while (j < flat.size() && flat[j].first == flat[i].first) ++j;
        const double avg_rank = 0.5 * static_cast<double>(i + 1 + j);  // ranks are 1-based
        for (std::size_t t = i; t < j; ++t)
            if (flat[t].second) rank_sum_pos += avg_rank;
        i = j;
    }
    const double pd = static_cast<double>(p), nd = static_cast<double>(n);
    return (rank_sum_pos - pd * (pd + 1.0) / 2.0) / (pd * nd);
}

double mrr(const ScoredCandidates& scored) {
    double sum = 0.0;
    std::size_t products = 0;
    for (const auto& [product, list] : scored.per_product) {
        const auto ranked = ScoredCandidates::ranked(list);
        for (std::size_t i = 0; i < ranked.size(); ++i)
            if (ranked[i].label) {
                sum += 1.0 / static_cast<double>(i + 1);
                ++products;
                break;
            }
    }
    if (products == 0) throw InvariantError("mrr: no product has a positive candidate");
    return sum / static_cast<double>(products);
}

double ndcg_at_k(const ScoredCandidates& scored, std::size_t k) {
    if (k < 1) throw InvariantError("ndcg_at_k: k must be >= 1");
    double sum = 0.0;
    std::size_t products = 0;
    for (const auto& [product, list] : scored.per_product) {
        const auto ranked = ScoredCandidates::ranked(list);
        std::size_t positives = 0;
        for (const Candidate& c : ranked) positives += c.label;
        if (positives == 0) continue;
        double dcg = 0.0;
        for (std::size_t i = 0; i < std::min(k, ranked.size()); ++i)
            dcg += ranked[i].label / std::log2(static_cast<double>(i + 2));
        double idcg = 0.0;
        for (std::size_t i = 0; i < std::min(k, positives); ++i)
            idcg += 1.0 / std::log2(static_cast<double>(i + 2));
        sum += dcg / idcg;
        ++products;
    }
    if (products == 0) throw InvariantError("ndcg_at_k: no product has a positive candidate");
    return sum / static_cast<double>(products);
}

double hits_at_k(const ScoredCandidates& scored, std::size_t k) {
    if (k < 1) throw InvariantError("hits_at_k: k must be >= 1");
    std::size_t hits = 0, products = 0;
    for (const auto& [product, list] : scored.per_product) {
        const auto ranked = ScoredCandidates::ranked(list);
        std::size_t positives = 0;
        for (const Candidate& c : ranked) positives += c.label;
        if (positives == 0) continue;
        ++products;
        for (std::size_t i = 0; i < std::min(k, ranked.size()); ++i)
            if (ranked[i].label) {
                ++hits;
                break;
            }
    }
    if (products == 0) throw InvariantError("hits_at_k: no product has a positive candidate");
    return static_cast<double>(hits) / static_cast<double>(products);
}

EvalReport evaluate(const ScoredCandidates& scored, std::span<const std::size_t> ks,
                    std::optional<double> threshold) {
    static const std::size_t default_ks[] = {5, 10, 100};
    if (ks.empty()) ks = default_ks;

    EvalReport r;
    r.threshold = threshold ? *threshold : best_threshold(scored);
    r.macro_f1 = macro_f1(scored, r.threshold);
    r.map = mean_average_precision(scored);
    r.auc = auc(scored);
    r.mrr = mrr(scored);
    for (std::size_t k : ks) {
        r.ndcg[k] = ndcg_at_k(scored, k);
        r.hits[k] = hits_at_k(scored, k);
    }
    r.products = scored.per_product.size();
    for (const auto& [product, list] : scored.per_product) {
        bool has_pos = false;
        for (const Candidate& c : list) has_pos |= c.label == 1;
        r.products_ranked += has_pos;
    }
    r.candidates = scored.candidate_count();
    r.positives = scored.positive_count();
    r.negatives = r.candidates - r.positives;
    return r;
}

std::string EvalReport::to_json() const {
    nlohmann::json j;
    j["macro_f1"] = macro_f1;
    j["map"] = map;
    j["auc"] = auc;
    j["mrr"] = mrr;
    for (const auto& [k, v] : ndcg) j["ndcg"]["@" + std::to_string(k)] = v;
    for (const auto& [k, v] : hits) j["hits"]["@" + std::to_string(k)] = v;
    j["threshold"] = threshold;
    j["support"] = {{"products", products},
                    {"products_ranked", products_ranked},
                    {"candidates", candidates},
                    {"positives", positives},
                    {"negatives", negatives}};
    return j.dump(2);
}

std::string EvalReport::render_table() const {
    auto pct = [](double v) {
        char buf[32];
        std::snprintf(buf, sizeof(buf), "%.2f", v * 100.0);
        return std::string(buf);
    };
    std::ostringstream out;
    out << "F1 / mAP (%):  " << pct(macro_f1) << " / " << pct(map) << "\n";
    out << "AUC (%):       " << pct(auc) << "\n";
    out << "MRR (%):       " << pct(mrr) << "\n";
    for (const auto& [k, v] : ndcg) out << "NDCG@" << k << " (%):   " << pct(v) << "\n";
    for (const auto& [k, v] : hits) out << "Hits@" << k << " (%):   " << pct(v) << "\n";
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.6f", threshold);
    out << "threshold:     " << buf << "\n";
    out << "support:       " << products << " products (" << products_ranked << " ranked), "
        << positives << " positives / " << negatives << " negatives\n";
    return out.str();
}

}  // namespace hyperpave::metrics
