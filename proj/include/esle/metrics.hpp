#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <vector>

#include "esle/error.hpp"
#include "esle/io.hpp"

namespace esle {

struct ConfusionCounts {
    std::int64_t tp = 0, fp = 0, tn = 0, fn = 0;

    std::int64_t total() const { return tp + fp + tn + fn; }

    void add(bool predicted, bool actual) {
        if (predicted && actual) ++tp;
        else if (predicted && !actual) ++fp;
        else if (!predicted && actual) ++fn;
        else ++tn;
    }
};

struct PrecisionRecallF1 {
    double precision = 0.0, recall = 0.0, f1 = 0.0;
};

// Zero denominators yield 0 rather than NaN throughout.
inline PrecisionRecallF1 precision_recall_f1(const ConfusionCounts& cc) {
    PrecisionRecallF1 out;
    const double tp = static_cast<double>(cc.tp);
    if (cc.tp + cc.fp > 0) out.precision = tp / static_cast<double>(cc.tp + cc.fp);
    if (cc.tp + cc.fn > 0) out.recall = tp / static_cast<double>(cc.tp + cc.fn);
    if (out.precision + out.recall > 0.0)
        out.f1 = 2.0 * out.precision * out.recall / (out.precision + out.recall);
    return out;
}

inline double accuracy(const ConfusionCounts& cc) {
    if (cc.total() == 0) return 0.0;
    return static_cast<double>(cc.tp + cc.tn) / static_cast<double>(cc.total());
}

inline double mcc(const ConfusionCounts& cc) {
    const double tp = static_cast<double>(cc.tp), fp = static_cast<double>(cc.fp);
    const double tn = static_cast<double>(cc.tn), fn = static_cast<double>(cc.fn);
    const double denom2 = (tp + fp) * (tp + fn) * (tn + fp) * (tn + fn);
    if (denom2 == 0.0) return 0.0;
    return (tp * tn - fp * fn) / std::sqrt(denom2);
}

// Probability that a random positive outranks a random negative; ties count
// half.  Computed by the rank-sum method over average ranks.
inline double roc_auc(const std::vector<double>& scores, const std::vector<int>& labels) {
    if (scores.size() != labels.size()) throw ShapeError("roc_auc: length mismatch");
    std::int64_t n_pos = 0, n_neg = 0;
    for (int y : labels) (y ? n_pos : n_neg)++;
    if (n_pos == 0 || n_neg == 0)
        throw UndefinedMetricError("roc_auc needs both classes present");

    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

    double pos_rank_sum = 0.0;
    std::size_t i = 0;
    while (i < order.size()) {
        std::size_t j = i;
        while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
        // 1-based ranks i+1..j share the average rank.
        const double avg_rank = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
        for (std::size_t k = i; k < j; ++k)
            if (labels[order[k]]) pos_rank_sum += avg_rank;
        i = j;
    }
    const double np = static_cast<double>(n_pos), nn = static_cast<double>(n_neg);
    return (pos_rank_sum - np * (np + 1.0) / 2.0) / (np * nn);
}

// Shannon entropy in bits of a distribution summing to 1 (within 1e-9).
inline double entropy_bits(const std::vector<double>& p) {
    double sum = 0.0;
    for (double v : p) {
        if (v < 0.0) throw ValueError("entropy: negative probability");
        sum += v;
    }
    if (std::abs(sum - 1.0) > 1e-9)
        throw ValueError("entropy: probabilities sum to " + std::to_string(sum));
    double h = 0.0;
    for (double v : p)
        if (v > 0.0) h -= v * std::log2(v);
    return h;
}

// KL divergence in bits after additive smoothing: every entry of both vectors
// gets +eps, then each vector is renormalized.  Inputs need not sum to 1.
inline double kl_bits(const std::vector<double>& p, const std::vector<double>& q,
                      double eps = 1e-9) {
    if (p.size() != q.size()) throw ShapeError("kl: length mismatch");
    if (p.empty()) throw ValueError("kl: empty vectors");
    auto smooth = [eps](const std::vector<double>& v) {
        double sum = 0.0;
        for (double x : v) {
            if (x < 0.0) throw ValueError("kl: negative entry");
            sum += x + eps;
        }
        if (sum <= 0.0) throw ValueError("kl: vector has no mass");
        std::vector<double> out(v.size());
        for (std::size_t i = 0; i < v.size(); ++i) out[i] = (v[i] + eps) / sum;
        return out;
    };
    const auto ps = smooth(p), qs = smooth(q);
    double d = 0.0;
    for (std::size_t i = 0; i < ps.size(); ++i) {
        if (ps[i] == 0.0) continue;
        if (qs[i] == 0.0) return std::numeric_limits<double>::infinity();
        d += ps[i] * std::log2(ps[i] / qs[i]);
    }
    return std::max(0.0, d);
}

inline double cosine(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size()) throw ShapeError("cosine: length mismatch");
    double ab = 0.0, aa = 0.0, bb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        ab += a[i] * b[i];
        aa += a[i] * a[i];
        bb += b[i] * b[i];
    }
    if (aa == 0.0 || bb == 0.0) throw ValueError("cosine undefined for a zero vector");
    return ab / (std::sqrt(aa) * std::sqrt(bb));
}

enum class Aggregation { micro, macro };

struct MultilabelReport {
    double precision = 0.0, recall = 0.0, f1 = 0.0, mcc = 0.0;
};

// preds/truth are N x C bit matrices flattened row-major.
inline MultilabelReport multilabel_aggregate(const std::vector<std::uint8_t>& preds,
                                             const std::vector<std::uint8_t>& truth,
                                             std::size_t num_classes,
                                             Aggregation mode = Aggregation::micro) {
    if (preds.size() != truth.size()) throw ShapeError("multilabel_aggregate: size mismatch");
    if (num_classes == 0 || preds.size() % num_classes != 0)
        throw ShapeError("multilabel_aggregate: size not a multiple of class count");
    MultilabelReport rep;
    if (mode == Aggregation::micro) {
        ConfusionCounts cc;
        for (std::size_t i = 0; i < preds.size(); ++i) cc.add(preds[i] != 0, truth[i] != 0);
        auto prf = precision_recall_f1(cc);
        rep = {prf.precision, prf.recall, prf.f1, mcc(cc)};
    } else {
        const std::size_t n = preds.size() / num_classes;
        for (std::size_t c = 0; c < num_classes; ++c) {
            ConfusionCounts cc;
            for (std::size_t i = 0; i < n; ++i)
                cc.add(preds[i * num_classes + c] != 0, truth[i * num_classes + c] != 0);
            auto prf = precision_recall_f1(cc);
            rep.precision += prf.precision;
            rep.recall += prf.recall;
            rep.f1 += prf.f1;
            rep.mcc += mcc(cc);
        }
        const double k = static_cast<double>(num_classes);
        rep.precision /= k;
        rep.recall /= k;
        rep.f1 /= k;
        rep.mcc /= k;
    }
    return rep;
}

inline json metrics_to_json(const MultilabelReport& r) {
    return json{{"precision", r.precision}, {"recall", r.recall}, {"f1", r.f1}, {"mcc", r.mcc}};
}

} // namespace esle
