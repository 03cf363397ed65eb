#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include "esle/embedding.hpp"
#include "esle/error.hpp"
#include "esle/labels.hpp"
#include "esle/rng.hpp"

namespace esle {

// ---------------------------------------------------------------------------
// Groups of label rows that differ from each other in exactly one class bit.
// "icw" is the number of other bits set (the amount of interference allowed).
// ---------------------------------------------------------------------------

struct IcwGroup {
    std::size_t class_id = 0;
    std::size_t icw = 0;
    std::uint32_t other_pattern = 0;       // bitmask over the label bits, bit class_id clear
    std::vector<std::size_t> with_rows;    // label has bit class_id = 1
    std::vector<std::size_t> without_rows; // identical elsewhere, bit class_id = 0
};

inline std::uint32_t label_mask(const MetaLabel& y) {
    std::uint32_t m = 0;
    for (std::size_t i = 0; i < kLabelCount; ++i)
        if (y.bits[i]) m |= 1u << i;
    return m;
}

// One group per (class, exact other-bit pattern of weight icw) with both sides
// populated; rows index into the labels list.  Any vector of bit labels is
// accepted; the building/road one-hot structure is not required here.
inline std::vector<IcwGroup> build_icw_groups(const std::vector<MetaLabel>& labels,
                                              std::size_t icw) {
    if (labels.empty()) throw ValueError("build_icw_groups: empty labels");
    std::vector<IcwGroup> out;
    for (std::size_t c = 0; c < kLabelCount; ++c) {
        const std::uint32_t cbit = 1u << c;
        // pattern -> (with, without)
        std::map<std::uint32_t, std::pair<std::vector<std::size_t>, std::vector<std::size_t>>>
            sides;
        for (std::size_t i = 0; i < labels.size(); ++i) {
            const std::uint32_t mask = label_mask(labels[i]);
            const std::uint32_t pattern = mask & ~cbit;
            if (static_cast<std::size_t>(std::popcount(pattern)) != icw) continue;
            if (mask & cbit)
                sides[pattern].first.push_back(i);
            else
                sides[pattern].second.push_back(i);
        }
        for (auto& [pattern, lists] : sides) {
            if (lists.first.empty() || lists.second.empty()) continue;
            IcwGroup g;
            g.class_id = c;
            g.icw = icw;
            g.other_pattern = pattern;
            g.with_rows = std::move(lists.first);
            g.without_rows = std::move(lists.second);
            out.push_back(std::move(g));
        }
    }
    return out;
}

struct FeatureVector {
    std::size_t class_id = 0;
    std::size_t icw = 0;
    std::size_t with_row = 0;
    std::size_t without_row = 0;
    std::vector<double> vec; // e_with - e_without
};

struct FeatureVectorSet {
    std::vector<FeatureVector> items;
};

// min(C1, C2) differences per group, each row used at most once per side,
// pairing drawn deterministically from the seed.
inline FeatureVectorSet class_feature_vectors(const std::vector<IcwGroup>& groups,
                                              const EmbeddingMatrix& matrix,
                                              std::uint64_t seed) {
    matrix.validate();
    FeatureVectorSet out;
    for (std::size_t gi = 0; gi < groups.size(); ++gi) {
        const IcwGroup& g = groups[gi];
        const std::size_t m = std::min(g.with_rows.size(), g.without_rows.size());
        Rng rng = Rng::derive(seed, 0x1c0000 + gi);
        const auto wi = rng.sample_without_replacement(g.with_rows.size(), m);
        const auto wo = rng.sample_without_replacement(g.without_rows.size(), m);
        for (std::size_t i = 0; i < m; ++i) {
            FeatureVector fv;
            fv.class_id = g.class_id;
            fv.icw = g.icw;
            fv.with_row = g.with_rows[wi[i]];
            fv.without_row = g.without_rows[wo[i]];
            if (fv.with_row >= matrix.rows() || fv.without_row >= matrix.rows())
                throw ValueError("class_feature_vectors: group references row beyond matrix");
            fv.vec.resize(matrix.dim);
            const double* a = matrix.row(fv.with_row);
            const double* b = matrix.row(fv.without_row);
            for (std::size_t j = 0; j < matrix.dim; ++j) fv.vec[j] = a[j] - b[j];
            out.items.push_back(std::move(fv));
        }
    }
    return out;
}

inline void write_feature_vectors(const std::filesystem::path& path,
                                  const FeatureVectorSet& set) {
    std::vector<json> lines;
    for (const auto& fv : set.items)
        lines.push_back(json{{"class", fv.class_id}, {"icw", fv.icw}, {"vec", fv.vec}});
    write_jsonl(path, lines);
}

// ---------------------------------------------------------------------------
// PCA via the covariance operator: power iteration with deflation.  Component
// signs are fixed by making each one's largest-magnitude coordinate positive.
// ---------------------------------------------------------------------------

struct PcaResult {
    std::vector<std::vector<double>> points;     // n x dims projections
    std::vector<double> explained_ratio;         // per component, non-increasing
    std::vector<std::vector<double>> components; // dims x E, orthonormal
    std::vector<double> mean;                    // E
};

namespace detail {

// y = (Cov - sum_i lam_i v_i v_i^T) x, with Cov = X^T X / (n-1) for centered X.
inline void deflated_cov_apply(const std::vector<std::vector<double>>& centered,
                               const std::vector<std::vector<double>>& done_vecs,
                               const std::vector<double>& done_vals,
                               const std::vector<double>& x, std::vector<double>& y) {
    const std::size_t n = centered.size(), e = x.size();
    std::fill(y.begin(), y.end(), 0.0);
    for (const auto& row : centered) {
        double dot = 0.0;
        for (std::size_t j = 0; j < e; ++j) dot += row[j] * x[j];
        for (std::size_t j = 0; j < e; ++j) y[j] += dot * row[j];
    }
    const double scale = 1.0 / static_cast<double>(n - 1);
    for (auto& v : y) v *= scale;
    for (std::size_t c = 0; c < done_vecs.size(); ++c) {
        double dot = 0.0;
        for (std::size_t j = 0; j < e; ++j) dot += done_vecs[c][j] * x[j];
        const double w = done_vals[c] * dot;
        for (std::size_t j = 0; j < e; ++j) y[j] -= w * done_vecs[c][j];
    }
}

inline void fix_sign(std::vector<double>& v) {
    std::size_t arg = 0;
    for (std::size_t j = 1; j < v.size(); ++j)
        if (std::abs(v[j]) > std::abs(v[arg])) arg = j;
    if (v[arg] < 0.0)
        for (auto& x : v) x = -x;
}

} // namespace detail

inline PcaResult pca_project(const std::vector<std::vector<double>>& vectors,
                             std::size_t dims = 2) {
    if (vectors.size() < dims + 1)
        throw ValueError("pca_project: need at least dims+1 vectors, have " +
                         std::to_string(vectors.size()));
    const std::size_t n = vectors.size();
    const std::size_t e = vectors[0].size();
    if (dims > e) throw ValueError("pca_project: dims exceeds vector length");
    for (const auto& v : vectors)
        if (v.size() != e) throw ShapeError("pca_project: ragged input");

    PcaResult res;
    res.mean.assign(e, 0.0);
    for (const auto& v : vectors)
        for (std::size_t j = 0; j < e; ++j) res.mean[j] += v[j];
    for (auto& m : res.mean) m /= static_cast<double>(n);

    std::vector<std::vector<double>> centered(n, std::vector<double>(e));
    double total_var = 0.0;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < e; ++j) {
            centered[i][j] = vectors[i][j] - res.mean[j];
            total_var += centered[i][j] * centered[i][j];
        }
    total_var /= static_cast<double>(n - 1); // = trace of the covariance

    std::vector<double> eigvals;
    std::vector<std::vector<double>> eigvecs;
    const double negligible = std::max(total_var, 1.0) * 1e-12;
    for (std::size_t comp = 0; comp < dims; ++comp) {
        std::vector<double> v(e, 0.0), y(e, 0.0);
        Rng rng = Rng::derive(0x9ca0001, comp);
        for (auto& x : v) x = rng.uniform(-1.0, 1.0);
        double vlen = norm2(v);
        for (auto& x : v) x /= vlen;

        double lambda = 0.0;
        bool degenerate = false;
        for (int iter = 0; iter < 5000; ++iter) {
            detail::deflated_cov_apply(centered, eigvecs, eigvals, v, y);
            const double ylen = norm2(y);
            if (ylen <= negligible) {
                degenerate = true;
                break;
            }
            for (std::size_t j = 0; j < e; ++j) v[j] = y[j] / ylen;
            const double prev = lambda;
            lambda = ylen; // Rayleigh quotient of the unit iterate
            if (iter > 0 && std::abs(lambda - prev) <= 1e-13 * std::max(1.0, lambda)) break;
        }

        if (degenerate || lambda <= negligible) {
            // Rank exhausted: complete with a canonical direction orthogonal to
            // what we already have, and report zero explained variance.
            std::vector<double> cand;
            for (std::size_t basis = 0; basis < e; ++basis) {
                cand.assign(e, 0.0);
                cand[basis] = 1.0;
                for (const auto& prev : eigvecs) {
                    double dot = 0.0;
                    for (std::size_t j = 0; j < e; ++j) dot += prev[j] * cand[j];
                    for (std::size_t j = 0; j < e; ++j) cand[j] -= dot * prev[j];
                }
                if (norm2(cand) > 1e-6) break;
            }
            const double clen = norm2(cand);
            for (auto& x : cand) x /= clen;
            detail::fix_sign(cand);
            eigvecs.push_back(cand);
            eigvals.push_back(0.0);
            continue;
        }
        detail::fix_sign(v);
        eigvecs.push_back(v);
        eigvals.push_back(lambda);
    }

    res.components = eigvecs;
    res.explained_ratio.resize(dims);
    for (std::size_t c = 0; c < dims; ++c)
        res.explained_ratio[c] = total_var > 0.0 ? std::max(0.0, eigvals[c]) / total_var : 0.0;

    res.points.assign(n, std::vector<double>(dims, 0.0));
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t c = 0; c < dims; ++c) {
            double dot = 0.0;
            for (std::size_t j = 0; j < e; ++j) dot += centered[i][j] * eigvecs[c][j];
            res.points[i][c] = dot;
        }
    return res;
}

// Projections as CSV rows: class,icw,x,y (one row per feature vector).
inline void write_projection_csv(const std::filesystem::path& path,
                                 const FeatureVectorSet& set, const PcaResult& pca) {
    if (set.items.size() != pca.points.size())
        throw ValueError("write_projection_csv: point count mismatch");
    std::string out = "class,icw,x,y\n";
    for (std::size_t i = 0; i < set.items.size(); ++i) {
        out += std::to_string(set.items[i].class_id) + "," + std::to_string(set.items[i].icw);
        for (double v : pca.points[i]) out += "," + std::to_string(v);
        out += "\n";
    }
    write_file(path, out);
}

// ---------------------------------------------------------------------------
// Calinski-Harabasz index: between/within scatter ratio.  Zero within-cluster
// scatter returns +infinity.
// ---------------------------------------------------------------------------

inline double ch_index(const std::vector<std::vector<double>>& points,
                       const std::vector<std::size_t>& cluster) {
    if (points.size() != cluster.size()) throw ShapeError("ch_index: label count mismatch");
    if (points.empty()) throw ValueError("ch_index: no points");
    const std::size_t d = points[0].size();
    std::map<std::size_t, std::pair<std::vector<double>, std::size_t>> sums;
    std::vector<double> grand(d, 0.0);
    for (std::size_t i = 0; i < points.size(); ++i) {
        if (points[i].size() != d) throw ShapeError("ch_index: ragged points");
        auto& [sum, count] = sums[cluster[i]];
        if (sum.empty()) sum.assign(d, 0.0);
        for (std::size_t j = 0; j < d; ++j) {
            sum[j] += points[i][j];
            grand[j] += points[i][j];
        }
        ++count;
    }
    const std::size_t k = sums.size();
    const std::size_t n = points.size();
    if (k < 2) throw ValueError("ch_index: need at least 2 clusters");
    if (n <= k) throw ValueError("ch_index: need more points than clusters");
    for (auto& g : grand) g /= static_cast<double>(n);

    std::map<std::size_t, std::vector<double>> centroid;
    double trace_b = 0.0;
    for (const auto& [label, sc] : sums) {
        std::vector<double> mu(d);
        for (std::size_t j = 0; j < d; ++j) mu[j] = sc.first[j] / static_cast<double>(sc.second);
        for (std::size_t j = 0; j < d; ++j)
            trace_b += static_cast<double>(sc.second) * (mu[j] - grand[j]) * (mu[j] - grand[j]);
        centroid[label] = std::move(mu);
    }
    double trace_w = 0.0;
    for (std::size_t i = 0; i < points.size(); ++i) {
        const auto& mu = centroid[cluster[i]];
        for (std::size_t j = 0; j < d; ++j)
            trace_w += (points[i][j] - mu[j]) * (points[i][j] - mu[j]);
    }
    if (trace_w == 0.0) return std::numeric_limits<double>::infinity();
    return (trace_b / static_cast<double>(k - 1)) / (trace_w / static_cast<double>(n - k));
}

} // namespace esle
