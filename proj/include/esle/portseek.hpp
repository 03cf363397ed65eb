#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "esle/embedding.hpp"
#include "esle/error.hpp"
#include "esle/geo.hpp"
#include "esle/labels.hpp"
#include "esle/metrics.hpp"
#include "esle/rng.hpp"

namespace esle {

struct PortRecord {
    Location location;
    int start_month = 0;
    std::int64_t tile_index = -1; // resolved against a corpus/embedding manifest
};

struct FlowRecord {
    PortRecord port;
    double hourly_mean = 0.0; // borrowed + returned per hour
};

// ---------------------------------------------------------------------------
// CSV exchange: ports as lat,lon,start_month; flow as lat,lon,hourly_mean.
// A leading header row is accepted and skipped.
// ---------------------------------------------------------------------------

namespace detail {

inline std::vector<std::array<std::string, 3>> read_csv3(const std::filesystem::path& path) {
    std::istringstream in(read_file(path));
    std::vector<std::array<std::string, 3>> rows;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::array<std::string, 3> cells;
        std::size_t start = 0, field = 0;
        for (; field < 3; ++field) {
            const std::size_t comma = line.find(',', start);
            cells[field] = line.substr(start, comma == std::string::npos ? comma : comma - start);
            if (comma == std::string::npos) break;
            start = comma + 1;
        }
        if (field != 2)
            throw FormatError(path.string() + ":" + std::to_string(lineno) +
                              ": expected 3 comma-separated fields");
        if (lineno == 1 && !cells[0].empty() &&
            (std::isalpha(static_cast<unsigned char>(cells[0][0])) != 0))
            continue; // header
        rows.push_back(std::move(cells));
    }
    return rows;
}

// Strict numeric cells: the whole field must parse, so "12x" is rejected
// rather than silently read as 12.
inline double parse_num(const std::string& cell, const std::filesystem::path& path) {
    std::size_t used = 0;
    double v = 0.0;
    try {
        v = std::stod(cell, &used);
    } catch (const std::exception&) {
        throw FormatError(path.string() + ": not a number: '" + cell + "'");
    }
    if (used != cell.size())
        throw FormatError(path.string() + ": trailing characters in number: '" + cell + "'");
    return v;
}

inline int parse_int(const std::string& cell, const std::filesystem::path& path) {
    std::size_t used = 0;
    int v = 0;
    try {
        v = std::stoi(cell, &used);
    } catch (const std::exception&) {
        throw FormatError(path.string() + ": not an integer: '" + cell + "'");
    }
    if (used != cell.size())
        throw FormatError(path.string() + ": trailing characters in integer: '" + cell + "'");
    return v;
}

} // namespace detail

inline std::vector<PortRecord> read_ports_csv(const std::filesystem::path& path) {
    std::vector<PortRecord> out;
    for (const auto& cells : detail::read_csv3(path)) {
        PortRecord p;
        p.location = {detail::parse_num(cells[0], path), detail::parse_num(cells[1], path)};
        p.start_month = detail::parse_int(cells[2], path);
        require_valid(p.location, "port");
        if (p.start_month < 0) throw ValueError("port start_month must be >= 0");
        out.push_back(p);
    }
    return out;
}

inline void write_ports_csv(const std::filesystem::path& path,
                            const std::vector<PortRecord>& ports) {
    std::string out = "lat,lon,start_month\n";
    for (const auto& p : ports) {
        std::ostringstream ss;
        ss.precision(10);
        ss << p.location.lat << "," << p.location.lon << "," << p.start_month << "\n";
        out += ss.str();
    }
    write_file(path, out);
}

inline std::vector<FlowRecord> read_flow_csv(const std::filesystem::path& path) {
    std::vector<FlowRecord> out;
    for (const auto& cells : detail::read_csv3(path)) {
        FlowRecord f;
        f.port.location = {detail::parse_num(cells[0], path), detail::parse_num(cells[1], path)};
        f.hourly_mean = detail::parse_num(cells[2], path);
        require_valid(f.port.location, "flow port");
        if (f.hourly_mean < 0.0) throw ValueError("flow mean must be >= 0");
        out.push_back(f);
    }
    return out;
}

inline void write_flow_csv(const std::filesystem::path& path,
                           const std::vector<FlowRecord>& records) {
    std::string out = "lat,lon,hourly_mean\n";
    for (const auto& f : records) {
        std::ostringstream ss;
        ss.precision(10);
        ss << f.port.location.lat << "," << f.port.location.lon << "," << f.hourly_mean << "\n";
        out += ss.str();
    }
    write_file(path, out);
}

// Nearest manifest row by great-circle distance.
inline std::size_t nearest_row(const EmbeddingMatrix& matrix, const Location& loc) {
    if (matrix.rows() == 0) throw ValueError("nearest_row: empty matrix");
    std::size_t best = 0;
    double best_d = haversine_km(matrix.manifest[0].location, loc);
    for (std::size_t i = 1; i < matrix.rows(); ++i) {
        const double d = haversine_km(matrix.manifest[i].location, loc);
        if (d < best_d) {
            best_d = d;
            best = i;
        }
    }
    return best;
}

inline void resolve_tile_indices(std::vector<PortRecord>& ports, const EmbeddingMatrix& matrix) {
    for (auto& p : ports)
        p.tile_index = static_cast<std::int64_t>(nearest_row(matrix, p.location));
}

// ---------------------------------------------------------------------------
// Candidate set: rows at least threshold_km from every port.
// ---------------------------------------------------------------------------

inline std::vector<std::size_t> build_candidate_set(const EmbeddingMatrix& matrix,
                                                    const std::vector<PortRecord>& ports,
                                                    double threshold_km) {
    if (threshold_km < 0.0) throw ValueError("threshold_km must be >= 0");
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < matrix.rows(); ++i) {
        bool keep = true;
        for (const auto& p : ports)
            if (haversine_km(matrix.manifest[i].location, p.location) < threshold_km) {
                keep = false;
                break;
            }
        if (keep) out.push_back(i);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Logistic regression: full-batch gradient descent on cross-entropy with L2 on
// the weights (bias unpenalized), features standardized by train statistics.
// ---------------------------------------------------------------------------

struct LogRegConfig {
    double learning_rate = 0.1;
    std::size_t iterations = 2000;
    double l2 = 1e-4;
    bool standardize = true;
    std::uint64_t seed = 0; // recorded; the fit itself is deterministic
};

struct LogRegModel {
    std::vector<double> weights;
    double bias = 0.0;
    std::vector<double> feat_mean, feat_std; // train statistics, applied to inputs
    LogRegConfig config;

    double predict_prob(const std::vector<double>& x) const {
        if (x.size() != weights.size())
            throw ShapeError("logreg: feature dim " + std::to_string(x.size()) + " != " +
                             std::to_string(weights.size()));
        double z = bias;
        for (std::size_t j = 0; j < x.size(); ++j) {
            const double v = feat_mean.empty() ? x[j] : (x[j] - feat_mean[j]) / feat_std[j];
            z += weights[j] * v;
        }
        return sigmoid(z);
    }
};

inline LogRegModel fit_logreg(const std::vector<std::vector<double>>& features,
                              const std::vector<int>& labels, const LogRegConfig& cfg = {}) {
    if (features.size() != labels.size()) throw ShapeError("fit_logreg: size mismatch");
    if (features.size() < 2) throw ValueError("fit_logreg: need at least 2 samples");
    const std::size_t n = features.size(), d = features[0].size();
    for (const auto& f : features)
        if (f.size() != d) throw ShapeError("fit_logreg: ragged features");
    bool has0 = false, has1 = false;
    for (int y : labels) (y ? has1 : has0) = true;
    if (!has0 || !has1) throw ValueError("fit_logreg: both classes must be present");

    LogRegModel model;
    model.config = cfg;
    model.weights.assign(d, 0.0);
    if (cfg.standardize) {
        model.feat_mean.assign(d, 0.0);
        model.feat_std.assign(d, 0.0);
        for (const auto& f : features)
            for (std::size_t j = 0; j < d; ++j) model.feat_mean[j] += f[j];
        for (auto& m : model.feat_mean) m /= static_cast<double>(n);
        for (const auto& f : features)
            for (std::size_t j = 0; j < d; ++j) {
                const double c = f[j] - model.feat_mean[j];
                model.feat_std[j] += c * c;
            }
        for (auto& s : model.feat_std) {
            s = std::sqrt(s / static_cast<double>(n));
            if (s == 0.0) s = 1.0; // constant column contributes nothing
        }
    }

    std::vector<std::vector<double>> x(n, std::vector<double>(d));
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j)
            x[i][j] = cfg.standardize ? (features[i][j] - model.feat_mean[j]) / model.feat_std[j]
                                      : features[i][j];

    std::vector<double> gw(d);
    for (std::size_t it = 0; it < cfg.iterations; ++it) {
        std::fill(gw.begin(), gw.end(), 0.0);
        double gb = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            double z = model.bias;
            const auto& xi = x[i];
            for (std::size_t j = 0; j < d; ++j) z += model.weights[j] * xi[j];
            const double err = sigmoid(z) - static_cast<double>(labels[i]);
            for (std::size_t j = 0; j < d; ++j) gw[j] += err * xi[j];
            gb += err;
        }
        const double inv_n = 1.0 / static_cast<double>(n);
        for (std::size_t j = 0; j < d; ++j)
            model.weights[j] -= cfg.learning_rate * (gw[j] * inv_n + cfg.l2 * model.weights[j]);
        model.bias -= cfg.learning_rate * gb * inv_n;
    }
    return model;
}

// ---------------------------------------------------------------------------
// Balanced bootstrap samples: each draws |pos| negatives without replacement
// and splits both classes with a ceil(0.7 n) train share.
// ---------------------------------------------------------------------------

struct BalancedSample {
    std::vector<std::size_t> train_pos, train_neg, test_pos, test_neg;
};

inline std::vector<BalancedSample> balanced_samples(const std::vector<std::size_t>& pos,
                                                    const std::vector<std::size_t>& neg_pool,
                                                    std::size_t t_samples, std::uint64_t seed) {
    if (pos.empty()) throw ValueError("balanced_samples: no positives");
    if (neg_pool.size() < pos.size())
        throw ValueError("balanced_samples: negative pool smaller than positive set (" +
                         std::to_string(neg_pool.size()) + " < " + std::to_string(pos.size()) +
                         ")");
    const auto n_train = static_cast<std::size_t>(
        std::ceil(0.7 * static_cast<double>(pos.size()) - 1e-12));
    std::vector<BalancedSample> out;
    out.reserve(t_samples);
    for (std::size_t t = 0; t < t_samples; ++t) {
        Rng rng = Rng::derive(seed, 0xba000000 + t);
        BalancedSample s;
        std::vector<std::size_t> p = pos;
        rng.shuffle(p);
        s.train_pos.assign(p.begin(), p.begin() + static_cast<std::ptrdiff_t>(n_train));
        s.test_pos.assign(p.begin() + static_cast<std::ptrdiff_t>(n_train), p.end());
        const auto negs = rng.sample_without_replacement(neg_pool.size(), pos.size());
        for (std::size_t i = 0; i < negs.size(); ++i)
            (i < n_train ? s.train_neg : s.test_neg).push_back(neg_pool[negs[i]]);
        out.push_back(std::move(s));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Feature assembly for the classifiers: the embedding row, optionally
// concatenated with raw counts, label bits, and POI counts.
// ---------------------------------------------------------------------------

struct FeatureSelector {
    bool with_counts = false;
    bool with_label = false;
    bool with_poi = false;

    std::string str() const {
        std::string s = "embedding";
        if (with_counts) s += "+counts";
        if (with_label) s += "+label";
        if (with_poi) s += "+poi";
        return s;
    }

    // "embedding[+counts][+label][+poi]", parts in any order after the first
    static FeatureSelector parse(const std::string& text) {
        FeatureSelector sel;
        std::size_t start = 0;
        bool first = true;
        while (start <= text.size()) {
            const std::size_t plus = text.find('+', start);
            const std::string part =
                text.substr(start, plus == std::string::npos ? plus : plus - start);
            if (first) {
                if (part != "embedding")
                    throw ValueError("feature selector must start with 'embedding': " + text);
                first = false;
            } else if (part == "counts") {
                sel.with_counts = true;
            } else if (part == "label") {
                sel.with_label = true;
            } else if (part == "poi") {
                sel.with_poi = true;
            } else {
                throw ValueError("unknown feature selector part '" + part + "' in " + text);
            }
            if (plus == std::string::npos) break;
            start = plus + 1;
        }
        return sel;
    }
};

struct FeatureSource {
    const EmbeddingMatrix* matrix = nullptr;
    const std::vector<LabelRecord>* labels = nullptr; // aligned by row, optional
    FeatureSelector selector;

    std::vector<double> features(std::size_t row) const {
        std::vector<double> f(matrix->row(row), matrix->row(row) + matrix->dim);
        if (selector.with_counts || selector.with_label || selector.with_poi) {
            if (!labels || row >= labels->size())
                throw ValueError("feature source: label records missing for row " +
                                 std::to_string(row));
            const LabelRecord& r = (*labels)[row];
            if (selector.with_counts)
                for (auto c : r.counts.counts) f.push_back(static_cast<double>(c));
            if (selector.with_label)
                for (auto b : r.label.bits) f.push_back(static_cast<double>(b));
            if (selector.with_poi)
                for (auto c : r.poi) f.push_back(static_cast<double>(c));
        }
        return f;
    }
};

// ---------------------------------------------------------------------------
// Month-by-month identification: fit T balanced classifiers on the ports known
// so far vs. candidate negatives, aggregate held-out metrics, and score the
// not-yet-opened ports with the fitted models.
// ---------------------------------------------------------------------------

struct MetricStats {
    double mean = 0.0, stddev = 0.0;
};

inline MetricStats mean_std(const std::vector<double>& xs) {
    MetricStats s;
    if (xs.empty()) return s;
    for (double x : xs) s.mean += x;
    s.mean /= static_cast<double>(xs.size());
    for (double x : xs) s.stddev += (x - s.mean) * (x - s.mean);
    s.stddev = std::sqrt(s.stddev / static_cast<double>(xs.size()));
    return s;
}

struct MonthReport {
    int month = 0;
    std::size_t n_pos = 0;
    std::map<std::string, MetricStats> metrics; // accuracy/precision/recall/f1/auc/mcc
    MetricStats future_score;                   // mean prob on later ports, when any
    std::size_t n_future = 0;
};

struct TemporalReport {
    std::vector<MonthReport> series; // only months with enough positives to fit
    std::vector<int> skipped_months; // months seen with < 2 positives

    json to_json() const {
        json rows = json::array();
        for (const auto& rep : series) {
            json m{{"month", rep.month}, {"n_pos", rep.n_pos}, {"n_future", rep.n_future}};
            for (const auto& [name, st] : rep.metrics) {
                m[name] = st.mean;
                m[name + "_std"] = st.stddev;
            }
            if (rep.n_future > 0) {
                m["future_score"] = rep.future_score.mean;
                m["future_score_std"] = rep.future_score.stddev;
            }
            rows.push_back(std::move(m));
        }
        return json{{"series", rows}, {"skipped_months", skipped_months}};
    }
};

inline MetricStats score_future_ports(const std::vector<LogRegModel>& models,
                                      const std::vector<std::vector<double>>& future) {
    if (models.empty()) throw ValueError("score_future_ports: no models");
    std::vector<double> scores;
    scores.reserve(models.size() * future.size());
    for (const auto& m : models)
        for (const auto& f : future) scores.push_back(m.predict_prob(f));
    return mean_std(scores);
}

inline TemporalReport temporal_identification(const std::vector<PortRecord>& ports,
                                              const std::vector<std::size_t>& candidates,
                                              const FeatureSource& source,
                                              std::size_t t_samples, std::uint64_t seed,
                                              const LogRegConfig& lr_cfg = {}) {
    if (t_samples == 0) throw ValueError("temporal_identification: T must be >= 1");
    std::vector<int> months_sorted;
    for (const auto& p : ports) months_sorted.push_back(p.start_month);
    std::sort(months_sorted.begin(), months_sorted.end());
    months_sorted.erase(std::unique(months_sorted.begin(), months_sorted.end()),
                        months_sorted.end());

    TemporalReport report;
    for (int month : months_sorted) {
        MonthReport rep;
        rep.month = month;
        std::vector<std::size_t> pos_rows, future_rows;
        for (const auto& p : ports) {
            if (p.tile_index < 0) throw ValueError("temporal_identification: unresolved port");
            (p.start_month <= month ? pos_rows : future_rows)
                .push_back(static_cast<std::size_t>(p.tile_index));
        }
        rep.n_pos = pos_rows.size();
        rep.n_future = future_rows.size();
        if (pos_rows.size() < 2) {
            report.skipped_months.push_back(month);
            continue;
        }

        auto samples = balanced_samples(pos_rows, candidates, t_samples,
                                        Rng::mix_seed(seed, static_cast<std::uint64_t>(month)));
        std::map<std::string, std::vector<double>> metric_runs;
        std::vector<LogRegModel> models;
        models.reserve(samples.size());
        for (const auto& s : samples) {
            std::vector<std::vector<double>> xtr, xte;
            std::vector<int> ytr, yte;
            for (auto r : s.train_pos) { xtr.push_back(source.features(r)); ytr.push_back(1); }
            for (auto r : s.train_neg) { xtr.push_back(source.features(r)); ytr.push_back(0); }
            for (auto r : s.test_pos) { xte.push_back(source.features(r)); yte.push_back(1); }
            for (auto r : s.test_neg) { xte.push_back(source.features(r)); yte.push_back(0); }
            LogRegModel model = fit_logreg(xtr, ytr, lr_cfg);

            if (!xte.empty()) {
                ConfusionCounts cc;
                std::vector<double> scores;
                for (std::size_t i = 0; i < xte.size(); ++i) {
                    const double p = model.predict_prob(xte[i]);
                    scores.push_back(p);
                    cc.add(p >= 0.5, yte[i] != 0);
                }
                auto prf = precision_recall_f1(cc);
                metric_runs["accuracy"].push_back(accuracy(cc));
                metric_runs["precision"].push_back(prf.precision);
                metric_runs["recall"].push_back(prf.recall);
                metric_runs["f1"].push_back(prf.f1);
                metric_runs["mcc"].push_back(mcc(cc));
                bool both = false;
                {
                    bool h0 = false, h1 = false;
                    for (int y : yte) (y ? h1 : h0) = true;
                    both = h0 && h1;
                }
                if (both) metric_runs["auc"].push_back(roc_auc(scores, yte));
            }
            models.push_back(std::move(model));
        }
        for (const auto& [name, runs] : metric_runs) rep.metrics[name] = mean_std(runs);
        if (!future_rows.empty()) {
            std::vector<std::vector<double>> fx;
            for (auto r : future_rows) fx.push_back(source.features(r));
            rep.future_score = score_future_ports(models, fx);
        }
        report.series.push_back(std::move(rep));
    }
    return report;
}

// ---------------------------------------------------------------------------
// Recommendation: rank candidates by the mean predicted probability over T
// balanced classifiers trained with the ports as the positive class.
// ---------------------------------------------------------------------------

struct RecConfig {
    FeatureSelector selector;
    std::size_t m_star = 100;
    std::size_t t_samples = 50;
    std::uint64_t seed = 0;
    LogRegConfig lr;

    void validate() const {
        if (m_star == 0) throw ValueError("recommendation: M* must be >= 1");
        if (t_samples == 0) throw ValueError("recommendation: T must be >= 1");
    }
};

struct Recommendation {
    std::size_t rank = 0; // 1-based
    std::size_t row = 0;
    double score = 0.0;
};

inline std::vector<Recommendation> recommend_topM(const RecConfig& cfg,
                                                  const std::vector<std::size_t>& port_rows,
                                                  const std::vector<std::size_t>& candidates,
                                                  const FeatureSource& source,
                                                  std::size_t threads = 1) {
    cfg.validate();
    if (candidates.empty()) throw ValueError("recommend: empty candidate set");
    if (cfg.m_star > candidates.size())
        throw ValueError("recommend: M* exceeds candidate count");
    if (port_rows.empty()) throw ValueError("recommend: no ports");
    if (candidates.size() < port_rows.size())
        throw ValueError("recommend: candidate pool smaller than port set");

    std::vector<std::vector<double>> cand_feats;
    cand_feats.reserve(candidates.size());
    for (auto r : candidates) cand_feats.push_back(source.features(r));
    std::vector<std::vector<double>> port_feats;
    for (auto r : port_rows) port_feats.push_back(source.features(r));

    // Each bootstrap sample owns a probability row; the rows are summed in
    // sample order afterwards, so the scores are bit-identical for every
    // thread count (threads only decide who fills which rows).
    std::vector<std::vector<double>> per_sample(cfg.t_samples);
    auto run_range = [&](std::size_t t_lo, std::size_t t_hi) {
        for (std::size_t t = t_lo; t < t_hi; ++t) {
            Rng rng = Rng::derive(cfg.seed, 0x5e000000 + t);
            const auto negs = rng.sample_without_replacement(candidates.size(), port_rows.size());
            std::vector<std::vector<double>> x = port_feats;
            std::vector<int> y(port_feats.size(), 1);
            for (auto ni : negs) {
                x.push_back(cand_feats[ni]);
                y.push_back(0);
            }
            LogRegModel model = fit_logreg(x, y, cfg.lr);
            auto& row = per_sample[t];
            row.resize(cand_feats.size());
            for (std::size_t i = 0; i < cand_feats.size(); ++i)
                row[i] = model.predict_prob(cand_feats[i]);
        }
    };

    if (threads <= 1) {
        run_range(0, cfg.t_samples);
    } else {
        const std::size_t per = (cfg.t_samples + threads - 1) / threads;
        std::vector<std::thread> pool;
        for (std::size_t th = 0; th < threads; ++th) {
            const std::size_t lo = std::min(cfg.t_samples, th * per);
            const std::size_t hi = std::min(cfg.t_samples, (th + 1) * per);
            if (lo < hi) pool.emplace_back(run_range, lo, hi);
        }
        for (auto& th : pool) th.join();
    }
    std::vector<double> mean_score(candidates.size(), 0.0);
    for (const auto& row : per_sample)
        for (std::size_t i = 0; i < mean_score.size(); ++i) mean_score[i] += row[i];
    for (auto& s : mean_score) s /= static_cast<double>(cfg.t_samples);

    std::vector<std::size_t> order(candidates.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (mean_score[a] != mean_score[b]) return mean_score[a] > mean_score[b];
        return candidates[a] < candidates[b];
    });

    std::vector<Recommendation> recs;
    for (std::size_t i = 0; i < cfg.m_star; ++i)
        recs.push_back({i + 1, candidates[order[i]], mean_score[order[i]]});
    return recs;
}

// Rows present in every list, ordered by mean rank (ties by row id).
inline std::vector<std::size_t> intersect_recommendations(
    const std::vector<std::vector<Recommendation>>& lists) {
    if (lists.empty()) throw ValueError("intersect: need at least one list");
    std::map<std::size_t, std::pair<std::size_t, double>> seen; // row -> (count, rank sum)
    for (const auto& list : lists)
        for (const auto& rec : list) {
            auto& [count, rank_sum] = seen[rec.row];
            ++count;
            rank_sum += static_cast<double>(rec.rank);
        }
    std::vector<std::pair<double, std::size_t>> hits;
    for (const auto& [row, cs] : seen)
        if (cs.first == lists.size())
            hits.push_back({cs.second / static_cast<double>(lists.size()), row});
    std::sort(hits.begin(), hits.end());
    std::vector<std::size_t> out;
    for (const auto& [rank, row] : hits) out.push_back(row);
    return out;
}

// ---------------------------------------------------------------------------
// POI-profile evaluation of a recommended set against a reference set.
// ---------------------------------------------------------------------------

using PoiMeanVector = std::vector<double>;

inline PoiMeanVector poi_count_means(const std::vector<std::size_t>& rows,
                                     const std::vector<LabelRecord>& labels) {
    if (rows.empty()) throw ValueError("poi_count_means: empty set");
    PoiMeanVector mean;
    for (auto r : rows) {
        if (r >= labels.size()) throw ValueError("poi_count_means: row beyond label records");
        const auto& poi = labels[r].poi;
        if (mean.empty()) mean.assign(poi.size(), 0.0);
        if (poi.size() != mean.size()) throw ShapeError("poi_count_means: ragged POI vectors");
        for (std::size_t j = 0; j < poi.size(); ++j) mean[j] += static_cast<double>(poi[j]);
    }
    for (auto& v : mean) v /= static_cast<double>(rows.size());
    return mean;
}

struct PoiEvalReport {
    double cosine_sim = 0.0;
    double entropy_ref = 0.0, entropy_rec = 0.0;
    double kl_ref_rec = 0.0, kl_rec_ref = 0.0;

    json to_json() const {
        return json{{"cosine", cosine_sim},
                    {"entropy_ref", entropy_ref},
                    {"entropy_rec", entropy_rec},
                    {"kl_ref_rec", kl_ref_rec},
                    {"kl_rec_ref", kl_rec_ref}};
    }
};

inline PoiEvalReport evaluate_recommendation(const PoiMeanVector& v_ref,
                                             const PoiMeanVector& v_rec,
                                             double smoothing = 1e-9) {
    if (v_ref.size() != v_rec.size()) throw ShapeError("evaluate_recommendation: length mismatch");
    auto total = [](const PoiMeanVector& v) {
        double s = 0.0;
        for (double x : v) {
            if (x < 0.0) throw ValueError("evaluate_recommendation: negative mean count");
            s += x;
        }
        return s;
    };
    const double s_ref = total(v_ref), s_rec = total(v_rec);
    if (s_ref <= 0.0 || s_rec <= 0.0)
        throw ValueError("evaluate_recommendation: all-zero mean vector");
    auto normalize = [](const PoiMeanVector& v, double s) {
        std::vector<double> p(v.size());
        for (std::size_t i = 0; i < v.size(); ++i) p[i] = v[i] / s;
        return p;
    };
    const auto p_ref = normalize(v_ref, s_ref), p_rec = normalize(v_rec, s_rec);
    PoiEvalReport rep;
    rep.cosine_sim = cosine(v_ref, v_rec);
    rep.entropy_ref = entropy_bits(p_ref);
    rep.entropy_rec = entropy_bits(p_rec);
    rep.kl_ref_rec = kl_bits(p_ref, p_rec, smoothing);
    rep.kl_rec_ref = kl_bits(p_rec, p_ref, smoothing);
    return rep;
}

// ---------------------------------------------------------------------------
// User-flow classification: strict >threshold labeling, then a 70/30 logistic
// fit per feature mode with frequency baselines.
// ---------------------------------------------------------------------------

inline std::vector<int> flow_labels(const std::vector<FlowRecord>& records,
                                    double threshold = 24.0) {
    std::vector<int> bits;
    bits.reserve(records.size());
    for (const auto& f : records) bits.push_back(f.hourly_mean > threshold ? 1 : 0);
    return bits;
}

struct FlowModeReport {
    double acc = 0.0, f1 = 0.0, auc = 0.0, mcc_v = 0.0;

    json to_json() const {
        return json{{"accuracy", acc}, {"f1", f1}, {"auc", auc}, {"mcc", mcc_v}};
    }
};

struct FlowReport {
    std::map<std::string, FlowModeReport> modes;

    json to_json() const {
        json j = json::object();
        for (const auto& [name, rep] : modes) j[name] = rep.to_json();
        return j;
    }
};

inline FlowModeReport flow_eval_scores(const std::vector<double>& scores,
                                       const std::vector<int>& truth) {
    ConfusionCounts cc;
    for (std::size_t i = 0; i < truth.size(); ++i) cc.add(scores[i] >= 0.5, truth[i] != 0);
    auto prf = precision_recall_f1(cc);
    FlowModeReport rep;
    rep.acc = accuracy(cc);
    rep.f1 = prf.f1;
    rep.auc = roc_auc(scores, truth);
    rep.mcc_v = mcc(cc);
    return rep;
}

inline FlowReport flow_prediction(
    const std::map<std::string, std::vector<std::vector<double>>>& feature_modes,
    const std::vector<int>& flow_bits, std::uint64_t seed, const LogRegConfig& lr_cfg = {}) {
    if (feature_modes.empty()) throw ValueError("flow_prediction: no feature modes");
    const std::size_t n = flow_bits.size();
    bool has0 = false, has1 = false;
    for (int y : flow_bits) (y ? has1 : has0) = true;
    if (!has0 || !has1) throw ValueError("flow_prediction: both classes must be present");

    // One shared 70/30 split across all modes.
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    Rng rng = Rng::derive(seed, 0xf1);
    rng.shuffle(idx);
    const auto n_train = static_cast<std::size_t>(std::ceil(0.7 * static_cast<double>(n) - 1e-12));
    std::vector<std::size_t> train(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_train));
    std::vector<std::size_t> test(idx.begin() + static_cast<std::ptrdiff_t>(n_train), idx.end());
    if (test.empty()) throw ValueError("flow_prediction: test split empty");

    std::vector<int> ytr, yte;
    for (auto i : train) ytr.push_back(flow_bits[i]);
    for (auto i : test) yte.push_back(flow_bits[i]);

    FlowReport report;
    for (const auto& [name, feats] : feature_modes) {
        if (feats.size() != n) throw ShapeError("flow_prediction: feature rows != labels");
        std::vector<std::vector<double>> xtr, xte;
        for (auto i : train) xtr.push_back(feats[i]);
        for (auto i : test) xte.push_back(feats[i]);
        LogRegModel model = fit_logreg(xtr, ytr, lr_cfg);
        std::vector<double> scores;
        for (const auto& x : xte) scores.push_back(model.predict_prob(x));
        report.modes[name] = flow_eval_scores(scores, yte);
    }

    // Frequency baselines share the test split.
    double train_mean = 0.0;
    for (int y : ytr) train_mean += y;
    train_mean /= static_cast<double>(ytr.size());
    {
        std::vector<double> scores(yte.size(), train_mean); // constant: all ties
        report.modes["baseline_majority"] = flow_eval_scores(scores, yte);
    }
    {
        Rng brng = Rng::derive(seed, 0xf2);
        std::vector<double> scores;
        for (std::size_t i = 0; i < yte.size(); ++i)
            scores.push_back(brng.uniform() < train_mean ? 1.0 : 0.0);
        report.modes["baseline_bernoulli"] = flow_eval_scores(scores, yte);
    }
    return report;
}

// ---------------------------------------------------------------------------
// Recommendation list exchange format.
// ---------------------------------------------------------------------------

inline void write_recommendations(const std::filesystem::path& path,
                                  const std::vector<Recommendation>& recs,
                                  const EmbeddingMatrix& matrix) {
    std::vector<json> lines;
    for (const auto& r : recs) {
        const auto& m = matrix.manifest.at(r.row);
        lines.push_back(json{{"rank", r.rank}, {"n", m.n}, {"lat", m.location.lat},
                             {"lon", m.location.lon}, {"score", r.score}});
    }
    write_jsonl(path, lines);
}

struct RecommendationLine {
    std::size_t rank = 0;
    std::int64_t n = 0;
    Location location;
    double score = 0.0;
};

inline std::vector<RecommendationLine> read_recommendations(const std::filesystem::path& path) {
    std::vector<RecommendationLine> out;
    for (const auto& j : read_jsonl(path)) {
        RecommendationLine r;
        r.rank = j.at("rank").get<std::size_t>();
        r.n = j.at("n").get<std::int64_t>();
        r.location = {j.at("lat").get<double>(), j.at("lon").get<double>()};
        r.score = j.at("score").get<double>();
        out.push_back(r);
    }
    return out;
}

} // namespace esle
