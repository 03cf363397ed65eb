#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "esle/corpus.hpp"
#include "esle/labels.hpp"
#include "esle/metrics.hpp"
#include "esle/nnet.hpp"

namespace esle {

// ---------------------------------------------------------------------------
// Reproducibility sidecar: every stage drops a `<stage>.run.json` next to its
// outputs with the fully resolved configuration. Content is a pure function
// of the inputs (no clocks, no hostnames) so repeated runs stay byte-equal.
// ---------------------------------------------------------------------------

inline json run_info(const std::string& stage, const json& config) {
    return json{{"format_version", 1}, {"stage", stage}, {"config", config}};
}

inline void write_run_info(const std::filesystem::path& dir, const std::string& stage,
                           const json& config) {
    write_file(dir / (stage + ".run.json"), run_info(stage, config).dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// Meta documents and label assembly.
// ---------------------------------------------------------------------------

inline std::vector<json> load_meta_docs(const std::filesystem::path& dir, std::size_t count) {
    std::vector<json> docs;
    docs.reserve(count);
    for (std::size_t n = 0; n < count; ++n)
        docs.push_back(parse_json(read_file(dir / meta_filename(static_cast<std::int64_t>(n))),
                                  meta_filename(static_cast<std::int64_t>(n))));
    return docs;
}

struct LabelBuild {
    std::vector<LabelRecord> records;
    PoiVocabulary vocab;
};

// Tag counting, bucketing, and POI vectors for a whole corpus of meta documents,
// indexed so records[i].n == i.
inline LabelBuild build_label_records(const std::vector<json>& meta_docs,
                                      const RuleTable& rules) {
    LabelBuild out;
    out.vocab = build_poi_vocab(meta_docs);
    out.records.reserve(meta_docs.size());
    for (std::size_t i = 0; i < meta_docs.size(); ++i) {
        LabelRecord rec;
        rec.n = static_cast<std::int64_t>(i);
        rec.counts = parse_overpass_counts(meta_docs[i], rules);
        rec.label = binarize_meta(rec.counts);
        rec.poi = poi_vector(meta_docs[i], out.vocab);
        out.records.push_back(std::move(rec));
    }
    return out;
}

inline std::vector<MetaLabel> record_labels(const std::vector<LabelRecord>& records) {
    std::vector<MetaLabel> out;
    out.reserve(records.size());
    for (const auto& r : records) out.push_back(r.label);
    return out;
}

// ---------------------------------------------------------------------------
// Label-head evaluation: model predictions on an index set, reported micro and
// macro, next to the two statistical baselines fitted on the training slice.
// ---------------------------------------------------------------------------

inline json report_pair(const std::vector<std::uint8_t>& pred_bits,
                        const std::vector<std::uint8_t>& true_bits, std::size_t num_classes) {
    const auto micro = multilabel_aggregate(pred_bits, true_bits, num_classes,
                                            Aggregation::micro);
    const auto macro = multilabel_aggregate(pred_bits, true_bits, num_classes,
                                            Aggregation::macro);
    return json{{"micro", metrics_to_json(micro)}, {"macro", metrics_to_json(macro)}};
}

// Test-time rotation: each selected tile gets a seeded quarter turn from
// {90, 180, 270} degrees, reindexed as a standalone corpus.
inline TileCorpus rotated_subset(const TileCorpus& corpus, const std::vector<std::size_t>& idx,
                                 std::uint64_t seed) {
    TileCorpus out;
    Rng rng = Rng::derive(seed, 0x207a7e);
    for (std::size_t k = 0; k < idx.size(); ++k) {
        out.tiles.push_back(rotate_tile(corpus.tiles[idx[k]],
                                        1 + static_cast<int>(rng.below(3))));
        ManifestRecord m = corpus.manifest[idx[k]];
        m.n = static_cast<std::int64_t>(k);
        out.manifest.push_back(m);
    }
    return out;
}

// The same model scored on the plain and the rotated test set, side by side.
inline json rotation_report(const ModelParams& params, const TileCorpus& corpus,
                            const std::vector<MetaLabel>& labels,
                            const std::vector<std::size_t>& test_idx, double threshold,
                            std::uint64_t seed) {
    std::vector<std::uint8_t> true_bits;
    for (auto i : test_idx)
        for (std::size_t j = 0; j < kLabelCount; ++j) true_bits.push_back(labels[i].bits[j]);

    const auto pred_plain = predict_labels(params, corpus, test_idx, threshold);
    const TileCorpus rotated = rotated_subset(corpus, test_idx, seed);
    std::vector<std::size_t> dense(test_idx.size());
    for (std::size_t k = 0; k < dense.size(); ++k) dense[k] = k;
    const auto pred_rot = predict_labels(params, rotated, dense, threshold);

    const auto plain = multilabel_aggregate(pred_plain.bits, true_bits, kLabelCount,
                                            Aggregation::micro);
    const auto rot = multilabel_aggregate(pred_rot.bits, true_bits, kLabelCount,
                                          Aggregation::micro);
    return json{{"plain", metrics_to_json(plain)},
                {"rotated", metrics_to_json(rot)},
                {"f1_gap", std::abs(plain.f1 - rot.f1)}};
}

inline json evaluate_labels(const ModelParams& params, const TileCorpus& corpus,
                            const std::vector<MetaLabel>& labels,
                            const std::vector<std::size_t>& train_idx,
                            const std::vector<std::size_t>& test_idx, double threshold,
                            std::uint64_t baseline_seed) {
    if (labels.size() != corpus.tiles.size())
        throw ShapeError("evaluate_labels: labels/corpus size mismatch");
    const std::size_t c = kLabelCount;

    std::vector<std::uint8_t> true_bits;
    true_bits.reserve(test_idx.size() * c);
    for (auto i : test_idx)
        for (std::size_t j = 0; j < c; ++j) true_bits.push_back(labels[i].bits[j]);

    const auto pred = predict_labels(params, corpus, test_idx, threshold);
    json out{{"n_test", test_idx.size()}, {"threshold", threshold},
             {"model", report_pair(pred.bits, true_bits, c)}};

    std::vector<MetaLabel> train_labels;
    for (auto i : train_idx) train_labels.push_back(labels[i]);
    for (auto mode : {BaselinePredictor::Mode::majority, BaselinePredictor::Mode::bernoulli}) {
        auto base = statistical_baseline(train_labels, mode, baseline_seed);
        const auto bits = base.predict(test_idx.size());
        const char* name = mode == BaselinePredictor::Mode::majority ? "baseline_majority"
                                                                     : "baseline_bernoulli";
        out[name] = report_pair(bits, true_bits, c);
    }
    return out;
}

} // namespace esle
