// Command-line front end for the location-embedding toolkit.
//
// Subcommands cover the whole pipeline: synthetic corpus generation, meta
// labeling, training, embedding extraction, evaluation, semantic analysis,
// and the service-port applications. Every stage that writes files drops a
// `<stage>.run.json` sidecar with the resolved configuration, and all
// randomness flows from explicit seeds, so a stage re-run from the same
// inputs reproduces its outputs byte for byte.

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "esle/esle.hpp"

namespace fs = std::filesystem;
using namespace esle;

namespace {

std::uint64_t env_seed_or(std::uint64_t fallback) {
    const char* env = std::getenv("ESLE_SEED");
    if (!env || !*env) return fallback;
    try {
        std::size_t used = 0;
        const auto v = std::stoull(env, &used);
        if (used != std::string(env).size()) throw std::invalid_argument("trailing");
        return v;
    } catch (const std::exception&) {
        throw ValueError(std::string("ESLE_SEED is not an unsigned integer: ") + env);
    }
}

void emit(const std::optional<std::string>& out_path, const json& doc) {
    if (out_path) {
        write_file(*out_path, doc.dump(2) + "\n");
    } else {
        std::cout << doc.dump(2) << "\n";
    }
}

std::vector<LabelRecord> aligned_records(const EmbeddingMatrix& matrix,
                                         const std::vector<LabelRecord>& records) {
    std::vector<LabelRecord> out;
    out.reserve(matrix.rows());
    for (const auto& m : matrix.manifest) {
        if (m.n < 0 || static_cast<std::size_t>(m.n) >= records.size())
            throw ValueError("label records do not cover tile " + std::to_string(m.n));
        out.push_back(records[static_cast<std::size_t>(m.n)]);
    }
    return out;
}

// ---------------------------------------------------------------------------

struct GenOpts {
    std::string out;
    std::size_t n = 0;
    std::size_t size = 64;
    std::uint64_t seed = 0;
    double flat_fraction = 0.04;
    int keep_flat = -1; // <0: keep everything
};

void run_gen_tiles(const GenOpts& o) {
    auto sc = generate_synthetic_corpus(o.n, o.size, o.seed, o.flat_fraction);
    TileCorpus corpus = std::move(sc.corpus);
    std::vector<json> docs = std::move(sc.meta_docs);

    if (o.keep_flat >= 0) {
        const auto plan = plan_flat_filter(corpus, static_cast<std::size_t>(o.keep_flat),
                                           o.seed);
        TileCorpus filtered;
        std::vector<json> kept_docs;
        for (std::size_t k = 0; k < plan.kept.size(); ++k) {
            const std::size_t i = plan.kept[k];
            ManifestRecord m = corpus.manifest[i];
            m.n = static_cast<std::int64_t>(k);
            m.flat = plan.is_flat[i];
            filtered.tiles.push_back(std::move(corpus.tiles[i]));
            filtered.manifest.push_back(std::move(m));
            kept_docs.push_back(std::move(docs[i]));
        }
        corpus = std::move(filtered);
        docs = std::move(kept_docs);
    }

    save_corpus(o.out, corpus);
    for (std::size_t i = 0; i < docs.size(); ++i)
        write_file(fs::path(o.out) / meta_filename(static_cast<std::int64_t>(i)),
                   docs[i].dump() + "\n");
    write_run_info(o.out, "gen-tiles",
                   json{{"n", o.n},
                        {"size", o.size},
                        {"seed", o.seed},
                        {"flat_fraction", o.flat_fraction},
                        {"keep_flat", o.keep_flat}});
    std::cout << "wrote " << corpus.size() << " tiles to " << o.out << "\n";
}

// ---------------------------------------------------------------------------

struct LabelOpts {
    std::string corpus;
    std::string out;
    std::optional<std::string> rules;
    std::optional<std::string> vocab_out;
};

void run_label(const LabelOpts& o) {
    const auto manifest = read_jsonl(fs::path(o.corpus) / "manifest.jsonl");
    const RuleTable rules = o.rules
                                ? rule_table_from_json(parse_json(read_file(*o.rules), *o.rules))
                                : default_rule_table();
    auto docs = load_meta_docs(o.corpus, manifest.size());
    auto build = build_label_records(docs, rules);
    write_labels_file(o.out, build.records);
    const std::string vocab_path = o.vocab_out.value_or(o.out + ".vocab.json");
    write_file(vocab_path, json{{"names", build.vocab.names}}.dump(2) + "\n");
    write_run_info(fs::path(o.out).parent_path(), "label",
                   json{{"corpus", fs::path(o.corpus).filename().string()},
                        {"rules", o.rules ? fs::path(*o.rules).filename().string() : "default"},
                        {"n", build.records.size()},
                        {"vocab_size", build.vocab.names.size()}});
    std::cout << "labeled " << build.records.size() << " tiles, vocabulary "
              << build.vocab.names.size() << "\n";
}

// ---------------------------------------------------------------------------

struct TrainOpts {
    std::string corpus;
    std::string labels;
    std::string out;
    std::optional<std::string> log_path;
    std::size_t epochs = 20;
    std::size_t batch = 64;
    double lr = 0.001;
    std::uint64_t seed = 0;
    double split = 0.7;
    double fraction = 1.0;
    double threshold = 0.5;
    std::size_t embedding_dim = 32;
    bool augment_rotate = false;
    bool rotate_test = false;
};

void run_train(const TrainOpts& o) {
    const TileCorpus corpus = load_corpus(o.corpus);
    const auto records = read_labels_file(o.labels);
    if (records.size() != corpus.size())
        throw ValueError("label count " + std::to_string(records.size()) +
                         " does not match corpus size " + std::to_string(corpus.size()));
    const auto labels = record_labels(records);

    NetworkConfig ncfg;
    ncfg.in_h = ncfg.in_w = corpus.tiles.at(0).size;
    ncfg.embedding_dim = o.embedding_dim;
    ncfg.validate();

    TrainConfig tcfg;
    tcfg.epochs = o.epochs;
    tcfg.batch_size = o.batch;
    tcfg.learning_rate = o.lr;
    tcfg.seed = o.seed;
    tcfg.split = o.split;
    tcfg.fraction = o.fraction;
    tcfg.threshold = o.threshold;
    tcfg.rotate_augment = o.augment_rotate || o.rotate_test;

    auto result = train(corpus, labels, ncfg, tcfg);
    save_checkpoint(o.out, result.params);
    const std::string log_path = o.log_path.value_or(o.out + ".log.jsonl");
    write_training_log(log_path, result.log);

    json info{{"corpus", fs::path(o.corpus).filename().string()},
              {"network", ncfg.to_json()},
              {"train", tcfg.to_json()},
              {"n_train", result.split.train.size()},
              {"n_test", result.split.test.size()}};
    if (o.rotate_test) {
        const json rot = rotation_report(result.params, corpus, labels, result.split.test,
                                         o.threshold, o.seed);
        write_file(o.out + ".rotate.json", rot.dump(2) + "\n");
        std::cout << "rotation f1 gap = " << rot.at("f1_gap").get<double>() << "\n";
    }
    write_run_info(fs::path(o.out).parent_path(), "train", info);

    if (!result.log.empty()) {
        const auto& last = result.log.back();
        std::cout << "epoch " << last.epoch << ": loss " << last.loss << ", f1 " << last.f1
                  << ", mcc " << last.mcc << "\n";
    }
}

// ---------------------------------------------------------------------------

struct EmbedOpts {
    std::string corpus;
    std::string model;
    std::string out;
    std::size_t batch = 64;
    std::size_t threads = 1;
};

void run_embed(const EmbedOpts& o) {
    const TileCorpus corpus = load_corpus(o.corpus);
    const ModelParams params = load_checkpoint(o.model);
    const EmbeddingMatrix matrix = embed_corpus(params, corpus, o.batch, o.threads);
    save_matrix(o.out, matrix);
    write_run_info(fs::path(o.out).parent_path(), "embed",
                   json{{"corpus", fs::path(o.corpus).filename().string()},
                        {"model", fs::path(o.model).filename().string()},
                        {"rows", matrix.rows()},
                        {"dim", matrix.dim}});
    std::cout << "embedded " << matrix.rows() << " tiles at dim " << matrix.dim << "\n";
}

// ---------------------------------------------------------------------------

struct EvalLabelsOpts {
    std::string corpus;
    std::string labels;
    std::string model;
    std::optional<std::string> out;
    double split = 0.7;
    double fraction = 1.0;
    double threshold = 0.5;
    std::uint64_t seed = 0;
};

void run_eval_labels(const EvalLabelsOpts& o) {
    const TileCorpus corpus = load_corpus(o.corpus);
    const auto records = read_labels_file(o.labels);
    if (records.size() != corpus.size())
        throw ValueError("label count does not match corpus size");
    const ModelParams params = load_checkpoint(o.model);
    const auto split = split_corpus(corpus.size(), o.split, o.fraction, o.seed);
    const json report = evaluate_labels(params, corpus, record_labels(records), split.train,
                                        split.test, o.threshold, o.seed);
    emit(o.out, report);
}

// ---------------------------------------------------------------------------

struct SemanticsOpts {
    std::string embedding;
    std::string labels;
    std::string out_dir;
    std::vector<std::size_t> icw = {0, 1};
    std::size_t dims = 2;
    std::uint64_t seed = 0;
};

void run_semantics(const SemanticsOpts& o) {
    const EmbeddingMatrix matrix = load_matrix(o.embedding);
    const auto records = aligned_records(matrix, read_labels_file(o.labels));
    std::vector<MetaLabel> labels;
    labels.reserve(records.size());
    for (const auto& r : records) labels.push_back(r.label);

    fs::create_directories(o.out_dir);
    json report{{"icw", json::object()}};
    for (std::size_t icw : o.icw) {
        const auto groups = build_icw_groups(labels, icw);
        const auto fvs = class_feature_vectors(groups, matrix, o.seed);
        const std::string tag = "icw" + std::to_string(icw);
        write_feature_vectors(fs::path(o.out_dir) / ("features_" + tag + ".jsonl"), fvs);

        json entry{{"groups", groups.size()}, {"vectors", fvs.items.size()}};
        if (fvs.items.size() >= o.dims + 1) {
            std::vector<std::vector<double>> vecs;
            std::vector<std::size_t> classes;
            for (const auto& f : fvs.items) {
                vecs.push_back(f.vec);
                classes.push_back(f.class_id);
            }
            const auto pca = pca_project(vecs, o.dims);
            write_projection_csv(fs::path(o.out_dir) / ("projection_" + tag + ".csv"), fvs,
                                 pca);
            entry["explained_ratio"] = pca.explained_ratio;
            std::size_t distinct = std::set<std::size_t>(classes.begin(), classes.end()).size();
            if (distinct >= 2 && vecs.size() > distinct) {
                entry["ch_index"] = ch_index(vecs, classes);
                entry["ch_index_projected"] = ch_index(pca.points, classes);
            }
        }
        report["icw"][tag] = std::move(entry);
    }
    write_file(fs::path(o.out_dir) / "semantics.json", report.dump(2) + "\n");
    write_run_info(o.out_dir, "semantics",
                   json{{"embedding", fs::path(o.embedding).filename().string()},
                        {"labels", fs::path(o.labels).filename().string()},
                        {"icw", o.icw},
                        {"dims", o.dims},
                        {"seed", o.seed}});
    std::cout << report.dump(2) << "\n";
}

// ---------------------------------------------------------------------------

struct PortsCommonOpts {
    std::string embedding;
    std::string ports;
    std::optional<std::string> labels;
    std::string features = "embedding";
    double threshold_km = 2.3;
    std::uint64_t seed = 0;
};

struct FeatureBundle {
    EmbeddingMatrix matrix;
    std::vector<LabelRecord> records; // aligned by row when loaded
    FeatureSource source;
};

FeatureBundle load_feature_bundle(const std::string& embedding_path,
                                  const std::optional<std::string>& labels_path,
                                  const std::string& features) {
    FeatureBundle b;
    b.matrix = load_matrix(embedding_path);
    b.source.selector = FeatureSelector::parse(features);
    if (labels_path) b.records = aligned_records(b.matrix, read_labels_file(*labels_path));
    const bool needs_labels = b.source.selector.with_counts || b.source.selector.with_label ||
                              b.source.selector.with_poi;
    if (needs_labels && !labels_path)
        throw ValueError("feature selector '" + features + "' requires --labels");
    b.source.matrix = &b.matrix;
    b.source.labels = b.records.empty() ? nullptr : &b.records;
    return b;
}

struct IdentifyOpts : PortsCommonOpts {
    std::size_t t_samples = 200;
    std::optional<std::string> out;
};

void run_identify(const IdentifyOpts& o) {
    FeatureBundle b = load_feature_bundle(o.embedding, o.labels, o.features);
    auto ports = read_ports_csv(o.ports);
    if (ports.empty()) throw ValueError("no ports in " + o.ports);
    resolve_tile_indices(ports, b.matrix);
    const auto candidates = build_candidate_set(b.matrix, ports, o.threshold_km);
    const auto report = temporal_identification(ports, candidates, b.source, o.t_samples,
                                                o.seed);
    json doc = report.to_json();
    doc["n_ports"] = ports.size();
    doc["n_candidates"] = candidates.size();
    doc["features"] = b.source.selector.str();
    emit(o.out, doc);
    if (o.out)
        write_run_info(fs::path(*o.out).parent_path(), "ports-identify",
                       json{{"threshold_km", o.threshold_km},
                            {"t_samples", o.t_samples},
                            {"features", o.features},
                            {"seed", o.seed}});
}

struct RecommendOpts : PortsCommonOpts {
    std::size_t m_star = 100;
    std::size_t t_samples = 50;
    std::size_t threads = 1;
    std::string out;
};

void run_recommend(const RecommendOpts& o) {
    FeatureBundle b = load_feature_bundle(o.embedding, o.labels, o.features);
    auto ports = read_ports_csv(o.ports);
    if (ports.empty()) throw ValueError("no ports in " + o.ports);
    resolve_tile_indices(ports, b.matrix);
    const auto candidates = build_candidate_set(b.matrix, ports, o.threshold_km);

    RecConfig cfg;
    cfg.selector = b.source.selector;
    cfg.m_star = o.m_star;
    cfg.t_samples = o.t_samples;
    cfg.seed = o.seed;
    std::vector<std::size_t> port_rows;
    for (const auto& p : ports) port_rows.push_back(static_cast<std::size_t>(p.tile_index));
    const auto recs = recommend_topM(cfg, port_rows, candidates, b.source, o.threads);
    write_recommendations(o.out, recs, b.matrix);
    write_run_info(fs::path(o.out).parent_path(), "ports-recommend",
                   json{{"threshold_km", o.threshold_km},
                        {"m_star", o.m_star},
                        {"t_samples", o.t_samples},
                        {"features", o.features},
                        {"seed", o.seed},
                        {"n_candidates", candidates.size()}});
    std::cout << "wrote " << recs.size() << " recommendations to " << o.out << "\n";
}

struct IntersectOpts {
    std::vector<std::string> inputs;
    std::optional<std::string> out;
};

void run_intersect(const IntersectOpts& o) {
    std::vector<std::vector<Recommendation>> lists;
    std::map<std::size_t, RecommendationLine> by_tile;
    for (const auto& path : o.inputs) {
        std::vector<Recommendation> list;
        for (const auto& line : read_recommendations(path)) {
            const auto tile = static_cast<std::size_t>(line.n);
            list.push_back({line.rank, tile, line.score});
            by_tile.emplace(tile, line);
        }
        lists.push_back(std::move(list));
    }
    const auto rows = intersect_recommendations(lists);
    std::vector<json> out_lines;
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const auto& src = by_tile.at(rows[i]);
        out_lines.push_back(json{{"rank", i + 1},
                                 {"n", src.n},
                                 {"lat", src.location.lat},
                                 {"lon", src.location.lon},
                                 {"score", src.score}});
    }
    if (o.out) {
        write_jsonl(*o.out, out_lines);
        std::cout << "intersection size " << rows.size() << "\n";
    } else {
        for (const auto& l : out_lines) std::cout << l.dump() << "\n";
    }
}

struct EvalPoiOpts {
    std::string labels;
    std::string embedding;
    std::string ports;
    std::string rec;
    std::optional<std::string> out;
};

void run_eval_poi(const EvalPoiOpts& o) {
    const EmbeddingMatrix matrix = load_matrix(o.embedding);
    const auto records = aligned_records(matrix, read_labels_file(o.labels));

    auto ports = read_ports_csv(o.ports);
    if (ports.empty()) throw ValueError("no ports in " + o.ports);
    resolve_tile_indices(ports, matrix);
    std::vector<std::size_t> ref_rows;
    for (const auto& p : ports) ref_rows.push_back(static_cast<std::size_t>(p.tile_index));

    std::vector<std::size_t> rec_rows;
    for (const auto& line : read_recommendations(o.rec))
        rec_rows.push_back(static_cast<std::size_t>(line.n));

    const auto v_ref = poi_count_means(ref_rows, records);
    const auto v_rec = poi_count_means(rec_rows, records);
    const auto report = evaluate_recommendation(v_ref, v_rec);
    json doc = report.to_json();
    doc["n_ref"] = ref_rows.size();
    doc["n_rec"] = rec_rows.size();
    emit(o.out, doc);
}

struct FlowOpts {
    std::string embedding;
    std::string flow;
    std::optional<std::string> labels;
    double threshold = 24.0;
    std::uint64_t seed = 0;
    std::optional<std::string> out;
};

void run_flow(const FlowOpts& o) {
    const EmbeddingMatrix matrix = load_matrix(o.embedding);
    auto flows = read_flow_csv(o.flow);
    if (flows.empty()) throw ValueError("no flow records in " + o.flow);
    for (auto& f : flows)
        f.port.tile_index = static_cast<std::int64_t>(nearest_row(matrix, f.port.location));

    std::vector<LabelRecord> records;
    if (o.labels) records = aligned_records(matrix, read_labels_file(*o.labels));

    std::map<std::string, std::vector<std::vector<double>>> modes;
    auto row_features = [&](const FeatureSelector& sel) {
        FeatureSource src{&matrix, records.empty() ? nullptr : &records, sel};
        std::vector<std::vector<double>> feats;
        for (const auto& f : flows)
            feats.push_back(src.features(static_cast<std::size_t>(f.port.tile_index)));
        return feats;
    };
    modes["embedding"] = row_features(FeatureSelector{});
    if (o.labels)
        modes["combined"] = row_features(FeatureSelector{/*counts*/ true, /*label*/ true,
                                                         /*poi*/ false});

    const auto bits = flow_labels(flows, o.threshold);
    const auto report = flow_prediction(modes, bits, o.seed);
    json doc = report.to_json();
    doc["n"] = flows.size();
    doc["threshold"] = o.threshold;
    emit(o.out, doc);
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"location-embedding toolkit"};
    app.require_subcommand(1);

    std::uint64_t default_seed = 0;
    try {
        default_seed = env_seed_or(0);
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }

    GenOpts gen;
    gen.seed = default_seed;
    auto* cmd_gen = app.add_subcommand("gen-tiles", "generate a synthetic tile corpus");
    cmd_gen->add_option("--out", gen.out, "output corpus directory")->required();
    cmd_gen->add_option("--n", gen.n, "number of tiles")->required();
    cmd_gen->add_option("--size", gen.size, "tile side length in pixels");
    cmd_gen->add_option("--seed", gen.seed, "corpus seed");
    cmd_gen->add_option("--flat-fraction", gen.flat_fraction, "fraction of featureless tiles");
    cmd_gen->add_option("--keep-flat", gen.keep_flat,
                        "downsample flat tiles to this many per kind (sea/land)");

    LabelOpts label;
    auto* cmd_label = app.add_subcommand("label", "derive meta labels from tile metadata");
    cmd_label->add_option("--corpus", label.corpus, "corpus directory")->required();
    cmd_label->add_option("--out", label.out, "labels output file (JSONL)")->required();
    cmd_label->add_option("--rules", label.rules, "tag rule table JSON (default built-in)");
    cmd_label->add_option("--vocab-out", label.vocab_out, "POI vocabulary output path");

    TrainOpts tr;
    tr.seed = default_seed;
    auto* cmd_train = app.add_subcommand("train", "train the label CNN");
    cmd_train->add_option("--corpus", tr.corpus, "corpus directory")->required();
    cmd_train->add_option("--labels", tr.labels, "labels file")->required();
    cmd_train->add_option("--out", tr.out, "model checkpoint output path")->required();
    cmd_train->add_option("--log", tr.log_path, "training log path (JSONL)");
    cmd_train->add_option("--epochs", tr.epochs, "training epochs");
    cmd_train->add_option("--batch", tr.batch, "batch size");
    cmd_train->add_option("--lr", tr.lr, "learning rate");
    cmd_train->add_option("--seed", tr.seed, "training seed");
    cmd_train->add_option("--split", tr.split, "train fraction of the corpus");
    cmd_train->add_option("--fraction", tr.fraction,
                          "fraction of the training split actually used (nested subsets)");
    cmd_train->add_option("--threshold", tr.threshold, "prediction threshold");
    cmd_train->add_option("--embedding-dim", tr.embedding_dim, "embedding dimension");
    cmd_train->add_flag("--augment-rotate", tr.augment_rotate,
                        "randomly quarter-rotate training tiles");
    cmd_train->add_flag("--rotate-test", tr.rotate_test,
                        "train with rotation augmentation and score the rotated test set");

    EmbedOpts em;
    auto* cmd_embed = app.add_subcommand("embed", "extract embeddings for a corpus");
    cmd_embed->add_option("--corpus", em.corpus, "corpus directory")->required();
    cmd_embed->add_option("--model", em.model, "model checkpoint")->required();
    cmd_embed->add_option("--out", em.out, "embedding matrix output path")->required();
    cmd_embed->add_option("--batch", em.batch, "batch size");
    cmd_embed->add_option("--threads", em.threads, "worker threads");

    EvalLabelsOpts ev;
    ev.seed = default_seed;
    auto* cmd_eval = app.add_subcommand("eval-labels", "score label predictions on a split");
    cmd_eval->add_option("--corpus", ev.corpus, "corpus directory")->required();
    cmd_eval->add_option("--labels", ev.labels, "labels file")->required();
    cmd_eval->add_option("--model", ev.model, "model checkpoint")->required();
    cmd_eval->add_option("--out", ev.out, "report output path (stdout if omitted)");
    cmd_eval->add_option("--split", ev.split, "train fraction used at training time");
    cmd_eval->add_option("--fraction", ev.fraction, "training-subset fraction used");
    cmd_eval->add_option("--threshold", ev.threshold, "prediction threshold");
    cmd_eval->add_option("--seed", ev.seed, "split seed used at training time");

    SemanticsOpts sem;
    sem.seed = default_seed;
    auto* cmd_sem = app.add_subcommand("semantics",
                                       "class feature vectors, projection, cluster scores");
    cmd_sem->add_option("--embedding", sem.embedding, "embedding matrix")->required();
    cmd_sem->add_option("--labels", sem.labels, "labels file")->required();
    cmd_sem->add_option("--out", sem.out_dir, "output directory")->required();
    cmd_sem->add_option("--icw", sem.icw, "interfering-class weights to analyze");
    cmd_sem->add_option("--dims", sem.dims, "projection dimensions");
    cmd_sem->add_option("--seed", sem.seed, "sampling seed");

    auto* cmd_ports = app.add_subcommand("ports", "service-port applications");
    cmd_ports->require_subcommand(1);

    auto add_common = [&](CLI::App* c, PortsCommonOpts& o, bool ports_required = true) {
        o.seed = default_seed;
        c->add_option("--embedding", o.embedding, "embedding matrix")->required();
        auto* p = c->add_option("--ports", o.ports, "ports CSV (lat,lon,start_month)");
        if (ports_required) p->required();
        c->add_option("--labels", o.labels, "labels file (for count/label/poi features)");
        c->add_option("--features", o.features,
                      "feature selector: embedding[+counts][+label][+poi]");
        c->add_option("--threshold-km", o.threshold_km, "exclusion radius around ports");
        c->add_option("--seed", o.seed, "sampling seed");
    };

    IdentifyOpts ident;
    auto* cmd_ident = cmd_ports->add_subcommand("identify",
                                                "month-by-month port classification");
    add_common(cmd_ident, ident);
    cmd_ident->add_option("--t-samples", ident.t_samples, "balanced samples per month");
    cmd_ident->add_option("--out", ident.out, "report output path (stdout if omitted)");

    RecommendOpts rec;
    auto* cmd_rec = cmd_ports->add_subcommand("recommend", "rank candidate tiles for ports");
    add_common(cmd_rec, rec);
    cmd_rec->add_option("--m-star", rec.m_star, "list length");
    cmd_rec->add_option("--t-samples", rec.t_samples, "balanced classifier count");
    cmd_rec->add_option("--threads", rec.threads, "worker threads");
    cmd_rec->add_option("--out", rec.out, "recommendation JSONL output")->required();

    IntersectOpts inter;
    auto* cmd_inter = cmd_ports->add_subcommand("intersect",
                                                "intersect recommendation lists");
    cmd_inter->add_option("inputs", inter.inputs, "recommendation JSONL files")
        ->required()
        ->expected(-1);
    cmd_inter->add_option("--out", inter.out, "output JSONL (stdout if omitted)");

    EvalPoiOpts ep;
    auto* cmd_ep = cmd_ports->add_subcommand("eval-poi",
                                             "compare POI profiles of two port sets");
    cmd_ep->add_option("--labels", ep.labels, "labels file")->required();
    cmd_ep->add_option("--embedding", ep.embedding, "embedding matrix")->required();
    cmd_ep->add_option("--ports", ep.ports, "reference ports CSV")->required();
    cmd_ep->add_option("--rec", ep.rec, "recommendation JSONL")->required();
    cmd_ep->add_option("--out", ep.out, "report output path (stdout if omitted)");

    FlowOpts fl;
    fl.seed = default_seed;
    auto* cmd_fl = cmd_ports->add_subcommand("flow", "classify high/low user flow");
    cmd_fl->add_option("--embedding", fl.embedding, "embedding matrix")->required();
    cmd_fl->add_option("--flow", fl.flow, "flow CSV (lat,lon,hourly_mean)")->required();
    cmd_fl->add_option("--labels", fl.labels, "labels file (enables combined features)");
    cmd_fl->add_option("--threshold", fl.threshold, "high-flow threshold (strict >)");
    cmd_fl->add_option("--seed", fl.seed, "split seed");
    cmd_fl->add_option("--out", fl.out, "report output path (stdout if omitted)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 1;
    }

    try {
        if (cmd_gen->parsed()) run_gen_tiles(gen);
        if (cmd_label->parsed()) run_label(label);
        if (cmd_train->parsed()) run_train(tr);
        if (cmd_embed->parsed()) run_embed(em);
        if (cmd_eval->parsed()) run_eval_labels(ev);
        if (cmd_sem->parsed()) run_semantics(sem);
        if (cmd_ports->parsed()) {
            if (cmd_ident->parsed()) run_identify(ident);
            if (cmd_rec->parsed()) run_recommend(rec);
            if (cmd_inter->parsed()) run_intersect(inter);
            if (cmd_ep->parsed()) run_eval_poi(ep);
            if (cmd_fl->parsed()) run_flow(fl);
        }
    } catch (const IoError& e) {
        std::cerr << "i/o error: " << e.what() << "\n";
        return 2;
    } catch (const FormatError& e) {
        std::cerr << "format error: " << e.what() << "\n";
        return 2;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
