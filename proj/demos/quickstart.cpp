// End-to-end walkthrough on a tiny synthetic corpus: generate, label, train a
// few epochs, extract embeddings, then poke at the embedding space.

#include <cstdio>

#include "esle/esle.hpp"

using namespace esle;

int main() {
    std::printf("generating 120 synthetic 32px tiles...\n");
    auto sc = generate_synthetic_corpus(120, 32, 42);
    auto build = build_label_records(sc.meta_docs, default_rule_table());

    NetworkConfig ncfg;
    ncfg.in_h = ncfg.in_w = 32;
    ncfg.convs = {{6, 5, 2}, {12, 3, 1}};
    ncfg.fc_widths = {128, 64};
    ncfg.embedding_dim = 16;

    TrainConfig tcfg;
    tcfg.epochs = 4;
    tcfg.batch_size = 32;
    tcfg.seed = 42;

    std::printf("training %zu epochs...\n", tcfg.epochs);
    auto result = train(sc.corpus, record_labels(build.records), ncfg, tcfg);
    for (const auto& e : result.log)
        std::printf("  epoch %zu: loss %.4f  micro-f1 %.3f  mcc %.3f\n", e.epoch, e.loss, e.f1,
                    e.mcc);

    auto matrix = embed_corpus(result.params, sc.corpus);
    std::printf("embedded %zu tiles at dim %zu\n", matrix.rows(), matrix.dim);

    // Nearest neighbors of tile 0 by cosine similarity.
    EmbeddingVector q{matrix.row_vec(0), matrix.manifest[0].location};
    auto nn = nearest_neighbors(matrix, q, 4);
    std::printf("neighbors of tile 0:");
    for (auto [row, score] : nn.items) std::printf("  %zu (%.3f)", row, score);
    std::printf("\n");

    // Embedding arithmetic: e0 - e1 + e1 == e0.
    EmbeddingVector e0{matrix.row_vec(0), {}}, e1{matrix.row_vec(1), {}};
    auto diff = compose(e0, ComposeOp::sub, e1);
    auto back = compose(diff, ComposeOp::add, e1);
    double err = 0;
    for (std::size_t i = 0; i < back.values.size(); ++i)
        err += std::abs(back.values[i] - e0.values[i]);
    std::printf("compose round-trip L1 error: %.2e\n", err);
    return 0;
}
