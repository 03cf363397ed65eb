#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <thread>
#include <vector>

#include "esle/corpus.hpp"
#include "esle/error.hpp"
#include "esle/io.hpp"
#include "esle/nnet.hpp"

namespace esle {

struct EmbeddingVector {
    std::vector<double> values;
    std::optional<Location> source; // cleared by arithmetic composition
};

struct EmbedManifestRecord {
    std::int64_t row = 0;
    std::int64_t n = 0;
    Location location;
};

struct EmbeddingMatrix {
    std::size_t dim = 0;
    std::vector<double> values; // N x dim, row-major
    std::vector<EmbedManifestRecord> manifest;

    std::size_t rows() const { return dim == 0 ? 0 : values.size() / dim; }

    const double* row(std::size_t i) const { return values.data() + i * dim; }

    std::vector<double> row_vec(std::size_t i) const {
        return {row(i), row(i) + dim};
    }

    void validate() const {
        if (dim == 0 && !values.empty()) throw ShapeError("embedding matrix: zero dim");
        if (dim != 0 && values.size() % dim != 0)
            throw ShapeError("embedding matrix: ragged storage");
        if (manifest.size() != rows())
            throw ValueError("embedding matrix: manifest length " +
                             std::to_string(manifest.size()) + " != row count " +
                             std::to_string(rows()));
        for (std::size_t i = 0; i < manifest.size(); ++i)
            if (manifest[i].row != static_cast<std::int64_t>(i))
                throw ValueError("embedding matrix: manifest row ids not dense");
    }
};

inline EmbeddingVector extract_embedding(const ModelParams& params, const TileImage& tile) {
    Tensor batch({1, kTileChannels, tile.size, tile.size});
    if (tile.pixels.size() != batch.numel())
        throw ShapeError("extract_embedding: tile does not match network input");
    std::copy(tile.pixels.begin(), tile.pixels.end(), batch.data.begin());
    ForwardResult res = forward(params, batch);
    EmbeddingVector v;
    v.values = std::move(res.embeddings.data);
    v.source = tile.location;
    return v;
}

// Matrix entries are rounded to file precision (f32) at build time, so a
// persisted matrix reloads bit-identically.
inline double to_file_precision(double v) { return static_cast<double>(static_cast<float>(v)); }

inline EmbeddingMatrix embed_corpus(const ModelParams& params, const TileCorpus& corpus,
                                    std::size_t batch_size = 64, std::size_t threads = 1) {
    if (corpus.size() == 0) throw ValueError("embed_corpus: empty corpus");
    corpus.validate();
    EmbeddingMatrix m;
    m.dim = params.config.embedding_dim;
    m.values.assign(corpus.size() * m.dim, 0.0);
    for (std::size_t i = 0; i < corpus.size(); ++i)
        m.manifest.push_back({static_cast<std::int64_t>(i), corpus.manifest[i].n,
                              corpus.manifest[i].location});

    auto run_range = [&](std::size_t lo, std::size_t hi) {
        std::vector<std::size_t> idx;
        for (std::size_t start = lo; start < hi; start += batch_size) {
            const std::size_t stop = std::min(hi, start + batch_size);
            idx.clear();
            for (std::size_t i = start; i < stop; ++i) idx.push_back(i);
            Tensor batch = assemble_batch(corpus, idx, params.config);
            ForwardResult res = forward(params, batch);
            for (std::size_t i = 0; i < idx.size(); ++i)
                for (std::size_t j = 0; j < m.dim; ++j)
                    m.values[(start + i) * m.dim + j] =
                        to_file_precision(res.embeddings.data[i * m.dim + j]);
        }
    };

    if (threads <= 1) {
        run_range(0, corpus.size());
    } else {
        // Chunk boundaries at batch multiples keep every batch identical to the
        // single-threaded run, so the output does not depend on thread count.
        const std::size_t n_batches = (corpus.size() + batch_size - 1) / batch_size;
        const std::size_t per = (n_batches + threads - 1) / threads;
        std::vector<std::thread> pool;
        for (std::size_t t = 0; t < threads; ++t) {
            const std::size_t lo = std::min(corpus.size(), t * per * batch_size);
            const std::size_t hi = std::min(corpus.size(), (t + 1) * per * batch_size);
            if (lo < hi) pool.emplace_back(run_range, lo, hi);
        }
        for (auto& th : pool) th.join();
    }
    return m;
}

struct NeighborResult {
    std::vector<std::pair<std::size_t, double>> items; // (row, cosine), best first
    bool clipped = false;                              // k exceeded the row count
};

// Exact full scan; ties break toward the lower row index.  Zero rows score
// -inf so they sort last rather than poisoning the ranking.
inline NeighborResult nearest_neighbors(const EmbeddingMatrix& m, const EmbeddingVector& query,
                                        std::size_t k) {
    m.validate();
    if (k == 0) throw ValueError("nearest_neighbors: k must be >= 1");
    if (query.values.size() != m.dim)
        throw ShapeError("nearest_neighbors: query dim " + std::to_string(query.values.size()) +
                         " != matrix dim " + std::to_string(m.dim));
    double qnorm = 0.0;
    for (double v : query.values) qnorm += v * v;
    if (qnorm == 0.0) throw ValueError("nearest_neighbors: zero query vector");
    qnorm = std::sqrt(qnorm);

    std::vector<std::pair<std::size_t, double>> scored(m.rows());
    for (std::size_t i = 0; i < m.rows(); ++i) {
        const double* r = m.row(i);
        double dot = 0.0, rq = 0.0;
        for (std::size_t j = 0; j < m.dim; ++j) {
            dot += r[j] * query.values[j];
            rq += r[j] * r[j];
        }
        const double score = rq == 0.0 ? -std::numeric_limits<double>::infinity()
                                       : dot / (std::sqrt(rq) * qnorm);
        scored[i] = {i, score};
    }
    std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });

    NeighborResult out;
    out.clipped = k > scored.size();
    scored.resize(std::min(k, scored.size()));
    out.items = std::move(scored);
    return out;
}

enum class ComposeOp { add, sub };

inline EmbeddingVector compose(const EmbeddingVector& a, ComposeOp op,
                               const EmbeddingVector& b) {
    if (a.values.size() != b.values.size())
        throw ShapeError("compose: dimension mismatch " + std::to_string(a.values.size()) +
                         " vs " + std::to_string(b.values.size()));
    EmbeddingVector out;
    out.values.resize(a.values.size());
    for (std::size_t i = 0; i < a.values.size(); ++i)
        out.values[i] = op == ComposeOp::add ? a.values[i] + b.values[i]
                                             : a.values[i] - b.values[i];
    return out;
}

// ---------------------------------------------------------------------------
// File format: magic, version, row count, dim, dtype code, then f32 values
// row-major; the row->location manifest rides in a JSONL companion file.
// ---------------------------------------------------------------------------

inline constexpr char kEmbedMagic[4] = {'E', 'S', 'L', 'E'};
inline constexpr std::uint32_t kEmbedVersion = 1;

inline std::filesystem::path embed_manifest_path(const std::filesystem::path& path) {
    return path.string() + ".manifest.jsonl";
}

inline void save_matrix(const std::filesystem::path& path, const EmbeddingMatrix& m) {
    m.validate();
    std::string buf;
    buf.append(kEmbedMagic, 4);
    put_u32(buf, kEmbedVersion);
    put_u64(buf, m.rows());
    put_u32(buf, static_cast<std::uint32_t>(m.dim));
    put_u8(buf, 0); // dtype 0 = f32
    for (double v : m.values) put_f32(buf, static_cast<float>(v));
    write_file(path, buf);

    std::vector<json> lines;
    for (const auto& r : m.manifest)
        lines.push_back(json{{"row", r.row}, {"n", r.n}, {"lat", r.location.lat},
                             {"lon", r.location.lon}});
    write_jsonl(embed_manifest_path(path), lines);
}

inline EmbeddingMatrix load_matrix(const std::filesystem::path& path) {
    const std::string buf = read_file(path);
    ByteReader rd(buf, path.string());
    if (rd.bytes(4) != std::string(kEmbedMagic, 4))
        throw FormatError(path.string() + ": bad magic (not an embedding file)");
    const std::uint32_t version = rd.u32();
    if (version != kEmbedVersion)
        throw FormatError(path.string() + ": unsupported version " + std::to_string(version));
    EmbeddingMatrix m;
    const std::uint64_t n = rd.u64();
    m.dim = rd.u32();
    const std::uint8_t dtype = rd.u8();
    if (dtype != 0)
        throw FormatError(path.string() + ": unknown dtype code " + std::to_string(dtype));
    m.values.resize(n * m.dim);
    for (auto& v : m.values) v = static_cast<double>(rd.f32());
    if (!rd.at_end())
        throw FormatError(path.string() + ": trailing bytes at offset " + std::to_string(rd.pos));

    for (const auto& j : read_jsonl(embed_manifest_path(path))) {
        EmbedManifestRecord r;
        r.row = j.at("row").get<std::int64_t>();
        r.n = j.at("n").get<std::int64_t>();
        r.location = {j.at("lat").get<double>(), j.at("lon").get<double>()};
        m.manifest.push_back(r);
    }
    m.validate();
    return m;
}

} // namespace esle
