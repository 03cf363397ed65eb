#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <set>
#include <string>
#include <vector>

#include "esle/error.hpp"
#include "esle/geo.hpp"
#include "esle/io.hpp"
#include "esle/labels.hpp"
#include "esle/rng.hpp"

namespace esle {

inline constexpr std::size_t kTileChannels = 3;

// Square RGB raster centered at a location, values in [0, 1], CHW layout.
struct TileImage {
    Location location;
    std::size_t size = 0;
    std::vector<double> pixels;

    double& at(std::size_t c, std::size_t r, std::size_t col) {
        return pixels[(c * size + r) * size + col];
    }
    double at(std::size_t c, std::size_t r, std::size_t col) const {
        return pixels[(c * size + r) * size + col];
    }

    void validate() const {
        if (size == 0) throw ValueError("tile size must be positive");
        if (pixels.size() != kTileChannels * size * size)
            throw ShapeError("tile pixel count " + std::to_string(pixels.size()) +
                             " does not match 3x" + std::to_string(size) + "x" +
                             std::to_string(size));
        for (double v : pixels)
            if (!(v >= 0.0 && v <= 1.0))
                throw ValueError("pixel value outside [0,1]: " + std::to_string(v));
    }
};

struct ManifestRecord {
    std::int64_t n = 0;
    Location location;
    std::string source = "synthetic"; // "real" | "synthetic"
    bool flat = false;
};

struct TileCorpus {
    std::vector<TileImage> tiles;
    std::vector<ManifestRecord> manifest;

    std::size_t size() const { return tiles.size(); }

    void validate() const {
        if (tiles.size() != manifest.size())
            throw ValueError("corpus: tiles and manifest lengths differ");
        std::set<std::pair<double, double>> locs;
        for (std::size_t i = 0; i < manifest.size(); ++i) {
            if (manifest[i].n != static_cast<std::int64_t>(i))
                throw ValueError("corpus: manifest indices not dense at row " + std::to_string(i));
            if (!locs.insert({manifest[i].location.lat, manifest[i].location.lon}).second)
                throw ValueError("corpus: duplicate location at row " + std::to_string(i));
        }
    }
};

// Population variance over every channel-pixel value; zero iff constant.
inline double pixel_variance(const TileImage& tile) {
    tile.validate();
    // A constant image must come out exactly 0.0 (downstream flatness checks
    // compare against zero), and a summed mean carries rounding error that
    // would leave a ~1e-34 residue, so handle that case directly.
    bool constant = true;
    for (double v : tile.pixels)
        if (v != tile.pixels[0]) {
            constant = false;
            break;
        }
    if (constant) return 0.0;
    double mean = 0.0;
    for (double v : tile.pixels) mean += v;
    mean /= static_cast<double>(tile.pixels.size());
    double var = 0.0;
    for (double v : tile.pixels) var += (v - mean) * (v - mean);
    return var / static_cast<double>(tile.pixels.size());
}

// Clockwise rotation by 90 degrees x quarter_turns; pure pixel permutation.
inline TileImage rotate_tile(const TileImage& tile, int quarter_turns) {
    if (quarter_turns < 0 || quarter_turns > 3)
        throw ValueError("quarter_turns must be in {0,1,2,3}");
    TileImage out = tile;
    const std::size_t s = tile.size;
    for (int q = 0; q < quarter_turns; ++q) {
        TileImage tmp = out;
        for (std::size_t c = 0; c < kTileChannels; ++c)
            for (std::size_t r = 0; r < s; ++r)
                for (std::size_t col = 0; col < s; ++col)
                    out.at(c, r, col) = tmp.at(c, s - 1 - col, r);
    }
    return out;
}

// ---------------------------------------------------------------------------
// PPM (P6, 8-bit) exchange format.
// ---------------------------------------------------------------------------

inline std::string tile_to_ppm(const TileImage& tile) {
    tile.validate();
    std::string out = "P6\n" + std::to_string(tile.size) + " " + std::to_string(tile.size) + "\n255\n";
    out.reserve(out.size() + tile.size * tile.size * 3);
    for (std::size_t r = 0; r < tile.size; ++r)
        for (std::size_t col = 0; col < tile.size; ++col)
            for (std::size_t c = 0; c < kTileChannels; ++c) {
                long byte = std::lround(tile.at(c, r, col) * 255.0);
                out.push_back(static_cast<char>(std::clamp(byte, 0L, 255L)));
            }
    return out;
}

inline TileImage tile_from_ppm(const std::string& data, Location loc = {},
                               const std::string& origin = "ppm") {
    ByteReader rd(data, origin);
    auto token = [&]() {
        std::string t;
        while (rd.pos < data.size() &&
               (data[rd.pos] == ' ' || data[rd.pos] == '\n' || data[rd.pos] == '\t' ||
                data[rd.pos] == '\r'))
            ++rd.pos;
        while (rd.pos < data.size() && !(data[rd.pos] == ' ' || data[rd.pos] == '\n' ||
                                         data[rd.pos] == '\t' || data[rd.pos] == '\r'))
            t.push_back(data[rd.pos++]);
        if (t.empty()) throw FormatError(origin + ": truncated header");
        return t;
    };
    if (token() != "P6") throw FormatError(origin + ": not a P6 file");
    const unsigned long w = std::stoul(token());
    const unsigned long h = std::stoul(token());
    if (token() != "255") throw FormatError(origin + ": unsupported max value (want 255)");
    if (w != h) throw FormatError(origin + ": tile must be square");
    ++rd.pos; // single whitespace after maxval
    TileImage tile;
    tile.location = loc;
    tile.size = w;
    tile.pixels.assign(kTileChannels * w * w, 0.0);
    std::string raw = rd.bytes(w * h * 3);
    std::size_t i = 0;
    for (std::size_t r = 0; r < h; ++r)
        for (std::size_t col = 0; col < w; ++col)
            for (std::size_t c = 0; c < kTileChannels; ++c)
                tile.at(c, r, col) = static_cast<double>(static_cast<std::uint8_t>(raw[i++])) / 255.0;
    return tile;
}

inline std::string tile_filename(std::int64_t n) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "tile_%08lld.ppm", static_cast<long long>(n));
    return buf;
}

inline std::string meta_filename(std::int64_t n) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "meta_%08lld.json", static_cast<long long>(n));
    return buf;
}

inline void save_corpus(const std::filesystem::path& dir, const TileCorpus& corpus) {
    corpus.validate();
    std::filesystem::create_directories(dir);
    std::vector<json> lines;
    for (std::size_t i = 0; i < corpus.size(); ++i) {
        const auto& m = corpus.manifest[i];
        write_file(dir / tile_filename(m.n), tile_to_ppm(corpus.tiles[i]));
        json j;
        j["n"] = m.n;
        j["lat"] = m.location.lat;
        j["lon"] = m.location.lon;
        j["source"] = m.source;
        j["flat"] = m.flat;
        lines.push_back(std::move(j));
    }
    write_jsonl(dir / "manifest.jsonl", lines);
}

inline TileCorpus load_corpus(const std::filesystem::path& dir) {
    TileCorpus corpus;
    for (const auto& j : read_jsonl(dir / "manifest.jsonl")) {
        ManifestRecord m;
        m.n = j.at("n").get<std::int64_t>();
        m.location = {j.at("lat").get<double>(), j.at("lon").get<double>()};
        m.source = j.at("source").get<std::string>();
        m.flat = j.at("flat").get<bool>();
        auto path = dir / tile_filename(m.n);
        corpus.tiles.push_back(tile_from_ppm(read_file(path), m.location, path.string()));
        corpus.manifest.push_back(std::move(m));
    }
    corpus.validate();
    return corpus;
}

// ---------------------------------------------------------------------------
// Flat-tile thinning.  A tile is flat when its variance is exactly zero; the
// constant color decides its kind by the nearer of two reference colors.
// ---------------------------------------------------------------------------

struct FlatRefColors {
    std::array<double, 3> sea = {170.0 / 255.0, 211.0 / 255.0, 223.0 / 255.0};
    std::array<double, 3> land = {232.0 / 255.0, 228.0 / 255.0, 214.0 / 255.0};
};

struct FlatFilterPlan {
    std::vector<std::size_t> kept; // surviving original indices, ascending
    std::vector<bool> is_flat;     // per original index
};

inline FlatFilterPlan plan_flat_filter(const TileCorpus& corpus, std::size_t keep_per_kind,
                                       std::uint64_t seed, const FlatRefColors& refs = {}) {
    corpus.validate();
    std::vector<std::size_t> sea_idx, land_idx;
    FlatFilterPlan plan;
    plan.is_flat.assign(corpus.size(), false);
    for (std::size_t i = 0; i < corpus.size(); ++i) {
        if (pixel_variance(corpus.tiles[i]) != 0.0) continue;
        plan.is_flat[i] = true;
        const auto& t = corpus.tiles[i];
        double d_sea = 0.0, d_land = 0.0;
        for (std::size_t c = 0; c < 3; ++c) {
            const double v = t.at(c, 0, 0);
            d_sea += (v - refs.sea[c]) * (v - refs.sea[c]);
            d_land += (v - refs.land[c]) * (v - refs.land[c]);
        }
        (d_sea <= d_land ? sea_idx : land_idx).push_back(i);
    }

    std::set<std::size_t> sampled;
    auto keep_some = [&](const std::vector<std::size_t>& pool, std::uint64_t tag) {
        if (pool.size() <= keep_per_kind) {
            sampled.insert(pool.begin(), pool.end());
            return;
        }
        Rng rng = Rng::derive(seed, tag);
        for (std::size_t j : rng.sample_without_replacement(pool.size(), keep_per_kind))
            sampled.insert(pool[j]);
    };
    keep_some(sea_idx, 1);
    keep_some(land_idx, 2);

    for (std::size_t i = 0; i < corpus.size(); ++i)
        if (!plan.is_flat[i] || sampled.count(i)) plan.kept.push_back(i);
    return plan;
}

inline TileCorpus filter_flat_tiles(const TileCorpus& corpus, std::size_t keep_per_kind,
                                    std::uint64_t seed, const FlatRefColors& refs = {}) {
    const FlatFilterPlan plan = plan_flat_filter(corpus, keep_per_kind, seed, refs);
    TileCorpus out;
    for (std::size_t i : plan.kept) {
        ManifestRecord m = corpus.manifest[i];
        m.n = static_cast<std::int64_t>(out.tiles.size());
        m.flat = plan.is_flat[i];
        out.tiles.push_back(corpus.tiles[i]);
        out.manifest.push_back(std::move(m));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Synthetic scenes.  A tile is a 16x16 grid of cells; each count class owns a
// fixed disjoint set of cells (the assignment is a global constant), and one
// requested primitive = one stamped cell in that class's color and glyph.
// Exact-color recount therefore recovers the counts exactly, and each class's
// cell choices come from an independent stream, so changing one class's count
// leaves every other class's geometry untouched.
// ---------------------------------------------------------------------------

inline constexpr std::size_t kSceneGrid = 16;

// Cells available to each class, in kMetaClassNames order.
inline constexpr std::array<std::size_t, kMetaClassCount> kSceneCellBudget = {
    96, 9, 9, 9, 9, 9, 9, 9, 9, 48, 9, 9, 9, 9};

// 8-bit RGB per class, all distinct, none equal to a background color.
inline constexpr std::array<std::array<int, 3>, kMetaClassCount> kSceneColors = {{
    {200, 60, 60},   // buildings
    {230, 140, 20},  // highway
    {120, 70, 20},   // peak
    {40, 100, 220},  // water
    {90, 180, 230},  // river
    {60, 60, 60},    // railway
    {140, 20, 140},  // rail_station
    {70, 170, 70},   // park
    {240, 200, 40},  // playground
    {250, 250, 250}, // road
    {180, 180, 220}, // airport
    {160, 120, 80},  // trail
    {210, 230, 120}, // farmland
    {120, 220, 120}, // grassland
}};

// Backgrounds are uniform grays so an empty scene is constant across all
// channel values (exactly zero variance); the two levels sit nearer the land
// and sea reference colors respectively, which is how flat-tile thinning
// tells the kinds apart.
inline constexpr std::array<int, 3> kSceneLandColor = {225, 225, 225};
inline constexpr std::array<int, 3> kSceneSeaColor = {201, 201, 201};

// Which cells belong to which class: one fixed shuffle of the 256 cell slots.
inline const std::array<std::vector<std::size_t>, kMetaClassCount>& scene_cell_ownership() {
    static const auto owned = [] {
        std::vector<std::size_t> cells(kSceneGrid * kSceneGrid);
        for (std::size_t i = 0; i < cells.size(); ++i) cells[i] = i;
        Rng rng(0x5eedce11u);
        rng.shuffle(cells);
        std::array<std::vector<std::size_t>, kMetaClassCount> out;
        std::size_t pos = 0;
        for (std::size_t c = 0; c < kMetaClassCount; ++c) {
            out[c].assign(cells.begin() + static_cast<std::ptrdiff_t>(pos),
                          cells.begin() + static_cast<std::ptrdiff_t>(pos + kSceneCellBudget[c]));
            pos += kSceneCellBudget[c];
        }
        return out;
    }();
    return owned;
}

// Per-class glyph inside a cell; every glyph is non-empty for any cell size.
inline bool scene_glyph_covers(std::size_t class_id, std::size_t r, std::size_t c,
                               std::size_t cell_px) {
    const std::size_t third = cell_px / 3;
    switch (class_id % 4) {
    case 0: return true;                                          // full square
    case 1: return r >= third && r < cell_px - third;             // horizontal bar
    case 2: return c >= third && c < cell_px - third;             // vertical bar
    default: {                                                    // centered dot
        const std::size_t s = std::max<std::size_t>(1, cell_px / 2);
        const std::size_t o = (cell_px - s) / 2;
        return r >= o && r < o + s && c >= o && c < o + s;
    }
    }
}

inline std::size_t scene_glyph_area(std::size_t class_id, std::size_t cell_px) {
    std::size_t area = 0;
    for (std::size_t r = 0; r < cell_px; ++r)
        for (std::size_t c = 0; c < cell_px; ++c)
            if (scene_glyph_covers(class_id, r, c, cell_px)) ++area;
    return area;
}

struct ClassProfile {
    std::array<std::int64_t, kMetaClassCount> want{};
    bool sea_background = false;

    bool all_zero() const {
        for (auto w : want)
            if (w != 0) return false;
        return true;
    }
};

struct SyntheticScene {
    std::uint64_t seed = 0;
    // (class id, cell slot) per placed primitive.
    std::vector<std::pair<std::size_t, std::size_t>> placed;
    MetaCounts truth;
};

inline SyntheticScene plan_scene(std::uint64_t seed, const ClassProfile& profile) {
    SyntheticScene scene;
    scene.seed = seed;
    for (std::size_t c = 0; c < kMetaClassCount; ++c) {
        const std::int64_t want = profile.want[c];
        if (want < 0) throw ValueError(std::string("negative request for ") + kMetaClassNames[c]);
        const auto& cells = scene_cell_ownership()[c];
        if (static_cast<std::size_t>(want) > cells.size())
            throw ValueError(std::string(kMetaClassNames[c]) + ": requested " +
                             std::to_string(want) + " primitives, capacity " +
                             std::to_string(cells.size()));
        Rng rng = Rng::derive(seed, c + 1);
        for (std::size_t pick :
             rng.sample_without_replacement(cells.size(), static_cast<std::size_t>(want)))
            scene.placed.emplace_back(c, cells[pick]);
        scene.truth.counts[c] = want;
    }
    return scene;
}

inline TileImage render_scene(const SyntheticScene& scene, std::size_t size,
                              bool sea_background) {
    if (size < 16) throw ValueError("tile size must be at least 16");
    TileImage tile;
    tile.size = size;
    tile.pixels.assign(kTileChannels * size * size, 0.0);
    const auto& bg = sea_background ? kSceneSeaColor : kSceneLandColor;
    for (std::size_t c = 0; c < kTileChannels; ++c)
        for (std::size_t i = 0; i < size * size; ++i)
            tile.pixels[c * size * size + i] = bg[c] / 255.0;

    const std::size_t cell_px = size / kSceneGrid;
    for (const auto& [class_id, slot] : scene.placed) {
        const std::size_t base_r = (slot / kSceneGrid) * cell_px;
        const std::size_t base_c = (slot % kSceneGrid) * cell_px;
        for (std::size_t r = 0; r < cell_px; ++r)
            for (std::size_t col = 0; col < cell_px; ++col) {
                if (!scene_glyph_covers(class_id, r, col, cell_px)) continue;
                for (std::size_t ch = 0; ch < kTileChannels; ++ch)
                    tile.at(ch, base_r + r, base_c + col) = kSceneColors[class_id][ch] / 255.0;
            }
    }
    return tile;
}

inline std::pair<TileImage, MetaCounts> generate_synthetic_tile(std::uint64_t seed,
                                                                std::size_t size,
                                                                const ClassProfile& profile) {
    SyntheticScene scene = plan_scene(seed, profile);
    return {render_scene(scene, size, profile.sea_background), scene.truth};
}

// Recover counts from pixels alone: primitives never overlap, so the number of
// pixels in a class's exact color divided by its glyph area is its count.
inline MetaCounts recount_by_color(const TileImage& tile) {
    const std::size_t cell_px = tile.size / kSceneGrid;
    MetaCounts mc{};
    for (std::size_t c = 0; c < kMetaClassCount; ++c) {
        std::size_t hits = 0;
        const double r0 = kSceneColors[c][0] / 255.0;
        const double g0 = kSceneColors[c][1] / 255.0;
        const double b0 = kSceneColors[c][2] / 255.0;
        for (std::size_t r = 0; r < tile.size; ++r)
            for (std::size_t col = 0; col < tile.size; ++col)
                if (tile.at(0, r, col) == r0 && tile.at(1, r, col) == g0 &&
                    tile.at(2, r, col) == b0)
                    ++hits;
        const std::size_t area = scene_glyph_area(c, cell_px);
        if (hits % area != 0)
            throw ValueError(std::string("recount: pixel mass for ") + kMetaClassNames[c] +
                             " is not a whole number of glyphs");
        mc.counts[c] = static_cast<std::int64_t>(hits / area);
    }
    return mc;
}

// ---------------------------------------------------------------------------
// Synthetic corpus: tiles on a mesh grid plus matching Overpass-style
// metadata documents (one per tile) with amenity POIs tied to building mass.
// ---------------------------------------------------------------------------

inline constexpr std::array<std::pair<const char*, const char*>, kMetaClassCount> kSceneTags = {{
    {"building", "yes"},       // buildings
    {"highway", "motorway"},   // highway
    {"natural", "peak"},       // peak
    {"natural", "water"},      // water
    {"waterway", "river"},     // river
    {"railway", "rail"},       // railway
    {"railway", "station"},    // rail_station
    {"leisure", "park"},       // park
    {"leisure", "playground"}, // playground
    {"highway", "residential"},// road
    {"aeroway", "aerodrome"},  // airport
    {"highway", "path"},       // trail
    {"landuse", "farmland"},   // farmland
    {"landuse", "grass"},      // grassland
}};

inline constexpr std::array<const char*, 12> kSceneAmenities = {
    "restaurant", "cafe",     "fast_food", "school", "hospital",    "parking",
    "bank",       "pharmacy", "library",   "fuel",   "post_office", "police"};

// Random per-tile request: building and road counts land in all three buckets
// with equal probability; the twelve existence classes each appear half the
// time.  Zero-request tiles (flat sea or land) occur at flat_fraction.
inline ClassProfile random_profile(Rng& rng, double flat_fraction) {
    ClassProfile p{};
    if (rng.uniform() < flat_fraction) {
        p.sea_background = rng.uniform() < 0.5;
        return p;
    }
    auto bucketed = [&](std::uint64_t lo_n, std::uint64_t mid_lo, std::uint64_t mid_n,
                        std::uint64_t hi_lo, std::uint64_t hi_n) {
        switch (rng.below(3)) {
        case 0: return static_cast<std::int64_t>(rng.below(lo_n));
        case 1: return static_cast<std::int64_t>(mid_lo + rng.below(mid_n));
        default: return static_cast<std::int64_t>(hi_lo + rng.below(hi_n));
        }
    };
    p.want[static_cast<std::size_t>(MetaClass::buildings)] = bucketed(3, 3, 58, 61, 30);
    p.want[static_cast<std::size_t>(MetaClass::road)] = bucketed(15, 15, 16, 31, 15);
    for (std::size_t c = 0; c < kMetaClassCount; ++c) {
        if (c == static_cast<std::size_t>(MetaClass::buildings) ||
            c == static_cast<std::size_t>(MetaClass::road))
            continue;
        if (rng.uniform() < 0.5) p.want[c] = 1 + static_cast<std::int64_t>(rng.below(9));
    }
    return p;
}

// Overpass-style document whose tag counts reproduce the scene's ground truth;
// amenity count scales with the building count plus a little noise.
inline json synthetic_meta_doc(const MetaCounts& counts, Rng& poi_rng) {
    json elements = json::array();
    std::int64_t next_id = 1;
    for (std::size_t c = 0; c < kMetaClassCount; ++c)
        for (std::int64_t i = 0; i < counts.counts[c]; ++i) {
            json el;
            el["type"] = "node";
            el["id"] = next_id++;
            el["tags"] = {{kSceneTags[c].first, kSceneTags[c].second}};
            elements.push_back(std::move(el));
        }
    const std::int64_t n_poi =
        counts[MetaClass::buildings] / 4 + static_cast<std::int64_t>(poi_rng.below(3));
    for (std::int64_t i = 0; i < n_poi; ++i) {
        // Squared draw skews mass toward the first few amenity names.
        const double u = poi_rng.uniform();
        const auto pick = static_cast<std::size_t>(u * u * kSceneAmenities.size());
        json el;
        el["type"] = "node";
        el["id"] = next_id++;
        el["tags"] = {{"amenity", kSceneAmenities[std::min(pick, kSceneAmenities.size() - 1)]}};
        elements.push_back(std::move(el));
    }
    json doc;
    doc["elements"] = std::move(elements);
    return doc;
}

struct SyntheticCorpus {
    TileCorpus corpus;
    std::vector<MetaCounts> truth;
    std::vector<json> meta_docs;
};

inline SyntheticCorpus generate_synthetic_corpus(std::size_t n, std::size_t size,
                                                 std::uint64_t seed,
                                                 double flat_fraction = 0.04) {
    SyntheticCorpus out;
    const auto side =
        static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(std::max<std::size_t>(n, 1)))));
    const double lat_step = 15.0 / 3600.0, lon_step = 22.5 / 3600.0;
    for (std::size_t i = 0; i < n; ++i) {
        const std::uint64_t tile_seed = Rng::mix_seed(seed, i);
        Rng profile_rng = Rng::derive(tile_seed, 101);
        Rng poi_rng = Rng::derive(tile_seed, 102);
        const ClassProfile profile = random_profile(profile_rng, flat_fraction);
        auto [tile, counts] = generate_synthetic_tile(tile_seed, size, profile);
        tile.location = {35.0 + static_cast<double>(i / side) * lat_step,
                         139.0 + static_cast<double>(i % side) * lon_step};
        ManifestRecord m;
        m.n = static_cast<std::int64_t>(i);
        m.location = tile.location;
        m.source = "synthetic";
        m.flat = profile.all_zero();
        out.corpus.tiles.push_back(std::move(tile));
        out.corpus.manifest.push_back(std::move(m));
        out.truth.push_back(counts);
        out.meta_docs.push_back(synthetic_meta_doc(counts, poi_rng));
    }
    out.corpus.validate();
    return out;
}

} // namespace esle
