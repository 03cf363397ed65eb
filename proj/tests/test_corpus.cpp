#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <set>

#include "esle/corpus.hpp"
#include "esle/error.hpp"

using namespace esle;

namespace {

TileImage constant_tile(std::size_t size, const std::array<int, 3>& rgb,
                        Location loc = {}) {
    TileImage t;
    t.location = loc;
    t.size = size;
    t.pixels.reserve(kTileChannels * size * size);
    for (std::size_t c = 0; c < kTileChannels; ++c)
        t.pixels.insert(t.pixels.end(), size * size, rgb[c] / 255.0);
    return t;
}

} // namespace

TEST_CASE("tile layout and validation") {
    TileImage t;
    t.size = 4;
    t.pixels.assign(kTileChannels * 16, 0.0);
    t.at(1, 2, 3) = 0.5;
    CHECK(t.pixels[1 * 16 + 2 * 4 + 3] == 0.5);
    t.validate();

    t.pixels.push_back(0.0);
    CHECK_THROWS_AS(t.validate(), ShapeError);
    t.pixels.pop_back();
    t.at(0, 0, 0) = 1.5;
    CHECK_THROWS_AS(t.validate(), ValueError);
    t.at(0, 0, 0) = -0.1;
    CHECK_THROWS_AS(t.validate(), ValueError);

    TileImage empty;
    CHECK_THROWS_AS(empty.validate(), ValueError);
}

TEST_CASE("pixel variance") {
    auto flat = constant_tile(16, {100, 100, 100});
    CHECK(pixel_variance(flat) == 0.0);

    // half the values 0, half 1 -> population variance exactly 1/4
    TileImage mixed;
    mixed.size = 4;
    mixed.pixels.assign(kTileChannels * 16, 0.0);
    for (std::size_t i = 0; i < mixed.pixels.size() / 2; ++i) mixed.pixels[i] = 1.0;
    CHECK(pixel_variance(mixed) == 0.25);
}

TEST_CASE("quarter-turn rotation") {
    TileImage t;
    t.size = 2;
    // channel k holds [[a,b],[c,d]] + 0.1k so each channel is distinct
    t.pixels = {0.1, 0.2, 0.3, 0.4, 0.2, 0.3, 0.4, 0.5, 0.3, 0.4, 0.5, 0.6};

    const auto r1 = rotate_tile(t, 1);
    // clockwise: top row becomes right column
    CHECK(r1.at(0, 0, 0) == 0.3);
    CHECK(r1.at(0, 0, 1) == 0.1);
    CHECK(r1.at(0, 1, 0) == 0.4);
    CHECK(r1.at(0, 1, 1) == 0.2);
    CHECK(r1.at(2, 0, 1) == 0.3);

    CHECK(rotate_tile(t, 0).pixels == t.pixels);
    CHECK(rotate_tile(rotate_tile(t, 1), 1).pixels == rotate_tile(t, 2).pixels);
    auto round = rotate_tile(rotate_tile(rotate_tile(rotate_tile(t, 1), 1), 1), 1);
    CHECK(round.pixels == t.pixels);

    CHECK_THROWS_AS(rotate_tile(t, -1), ValueError);
    CHECK_THROWS_AS(rotate_tile(t, 4), ValueError);
}

TEST_CASE("ppm round trip") {
    TileImage t;
    t.size = 16;
    t.location = {35.5, 139.5};
    t.pixels.resize(kTileChannels * 16 * 16);
    // use exact k/255 values so the byte format is lossless
    for (std::size_t i = 0; i < t.pixels.size(); ++i)
        t.pixels[i] = static_cast<double>((i * 37) % 256 % 255) / 255.0;

    const auto ppm = tile_to_ppm(t);
    CHECK(ppm.substr(0, 3) == "P6\n");
    const auto back = tile_from_ppm(ppm, t.location);
    CHECK(back.size == t.size);
    CHECK(back.pixels == t.pixels);
    CHECK(back.location.lat == 35.5);

    CHECK_THROWS_AS(tile_from_ppm("P5\n2 2\n255\n----"), FormatError);
    CHECK_THROWS_AS(tile_from_ppm("P6\n2 2\n65535\n----"), FormatError);
    CHECK_THROWS_AS(tile_from_ppm("P6\n2 3\n255\n------------------"), FormatError);
    CHECK_THROWS_AS(tile_from_ppm(ppm.substr(0, ppm.size() / 2)), FormatError);
}

TEST_CASE("corpus save and load round trip") {
    const auto made = generate_synthetic_corpus(6, 32, 77);
    const auto dir = std::filesystem::temp_directory_path() / "esle_corpus_rt";
    std::filesystem::remove_all(dir);
    save_corpus(dir, made.corpus);
    const auto back = load_corpus(dir);
    REQUIRE(back.size() == made.corpus.size());
    for (std::size_t i = 0; i < back.size(); ++i) {
        CHECK(back.tiles[i].pixels == made.corpus.tiles[i].pixels);
        CHECK(back.manifest[i].n == made.corpus.manifest[i].n);
        CHECK(back.manifest[i].location.lat == made.corpus.manifest[i].location.lat);
        CHECK(back.manifest[i].location.lon == made.corpus.manifest[i].location.lon);
        CHECK(back.manifest[i].flat == made.corpus.manifest[i].flat);
    }
    std::filesystem::remove_all(dir);
    CHECK_THROWS_AS(load_corpus(dir), IoError);
}

TEST_CASE("corpus validation") {
    TileCorpus c;
    c.tiles.push_back(constant_tile(16, {1, 2, 3}, {35.0, 139.0}));
    c.manifest.push_back({0, {35.0, 139.0}, "synthetic", false});
    c.validate();

    auto dup = c;
    dup.tiles.push_back(constant_tile(16, {4, 5, 6}, {35.0, 139.0}));
    dup.manifest.push_back({1, {35.0, 139.0}, "synthetic", false});
    CHECK_THROWS_AS(dup.validate(), ValueError); // duplicate location

    auto sparse = c;
    sparse.tiles.push_back(constant_tile(16, {4, 5, 6}, {35.1, 139.0}));
    sparse.manifest.push_back({5, {35.1, 139.0}, "synthetic", false});
    CHECK_THROWS_AS(sparse.validate(), ValueError); // indices not dense

    auto uneven = c;
    uneven.tiles.push_back(constant_tile(16, {4, 5, 6}, {35.1, 139.0}));
    CHECK_THROWS_AS(uneven.validate(), ValueError);
}

TEST_CASE("scene cell ownership partitions the grid") {
    const auto& owned = scene_cell_ownership();
    std::set<std::size_t> seen;
    std::size_t total = 0;
    for (std::size_t c = 0; c < kMetaClassCount; ++c) {
        CHECK(owned[c].size() == kSceneCellBudget[c]);
        for (auto cell : owned[c]) {
            CHECK(cell < kSceneGrid * kSceneGrid);
            CHECK(seen.insert(cell).second); // disjoint
        }
        total += owned[c].size();
    }
    CHECK(total == 252); // the remaining 4 of 256 cells stay background
    // stable across calls
    CHECK(scene_cell_ownership()[0] == owned[0]);
}

TEST_CASE("glyphs are non-empty at any cell size") {
    for (std::size_t c = 0; c < kMetaClassCount; ++c)
        for (std::size_t px : {1u, 2u, 3u, 4u, 7u})
            CHECK(scene_glyph_area(c, px) >= 1);
}

TEST_CASE("synthetic tiles honor the request exactly") {
    ClassProfile p{};
    p.want[static_cast<std::size_t>(MetaClass::buildings)] = 40;
    p.want[static_cast<std::size_t>(MetaClass::road)] = 20;
    p.want[static_cast<std::size_t>(MetaClass::park)] = 3;
    p.want[static_cast<std::size_t>(MetaClass::water)] = 1;

    auto [tile, counts] = generate_synthetic_tile(9001, 64, p);
    CHECK(counts.counts == p.want);
    CHECK(recount_by_color(tile).counts == p.want);

    // deterministic in the seed
    auto [tile2, counts2] = generate_synthetic_tile(9001, 64, p);
    CHECK(tile2.pixels == tile.pixels);
    auto [tile3, c3] = generate_synthetic_tile(9002, 64, p);
    CHECK(tile3.pixels != tile.pixels);

    // over-capacity request rejected
    ClassProfile over{};
    over.want[static_cast<std::size_t>(MetaClass::buildings)] = 97;
    CHECK_THROWS_AS(generate_synthetic_tile(1, 64, over), ValueError);
    ClassProfile neg{};
    neg.want[0] = -1;
    CHECK_THROWS_AS(generate_synthetic_tile(1, 64, neg), ValueError);
    CHECK_THROWS_AS(generate_synthetic_tile(1, 8, p), ValueError); // size < 16
}

TEST_CASE("per-class placement streams are independent") {
    ClassProfile full{};
    full.want[static_cast<std::size_t>(MetaClass::buildings)] = 30;
    full.want[static_cast<std::size_t>(MetaClass::road)] = 18;
    full.want[static_cast<std::size_t>(MetaClass::park)] = 4;

    ClassProfile no_road = full;
    no_road.want[static_cast<std::size_t>(MetaClass::road)] = 0;

    auto [a, ca] = generate_synthetic_tile(555, 64, full);
    auto [b, cb] = generate_synthetic_tile(555, 64, no_road);

    // removing the road request must only clear road pixels back to background
    const std::size_t road = static_cast<std::size_t>(MetaClass::road);
    const double rr = kSceneColors[road][0] / 255.0;
    const double rg = kSceneColors[road][1] / 255.0;
    const double rb = kSceneColors[road][2] / 255.0;
    const double lr = kSceneLandColor[0] / 255.0;
    std::size_t changed = 0;
    for (std::size_t r = 0; r < a.size; ++r)
        for (std::size_t col = 0; col < a.size; ++col) {
            const bool same = a.at(0, r, col) == b.at(0, r, col) &&
                              a.at(1, r, col) == b.at(1, r, col) &&
                              a.at(2, r, col) == b.at(2, r, col);
            if (same) continue;
            ++changed;
            CHECK(a.at(0, r, col) == rr);
            CHECK(a.at(1, r, col) == rg);
            CHECK(a.at(2, r, col) == rb);
            CHECK(b.at(0, r, col) == lr);
        }
    const std::size_t cell_px = a.size / kSceneGrid;
    CHECK(changed == 18 * scene_glyph_area(road, cell_px));
    auto rec = recount_by_color(b);
    auto want = ca;
    want.counts[road] = 0;
    CHECK(rec.counts == want.counts);
}

TEST_CASE("flat filter keeps a bounded sample of each kind") {
    TileCorpus c;
    auto add = [&](TileImage t) {
        t.location = {35.0 + 0.01 * static_cast<double>(c.size()), 139.0};
        ManifestRecord m;
        m.n = static_cast<std::int64_t>(c.size());
        m.location = t.location;
        c.tiles.push_back(std::move(t));
        c.manifest.push_back(m);
    };
    add(constant_tile(16, kSceneSeaColor));  // 0 sea
    add(constant_tile(16, kSceneSeaColor));  // 1 sea
    add(constant_tile(16, kSceneLandColor)); // 2 land
    add(constant_tile(16, kSceneLandColor)); // 3 land
    add(constant_tile(16, kSceneLandColor)); // 4 land
    ClassProfile p{};
    p.want[0] = 10;
    add(generate_synthetic_tile(7, 16, p).first); // 5 textured
    add(generate_synthetic_tile(8, 16, p).first); // 6 textured

    const auto plan = plan_flat_filter(c, 1, 42);
    CHECK(plan.is_flat == std::vector<bool>{true, true, true, true, true, false, false});
    REQUIRE(plan.kept.size() == 4); // one sea + one land + the two textured
    CHECK(std::is_sorted(plan.kept.begin(), plan.kept.end()));
    int flats = 0, sea = 0;
    for (auto i : plan.kept) {
        if (plan.is_flat[i]) ++flats;
        if (i <= 1) ++sea;
    }
    CHECK(flats == 2);
    CHECK(sea == 1);
    CHECK(plan.kept == plan_flat_filter(c, 1, 42).kept);

    // ample budget keeps everything
    CHECK(plan_flat_filter(c, 10, 42).kept.size() == c.size());

    // a textured tile is never dropped
    std::set<std::size_t> kept_set(plan.kept.begin(), plan.kept.end());
    for (std::size_t i = 0; i < c.size(); ++i)
        if (!kept_set.count(i)) CHECK(pixel_variance(c.tiles[i]) == 0.0);

    const auto filtered = filter_flat_tiles(c, 1, 42);
    REQUIRE(filtered.size() == 4);
    filtered.validate(); // dense reindex
    int flagged = 0;
    for (const auto& m : filtered.manifest)
        if (m.flat) ++flagged;
    CHECK(flagged == 2);
}

TEST_CASE("flat filter edge cases") {
    // corpus with no flat tiles passes through unchanged
    ClassProfile p{};
    p.want[0] = 12;
    TileCorpus textured;
    for (int i = 0; i < 3; ++i) {
        auto t = generate_synthetic_tile(static_cast<std::uint64_t>(i), 16, p).first;
        t.location = {35.0 + 0.01 * i, 139.0};
        textured.tiles.push_back(std::move(t));
        textured.manifest.push_back({i, {35.0 + 0.01 * i, 139.0}, "synthetic", false});
    }
    const auto same = filter_flat_tiles(textured, 0, 1);
    REQUIRE(same.size() == 3);
    for (std::size_t i = 0; i < 3; ++i)
        CHECK(same.tiles[i].pixels == textured.tiles[i].pixels);

    // ten flat tiles, keep three: exactly three survive, stable per seed
    TileCorpus flats;
    for (int i = 0; i < 10; ++i) {
        auto t = generate_synthetic_tile(static_cast<std::uint64_t>(i), 16, ClassProfile{}).first;
        t.location = {35.0 + 0.01 * i, 139.0};
        flats.tiles.push_back(std::move(t));
        flats.manifest.push_back({i, {35.0 + 0.01 * i, 139.0}, "synthetic", false});
    }
    const auto a = filter_flat_tiles(flats, 3, 9);
    CHECK(a.size() == 3);
    const auto b = filter_flat_tiles(flats, 3, 9);
    for (std::size_t i = 0; i < a.size(); ++i)
        CHECK(a.manifest[i].location.lat == b.manifest[i].location.lat);
}

TEST_CASE("synthetic corpus generation") {
    const auto a = generate_synthetic_corpus(30, 32, 2024);
    const auto b = generate_synthetic_corpus(30, 32, 2024);
    REQUIRE(a.corpus.size() == 30);
    REQUIRE(a.truth.size() == 30);
    REQUIRE(a.meta_docs.size() == 30);
    a.corpus.validate();

    for (std::size_t i = 0; i < 30; ++i) {
        CHECK(a.corpus.tiles[i].pixels == b.corpus.tiles[i].pixels);
        CHECK(a.truth[i].counts == b.truth[i].counts);
        CHECK(a.meta_docs[i] == b.meta_docs[i]);
        CHECK(recount_by_color(a.corpus.tiles[i]).counts == a.truth[i].counts);
    }

    // metadata documents reproduce the ground-truth counts under the default rules
    const auto rules = default_rule_table();
    for (std::size_t i = 0; i < 30; ++i) {
        const auto parsed = parse_overpass_counts(a.meta_docs[i], rules);
        CHECK(parsed.counts == a.truth[i].counts);
        // amenity POIs track building mass: floor(b/4) plus up to two extra
        std::int64_t n_poi = 0;
        for (const auto& el : a.meta_docs[i].at("elements"))
            if (el.contains("tags") && el.at("tags").contains("amenity")) ++n_poi;
        const auto base = a.truth[i][MetaClass::buildings] / 4;
        CHECK(n_poi >= base);
        CHECK(n_poi <= base + 2);
    }

    const auto c = generate_synthetic_corpus(30, 32, 2025);
    bool any_diff = false;
    for (std::size_t i = 0; i < 30; ++i)
        if (c.corpus.tiles[i].pixels != a.corpus.tiles[i].pixels) any_diff = true;
    CHECK(any_diff);
}
