#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <map>

#include "esle/error.hpp"
#include "esle/labels.hpp"

using namespace esle;

namespace {

MetaCounts counts_with(MetaClass cls, std::int64_t v) {
    MetaCounts c;
    c[cls] = v;
    return c;
}

} // namespace

TEST_CASE("class and label layouts") {
    CHECK(kMetaClassNames.size() == kMetaClassCount);
    CHECK(kLabelNames.size() == kLabelCount);
    CHECK(kMetaClassNames[0] == std::string("buildings"));
    CHECK(kMetaClassNames[9] == std::string("road"));
    CHECK(kLabelNames[0] == std::string("building_less"));
    CHECK(kLabelNames[2] == std::string("building_more"));
    CHECK(kLabelNames[11] == std::string("road_less"));
    CHECK(kLabelNames[13] == std::string("road_more"));
}

TEST_CASE("building bucket boundaries") {
    // [0,3) / [3,60] / (60,inf)
    const std::map<std::int64_t, std::size_t> expect{
        {0, 0}, {2, 0}, {3, 1}, {59, 1}, {60, 1}, {61, 2}, {1000, 2}};
    for (const auto& [count, bit] : expect) {
        const auto label = binarize_meta(counts_with(MetaClass::buildings, count));
        for (std::size_t j = 0; j < 3; ++j)
            CHECK(label.bits[j] == (j == bit ? 1 : 0));
        label.validate();
    }
}

TEST_CASE("road bucket boundaries") {
    // [0,15) / [15,30] / (30,inf) on bit positions 11..13
    const std::map<std::int64_t, std::size_t> expect{
        {0, 11}, {14, 11}, {15, 12}, {30, 12}, {31, 13}, {500, 13}};
    for (const auto& [count, bit] : expect) {
        const auto label = binarize_meta(counts_with(MetaClass::road, count));
        for (std::size_t j = 11; j < 14; ++j)
            CHECK(label.bits[j] == (j == bit ? 1 : 0));
    }
}

TEST_CASE("existence classes set a single bit") {
    auto label = binarize_meta(counts_with(MetaClass::peak, 1));
    CHECK(label.bits[4] == 1); // after the building triple and highway
    label = binarize_meta(counts_with(MetaClass::peak, 0));
    CHECK(label.bits[4] == 0);
    label = binarize_meta(counts_with(MetaClass::grassland, 7));
    CHECK(label.bits[17] == 1);

    // zero everything: only the two "less" bucket bits are set
    const auto zero = binarize_meta(MetaCounts{});
    int set = 0;
    for (auto b : zero.bits) set += b;
    CHECK(set == 2);
    CHECK(zero.bits[0] == 1);
    CHECK(zero.bits[11] == 1);
}

TEST_CASE("counts and label validation") {
    MetaCounts c;
    c[MetaClass::water] = -1;
    CHECK_THROWS_AS(c.validate(), ValueError);

    MetaLabel broken;
    broken.bits[0] = broken.bits[1] = 1; // two building bucket bits
    broken.bits[11] = 1;
    CHECK_THROWS_AS(broken.validate(), ValueError);

    MetaLabel no_road_bucket;
    no_road_bucket.bits[0] = 1;
    CHECK_THROWS_AS(no_road_bucket.validate(), ValueError);

    MetaLabel not_binary;
    not_binary.bits[0] = 1;
    not_binary.bits[11] = 2;
    CHECK_THROWS_AS(not_binary.validate(), ValueError);
}

TEST_CASE("tag predicate grammar") {
    const auto p = TagPredicate::parse("building=yes");
    CHECK(p.key == "building");
    CHECK(p.value == "yes");
    CHECK_FALSE(p.wildcard);
    CHECK_FALSE(p.negate);
    CHECK(p.str() == "building=yes");

    const auto w = TagPredicate::parse("building=*");
    CHECK(w.wildcard);
    CHECK(w.matches({{"building", "apartments"}}));
    CHECK_FALSE(w.matches({{"amenity", "cafe"}}));

    const auto n = TagPredicate::parse("!highway=path");
    CHECK(n.negate);
    CHECK(n.str() == "!highway=path");

    CHECK_THROWS_AS(TagPredicate::parse("no_equals_sign"), FormatError);
    CHECK_THROWS_AS(TagPredicate::parse("=value"), FormatError);
}

TEST_CASE("default rules classify tag sets") {
    const auto rules = default_rule_table();
    const auto hit = [&](MetaClass c, const std::map<std::string, std::string>& tags) {
        return rules.class_matches(static_cast<std::size_t>(c), tags);
    };

    CHECK(hit(MetaClass::buildings, {{"building", "yes"}}));
    CHECK(hit(MetaClass::buildings, {{"building", "retail"}}));
    CHECK_FALSE(hit(MetaClass::buildings, {{"amenity", "cafe"}}));

    // major highways count as highway, everything else drivable as road
    CHECK(hit(MetaClass::highway, {{"highway", "motorway"}}));
    CHECK_FALSE(hit(MetaClass::highway, {{"highway", "residential"}}));
    CHECK(hit(MetaClass::road, {{"highway", "residential"}}));
    CHECK_FALSE(hit(MetaClass::road, {{"highway", "motorway"}}));
    CHECK_FALSE(hit(MetaClass::road, {{"highway", "path"}}));
    CHECK(hit(MetaClass::trail, {{"highway", "path"}}));
    CHECK(hit(MetaClass::trail, {{"highway", "footway"}}));

    CHECK(hit(MetaClass::rail_station, {{"railway", "station"}}));
    CHECK(hit(MetaClass::railway, {{"railway", "rail"}}));
    CHECK_FALSE(hit(MetaClass::railway, {{"railway", "station"}}));

    CHECK(hit(MetaClass::grassland, {{"landuse", "meadow"}}));
    CHECK_FALSE(hit(MetaClass::grassland, {{"landuse", "farmland"}}));
    CHECK(hit(MetaClass::farmland, {{"landuse", "farmland"}}));
}

TEST_CASE("rule table serialization round trip") {
    const auto rules = default_rule_table();
    const auto j = rule_table_to_json(rules);
    const auto back = rule_table_from_json(j);
    CHECK(rule_table_to_json(back) == j);
    CHECK(j.contains("buildings"));
    CHECK(j.at("peak").at(0).get<std::string>() == "natural=peak");
}

TEST_CASE("overpass document parsing") {
    const json doc = {
        {"elements",
         {{{"type", "node"}, {"id", 1}, {"tags", {{"building", "yes"}}}},
          {{"type", "way"}, {"id", 2}, {"tags", {{"building", "house"}}}},
          {{"type", "node"}, {"id", 3}, {"tags", {{"highway", "residential"}}}},
          {{"type", "node"}, {"id", 4}, {"tags", {{"highway", "motorway"}}}},
          {{"type", "node"}, {"id", 5}}, // untagged
          {{"type", "node"}, {"id", 6}, {"tags", {{"natural", "peak"}}}}}}};

    const auto counts = parse_overpass_counts(doc, default_rule_table());
    CHECK(counts[MetaClass::buildings] == 2);
    CHECK(counts[MetaClass::road] == 1);
    CHECK(counts[MetaClass::highway] == 1);
    CHECK(counts[MetaClass::peak] == 1);
    CHECK(counts[MetaClass::water] == 0);

    CHECK_THROWS_AS(parse_overpass_counts(json{{"foo", 1}}, default_rule_table()),
                    FormatError);
}

TEST_CASE("poi vocabulary and vectors") {
    const json a = {{"elements",
                     {{{"type", "node"}, {"id", 1}, {"tags", {{"amenity", "cafe"}}}},
                      {{"type", "node"}, {"id", 2}, {"tags", {{"amenity", "school"}}}},
                      {{"type", "node"}, {"id", 3}, {"tags", {{"amenity", "cafe"}}}}}}};
    const json b = {{"elements",
                     {{{"type", "node"}, {"id", 4}, {"tags", {{"amenity", "bank"}}}},
                      {{"type", "node"}, {"id", 5}, {"tags", {{"building", "yes"}}}}}}};

    const auto vocab = build_poi_vocab({a, b});
    REQUIRE(vocab.names.size() == 3);
    CHECK(vocab.names[0] == "bank"); // sorted
    CHECK(vocab.names[1] == "cafe");
    CHECK(vocab.names[2] == "school");
    CHECK(vocab.index_of("cafe") == 1);
    CHECK(vocab.index_of("zoo") == PoiVocabulary::npos);

    const auto va = poi_vector(a, vocab);
    CHECK(va == std::vector<std::int64_t>{0, 2, 1});
    const auto vb = poi_vector(b, vocab);
    CHECK(vb == std::vector<std::int64_t>{1, 0, 0});
}

TEST_CASE("labels file round trip") {
    std::vector<LabelRecord> records(3);
    for (std::size_t i = 0; i < records.size(); ++i) {
        records[i].n = static_cast<std::int64_t>(i);
        records[i].counts[MetaClass::buildings] = static_cast<std::int64_t>(5 * i);
        records[i].counts[MetaClass::park] = 1;
        records[i].label = binarize_meta(records[i].counts);
        records[i].poi = {static_cast<std::int64_t>(i), 2};
    }
    const auto path = std::filesystem::temp_directory_path() / "esle_labels_rt.jsonl";
    write_labels_file(path, records);
    const auto back = read_labels_file(path);
    REQUIRE(back.size() == records.size());
    for (std::size_t i = 0; i < records.size(); ++i) {
        CHECK(back[i].n == records[i].n);
        CHECK(back[i].counts.counts == records[i].counts.counts);
        CHECK(back[i].label.bits == records[i].label.bits);
        CHECK(back[i].poi == records[i].poi);
    }
    std::filesystem::remove(path);
}
