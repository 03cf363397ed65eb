#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "esle/error.hpp"
#include "esle/io.hpp"

namespace esle {

// ---------------------------------------------------------------------------
// Count classes (14) and binary label classes (18), both in fixed order.
// ---------------------------------------------------------------------------

inline constexpr std::size_t kMetaClassCount = 14;

inline constexpr std::array<const char*, kMetaClassCount> kMetaClassNames = {
    "buildings", "highway",  "peak",       "water",   "river",   "railway",  "rail_station",
    "park",      "playground", "road",     "airport", "trail",   "farmland", "grassland"};

enum class MetaClass : std::size_t {
    buildings = 0,
    highway,
    peak,
    water,
    river,
    railway,
    rail_station,
    park,
    playground,
    road,
    airport,
    trail,
    farmland,
    grassland,
};

inline constexpr std::size_t kLabelCount = 18;

inline constexpr std::array<const char*, kLabelCount> kLabelNames = {
    "building_less", "building_some", "building_more", "highway",   "peak",      "water",
    "river",         "railway",       "rail_station",  "park",      "playground", "road_less",
    "road_some",     "road_more",     "airport",       "trail",     "farmland",  "grassland"};

struct MetaCounts {
    std::array<std::int64_t, kMetaClassCount> counts{};

    std::int64_t& operator[](MetaClass c) { return counts[static_cast<std::size_t>(c)]; }
    std::int64_t operator[](MetaClass c) const { return counts[static_cast<std::size_t>(c)]; }

    bool operator==(const MetaCounts&) const = default;

    void validate() const {
        for (std::size_t i = 0; i < kMetaClassCount; ++i)
            if (counts[i] < 0)
                throw ValueError(std::string("negative count for ") + kMetaClassNames[i]);
    }
};

struct MetaLabel {
    std::array<std::uint8_t, kLabelCount> bits{};

    bool operator==(const MetaLabel&) const = default;

    // The three building bits and the three road bits are each one-hot.
    void validate() const {
        for (std::uint8_t b : bits)
            if (b > 1) throw ValueError("label bit outside {0,1}");
        if (bits[0] + bits[1] + bits[2] != 1)
            throw ValueError("building bits not one-hot");
        if (bits[11] + bits[12] + bits[13] != 1)
            throw ValueError("road bits not one-hot");
    }
};

// Bucket boundaries: few [0,lo), some [lo,hi] (closed), many (hi,inf).
inline int bucket3(std::int64_t count, std::int64_t lo, std::int64_t hi) {
    if (count < lo) return 0;
    if (count <= hi) return 1;
    return 2;
}

inline MetaLabel binarize_meta(const MetaCounts& mc) {
    mc.validate();
    MetaLabel y{};
    y.bits[static_cast<std::size_t>(bucket3(mc[MetaClass::buildings], 3, 60))] = 1;
    y.bits[11 + static_cast<std::size_t>(bucket3(mc[MetaClass::road], 15, 30))] = 1;

    auto exist = [&](MetaClass c) { return mc[c] > 0 ? std::uint8_t{1} : std::uint8_t{0}; };
    y.bits[3] = exist(MetaClass::highway);
    y.bits[4] = exist(MetaClass::peak);
    y.bits[5] = exist(MetaClass::water);
    y.bits[6] = exist(MetaClass::river);
    y.bits[7] = exist(MetaClass::railway);
    y.bits[8] = exist(MetaClass::rail_station);
    y.bits[9] = exist(MetaClass::park);
    y.bits[10] = exist(MetaClass::playground);
    y.bits[14] = exist(MetaClass::airport);
    y.bits[15] = exist(MetaClass::trail);
    y.bits[16] = exist(MetaClass::farmland);
    y.bits[17] = exist(MetaClass::grassland);
    return y;
}

// ---------------------------------------------------------------------------
// Tag-predicate rules mapping OSM-style tags to count classes.
// ---------------------------------------------------------------------------

// One predicate of the forms  key=value  |  key=*  |  !key=value  |  !key=*.
// A class matches an element when at least one positive predicate matches and
// no negated predicate does.
struct TagPredicate {
    std::string key;
    std::string value; // empty with wildcard=true means "any value"
    bool wildcard = false;
    bool negate = false;

    static TagPredicate parse(const std::string& text) {
        TagPredicate p;
        std::string body = text;
        if (!body.empty() && body[0] == '!') {
            p.negate = true;
            body = body.substr(1);
        }
        auto eq = body.find('=');
        if (eq == std::string::npos || eq == 0)
            throw FormatError("bad predicate (want key=value or key=*): " + text);
        p.key = body.substr(0, eq);
        std::string v = body.substr(eq + 1);
        if (v == "*") {
            p.wildcard = true;
        } else if (v.empty()) {
            throw FormatError("bad predicate (empty value): " + text);
        } else {
            p.value = v;
        }
        return p;
    }

    std::string str() const {
        return (negate ? "!" : "") + key + "=" + (wildcard ? "*" : value);
    }

    bool matches(const std::map<std::string, std::string>& tags) const {
        auto it = tags.find(key);
        if (it == tags.end()) return false;
        return wildcard || it->second == value;
    }
};

struct RuleTable {
    // Indexed in kMetaClassNames order.
    std::array<std::vector<TagPredicate>, kMetaClassCount> rules;

    bool class_matches(std::size_t c, const std::map<std::string, std::string>& tags) const {
        bool any = false;
        for (const auto& p : rules[c]) {
            if (p.negate) {
                if (p.matches(tags)) return false;
            } else if (!any && p.matches(tags)) {
                any = true;
            }
        }
        return any;
    }
};

inline RuleTable default_rule_table() {
    auto preds = [](std::initializer_list<const char*> texts) {
        std::vector<TagPredicate> v;
        for (const char* t : texts) v.push_back(TagPredicate::parse(t));
        return v;
    };
    RuleTable t;
    t.rules[static_cast<std::size_t>(MetaClass::buildings)] = preds({"building=*"});
    t.rules[static_cast<std::size_t>(MetaClass::highway)] =
        preds({"highway=motorway", "highway=trunk", "highway=motorway_link", "highway=trunk_link"});
    // Everything routable that is neither a major highway nor a walking path.
    t.rules[static_cast<std::size_t>(MetaClass::road)] =
        preds({"highway=*", "!highway=motorway", "!highway=trunk", "!highway=motorway_link",
               "!highway=trunk_link", "!highway=path", "!highway=track", "!highway=footway"});
    t.rules[static_cast<std::size_t>(MetaClass::trail)] =
        preds({"highway=path", "highway=track", "highway=footway"});
    t.rules[static_cast<std::size_t>(MetaClass::peak)] = preds({"natural=peak"});
    t.rules[static_cast<std::size_t>(MetaClass::water)] = preds({"natural=water"});
    t.rules[static_cast<std::size_t>(MetaClass::river)] =
        preds({"waterway=river", "waterway=stream", "waterway=canal"});
    t.rules[static_cast<std::size_t>(MetaClass::railway)] = preds({"railway=rail"});
    t.rules[static_cast<std::size_t>(MetaClass::rail_station)] = preds({"railway=station"});
    t.rules[static_cast<std::size_t>(MetaClass::park)] = preds({"leisure=park"});
    t.rules[static_cast<std::size_t>(MetaClass::playground)] = preds({"leisure=playground"});
    t.rules[static_cast<std::size_t>(MetaClass::airport)] = preds({"aeroway=aerodrome"});
    t.rules[static_cast<std::size_t>(MetaClass::farmland)] = preds({"landuse=farmland"});
    t.rules[static_cast<std::size_t>(MetaClass::grassland)] =
        preds({"landuse=grass", "landuse=grassland", "landuse=meadow"});
    return t;
}

inline json rule_table_to_json(const RuleTable& t) {
    json j = json::object();
    for (std::size_t c = 0; c < kMetaClassCount; ++c) {
        json arr = json::array();
        for (const auto& p : t.rules[c]) arr.push_back(p.str());
        j[kMetaClassNames[c]] = arr;
    }
    return j;
}

inline RuleTable rule_table_from_json(const json& j) {
    if (!j.is_object()) throw FormatError("rule table: expected a JSON object");
    RuleTable t;
    for (std::size_t c = 0; c < kMetaClassCount; ++c) {
        auto it = j.find(kMetaClassNames[c]);
        if (it == j.end())
            throw FormatError(std::string("rule table: missing class ") + kMetaClassNames[c]);
        for (const auto& entry : *it) t.rules[c].push_back(TagPredicate::parse(entry.get<std::string>()));
    }
    return t;
}

// ---------------------------------------------------------------------------
// Overpass-style documents: {"elements": [{..., "tags": {k: v}}, ...]}
// ---------------------------------------------------------------------------

inline const json& overpass_elements(const json& doc) {
    auto it = doc.find("elements");
    if (it == doc.end() || !it->is_array())
        throw FormatError("document missing `elements` array");
    return *it;
}

inline std::map<std::string, std::string> element_tags(const json& element) {
    std::map<std::string, std::string> tags;
    auto it = element.find("tags");
    if (it != element.end() && it->is_object())
        for (const auto& [k, v] : it->items())
            if (v.is_string()) tags[k] = v.get<std::string>();
    return tags;
}

// Count one per element per matching class; an element may hit several classes.
inline MetaCounts parse_overpass_counts(const json& doc, const RuleTable& rules) {
    MetaCounts mc{};
    for (const auto& el : overpass_elements(doc)) {
        auto tags = element_tags(el);
        if (tags.empty()) continue;
        for (std::size_t c = 0; c < kMetaClassCount; ++c)
            if (rules.class_matches(c, tags)) ++mc.counts[c];
    }
    return mc;
}

// ---------------------------------------------------------------------------
// POI vocabulary and count vectors over `amenity` tag values.
// ---------------------------------------------------------------------------

struct PoiVocabulary {
    std::vector<std::string> names; // sorted, distinct

    std::size_t size() const { return names.size(); }

    // Index of a name, or npos when absent.
    static constexpr std::size_t npos = static_cast<std::size_t>(-1);
    std::size_t index_of(const std::string& name) const {
        auto it = std::lower_bound(names.begin(), names.end(), name);
        if (it == names.end() || *it != name) return npos;
        return static_cast<std::size_t>(it - names.begin());
    }
};

using PoiVector = std::vector<std::int64_t>;

inline PoiVocabulary build_poi_vocab(const std::vector<json>& docs) {
    std::set<std::string> seen;
    for (std::size_t i = 0; i < docs.size(); ++i) {
        try {
            for (const auto& el : overpass_elements(docs[i])) {
                auto tags = element_tags(el);
                auto it = tags.find("amenity");
                if (it != tags.end()) seen.insert(it->second);
            }
        } catch (const FormatError& e) {
            throw FormatError("document " + std::to_string(i) + ": " + e.what());
        }
    }
    PoiVocabulary v;
    v.names.assign(seen.begin(), seen.end());
    return v;
}

inline PoiVector poi_vector(const json& doc, const PoiVocabulary& vocab) {
    PoiVector counts(vocab.size(), 0);
    for (const auto& el : overpass_elements(doc)) {
        auto tags = element_tags(el);
        auto it = tags.find("amenity");
        if (it == tags.end()) continue;
        auto idx = vocab.index_of(it->second);
        if (idx != PoiVocabulary::npos) ++counts[idx];
    }
    return counts;
}

// ---------------------------------------------------------------------------
// Labels file: one JSON line per tile {"n", "counts", "label", "poi"}.
// ---------------------------------------------------------------------------

struct LabelRecord {
    std::int64_t n = 0;
    MetaCounts counts;
    MetaLabel label;
    PoiVector poi;
};

inline void write_labels_file(const std::filesystem::path& path,
                              const std::vector<LabelRecord>& records) {
    std::vector<json> lines;
    lines.reserve(records.size());
    for (const auto& r : records) {
        json j;
        j["n"] = r.n;
        j["counts"] = r.counts.counts;
        j["label"] = r.label.bits;
        j["poi"] = r.poi;
        lines.push_back(std::move(j));
    }
    write_jsonl(path, lines);
}

inline std::vector<LabelRecord> read_labels_file(const std::filesystem::path& path) {
    std::vector<LabelRecord> out;
    for (const auto& j : read_jsonl(path)) {
        LabelRecord r;
        r.n = j.at("n").get<std::int64_t>();
        auto counts = j.at("counts").get<std::vector<std::int64_t>>();
        if (counts.size() != kMetaClassCount)
            throw FormatError(path.string() + ": counts length != " +
                              std::to_string(kMetaClassCount));
        std::copy(counts.begin(), counts.end(), r.counts.counts.begin());
        auto bits = j.at("label").get<std::vector<int>>();
        if (bits.size() != kLabelCount)
            throw FormatError(path.string() + ": label length != " + std::to_string(kLabelCount));
        for (std::size_t i = 0; i < kLabelCount; ++i)
            r.label.bits[i] = static_cast<std::uint8_t>(bits[i]);
        if (j.contains("poi")) r.poi = j.at("poi").get<PoiVector>();
        out.push_back(std::move(r));
    }
    return out;
}

} // namespace esle
