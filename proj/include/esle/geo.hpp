#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <vector>

#include "esle/error.hpp"

namespace esle {

// Geographic coordinate in degrees.
struct Location {
    double lat = 0.0; // [-90, 90]
    double lon = 0.0; // [-180, 180]
};

inline void require_valid(const Location& loc, const char* where = "location") {
    if (!(loc.lat >= -90.0 && loc.lat <= 90.0))
        throw ValueError(std::string(where) + ": latitude out of range: " + std::to_string(loc.lat));
    if (!(loc.lon >= -180.0 && loc.lon <= 180.0))
        throw ValueError(std::string(where) + ": longitude out of range: " + std::to_string(loc.lon));
}

// Web-Mercator limit: tan/asinh blow up at the poles, slippy tiles stop here.
inline constexpr double kMercatorLatLimit = 85.0511;

/*
 * Slippy-map tile indices at a zoom level z (world = 2^z x 2^z tiles):
 *
 *   x = floor( (lon + 180) / 360 * 2^z )
 *   y = floor( (1 - asinh(tan(lat)) / pi) / 2 * 2^z )
 *
 * with lat, lon in degrees and the tan/asinh evaluated in radians.
 * x grows eastward, y grows southward.
 */
inline std::pair<std::int64_t, std::int64_t> location_to_tile_index(const Location& loc, int zoom) {
    if (zoom < 0 || zoom > 22)
        throw ValueError("zoom out of range [0,22]: " + std::to_string(zoom));
    require_valid(loc);
    if (std::abs(loc.lat) >= kMercatorLatLimit)
        throw ValueError("latitude beyond Web-Mercator limit: " + std::to_string(loc.lat));

    const double n = static_cast<double>(std::int64_t{1} << zoom);
    const double lat_rad = loc.lat * std::numbers::pi / 180.0;
    double xf = (loc.lon + 180.0) / 360.0 * n;
    double yf = (1.0 - std::asinh(std::tan(lat_rad)) / std::numbers::pi) / 2.0 * n;

    auto clampi = [&](double v) {
        auto i = static_cast<std::int64_t>(std::floor(v));
        return std::clamp(i, std::int64_t{0}, static_cast<std::int64_t>(n) - 1);
    };
    return {clampi(xf), clampi(yf)};
}

struct BBox {
    double lat_min = 0.0, lat_max = 0.0;
    double lon_min = 0.0, lon_max = 0.0;

    bool empty() const { return lat_max < lat_min || lon_max < lon_min; }
};

/*
 * Grid of tile centers over a bounding box.  Spacing follows the Japanese
 * standard square mesh, where a 500 m cell measures 15 arc-seconds of latitude
 * by 22.5 arc-seconds of longitude; other steps scale those constants linearly:
 *
 *   lat_step = step_m * 15.0  / 500 / 3600  degrees
 *   lon_step = step_m * 22.5  / 500 / 3600  degrees
 *
 * Centers run south to north, west to east, starting at the box minimum, with
 * floor(extent/step)+1 rows/columns so both box edges carry a center when the
 * extent is an exact multiple of the step.
 */
inline std::vector<Location> tile_coverage_grid(const BBox& bbox, double step_m) {
    if (!(step_m > 0.0)) throw ValueError("step_m must be positive");
    if (bbox.empty()) return {};

    const double lat_step = step_m * 15.0 / 500.0 / 3600.0;
    const double lon_step = step_m * 22.5 / 500.0 / 3600.0;
    // Absorb representation error so an exact-multiple extent is not undercounted.
    auto steps = [](double extent, double step) {
        return static_cast<std::size_t>(std::floor(extent / step + 1e-9)) + 1;
    };
    const std::size_t n_lat = steps(bbox.lat_max - bbox.lat_min, lat_step);
    const std::size_t n_lon = steps(bbox.lon_max - bbox.lon_min, lon_step);

    std::vector<Location> centers;
    centers.reserve(n_lat * n_lon);
    for (std::size_t i = 0; i < n_lat; ++i)
        for (std::size_t j = 0; j < n_lon; ++j)
            centers.push_back({bbox.lat_min + static_cast<double>(i) * lat_step,
                               bbox.lon_min + static_cast<double>(j) * lon_step});
    return centers;
}

inline constexpr double kEarthRadiusKm = 6371.0088;

/*
 * Great-circle distance (haversine):
 *
 *   a = sin^2(dlat/2) + cos(lat1) cos(lat2) sin^2(dlon/2)
 *   d = 2 R asin(min(1, sqrt(a)))
 */
inline double haversine_km(const Location& a, const Location& b) {
    require_valid(a, "haversine a");
    require_valid(b, "haversine b");
    const double deg = std::numbers::pi / 180.0;
    const double lat1 = a.lat * deg, lat2 = b.lat * deg;
    const double dlat = (b.lat - a.lat) * deg;
    const double dlon = (b.lon - a.lon) * deg;
    const double sl = std::sin(dlat / 2.0), so = std::sin(dlon / 2.0);
    const double h = sl * sl + std::cos(lat1) * std::cos(lat2) * so * so;
    return 2.0 * kEarthRadiusKm * std::asin(std::min(1.0, std::sqrt(h)));
}

// p-th percentile (linear interpolation between order statistics) of all
// pairwise haversine distances.  Helper for choosing an exclusion radius.
inline double pairwise_distance_percentile(const std::vector<Location>& locs, double pct) {
    if (locs.size() < 2) throw ValueError("need at least two locations");
    if (!(pct >= 0.0 && pct <= 100.0)) throw ValueError("percentile out of [0,100]");
    std::vector<double> d;
    d.reserve(locs.size() * (locs.size() - 1) / 2);
    for (std::size_t i = 0; i < locs.size(); ++i)
        for (std::size_t j = i + 1; j < locs.size(); ++j) d.push_back(haversine_km(locs[i], locs[j]));
    std::sort(d.begin(), d.end());
    const double rank = pct / 100.0 * static_cast<double>(d.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(rank));
    const auto hi = static_cast<std::size_t>(std::ceil(rank));
    const double frac = rank - static_cast<double>(lo);
    return d[lo] + (d[hi] - d[lo]) * frac;
}

} // namespace esle
