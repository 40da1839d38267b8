#include "rsseg/geodata.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <stdexcept>
#include <unordered_map>

#include <json.hpp>

#include "rsseg/rng.hpp"

namespace rsseg::geodata {

namespace {

using Json = nlohmann::json;

std::string pad_int(std::size_t value, int width) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%0*zu", width, value);
    return buf;
}

bool parse_double(const Json& j, double& out) {
    if (j.is_number()) {
        out = j.get<double>();
        return true;
    }
    return false;
}

// "x1,y1,x2,y2" corner string -> rounded pixel corners.
bool parse_corner_string(const std::string& s, long long corners[4]) {
    std::vector<std::string> pieces;
    std::size_t pos = 0;
    while (true) {
        const std::size_t next = s.find(',', pos);
        pieces.push_back(
            s.substr(pos, next == std::string::npos ? std::string::npos : next - pos));
        if (next == std::string::npos) {
            break;
        }
        pos = next + 1;
    }
    if (pieces.size() != 4) {
        return false;
    }
    for (int i = 0; i < 4; ++i) {
        try {
            std::size_t used = 0;
            const double value = std::stod(pieces[static_cast<std::size_t>(i)], &used);
            const std::string& piece = pieces[static_cast<std::size_t>(i)];
            while (used < piece.size() && std::isspace(static_cast<unsigned char>(piece[used]))) {
                ++used;
            }
            if (used != piece.size()) {
                return false;
            }
            corners[i] = std::llround(value);
        } catch (const std::exception&) {
            return false;
        }
    }
    return true;
}

struct QuadKey {
    std::string class_name;
    Quadrant quadrant;
    bool operator<(const QuadKey& other) const {
        if (class_name != other.class_name) {
            return class_name < other.class_name;
        }
        return static_cast<int>(quadrant) < static_cast<int>(other.quadrant);
    }
};

}  // namespace

std::string to_string(Quadrant q) {
    switch (q) {
        case Quadrant::TopLeft: return "top-left";
        case Quadrant::TopRight: return "top-right";
        case Quadrant::BottomLeft: return "bottom-left";
        case Quadrant::BottomRight: return "bottom-right";
    }
    return "top-left";
}

std::optional<Quadrant> quadrant_from_string(const std::string& s) {
    if (s == "top-left") return Quadrant::TopLeft;
    if (s == "top-right") return Quadrant::TopRight;
    if (s == "bottom-left") return Quadrant::BottomLeft;
    if (s == "bottom-right") return Quadrant::BottomRight;
    return std::nullopt;
}

std::string to_string(Split s) {
    switch (s) {
        case Split::Train: return "train";
        case Split::Val: return "val";
        case Split::Test: return "test";
    }
    return "train";
}

std::optional<Split> split_from_string(const std::string& s) {
    if (s == "train") return Split::Train;
    if (s == "val") return Split::Val;
    if (s == "test") return Split::Test;
    return std::nullopt;
}

const std::map<int, std::string>& xview_class_names() {
    static const std::map<int, std::string> table = {
        {11, "Fixed-wing Aircraft"},
        {12, "Small Aircraft"},
        {13, "Cargo Plane"},
        {15, "Helicopter"},
        {17, "Passenger Vehicle"},
        {18, "Small Car"},
        {19, "Bus"},
        {20, "Pickup Truck"},
        {21, "Utility Truck"},
        {23, "Truck"},
        {24, "Cargo Truck"},
        {25, "Truck w/Box"},
        {26, "Truck Tractor"},
        {27, "Trailer"},
        {28, "Truck w/Flatbed"},
        {29, "Truck w/Liquid"},
        {32, "Crane Truck"},
        {33, "Railway Vehicle"},
        {34, "Passenger Car"},
        {35, "Cargo Car"},
        {36, "Flat Car"},
        {37, "Tank car"},
        {38, "Locomotive"},
        {40, "Maritime Vessel"},
        {41, "Motorboat"},
        {42, "Sailboat"},
        {44, "Tugboat"},
        {45, "Barge"},
        {47, "Fishing Vessel"},
        {49, "Ferry"},
        {50, "Yacht"},
        {51, "Container Ship"},
        {52, "Oil Tanker"},
        {53, "Engineering Vehicle"},
        {54, "Tower crane"},
        {55, "Container Crane"},
        {56, "Reach Stacker"},
        {57, "Straddle Carrier"},
        {59, "Mobile Crane"},
        {60, "Dump Truck"},
        {61, "Haul Truck"},
        {62, "Scraper/Tractor"},
        {63, "Front loader/Bulldozer"},
        {64, "Excavator"},
        {65, "Cement Mixer"},
        {66, "Ground Grader"},
        {71, "Hut/Tent"},
        {72, "Shed"},
        {73, "Building"},
        {74, "Aircraft Hangar"},
        {76, "Damaged Building"},
        {77, "Facility"},
        {79, "Construction Site"},
        {83, "Vehicle Lot"},
        {84, "Helipad"},
        {86, "Storage Tank"},
        {89, "Shipping container lot"},
        {91, "Shipping Container"},
        {93, "Pylon"},
        {94, "Tower"},
    };
    return table;
}

std::string normalize_class_name(const std::string& name) {
    std::string out;
    out.reserve(name.size());
    bool in_space = true;  // eats leading whitespace
    for (char c : name) {
        if (std::isspace(static_cast<unsigned char>(c))) {
            if (!in_space) {
                out.push_back(' ');
                in_space = true;
            }
        } else {
            out.push_back(c);
            in_space = false;
        }
    }
    while (!out.empty() && out.back() == ' ') {
        out.pop_back();
    }
    return out;
}

namespace {

void ingest_xview_geojson(std::istream& source, IngestResult& out) {
    Json root = Json::parse(source, nullptr, false);
    if (root.is_discarded() || !root.is_object() || !root.contains("features") ||
        !root["features"].is_array()) {
        out.errors.push_back({0, "not a GeoJSON FeatureCollection"});
        return;
    }
    std::size_t index = 0;
    for (const Json& feature : root["features"]) {
        ++index;
        if (!feature.is_object() || !feature.contains("properties") ||
            !feature["properties"].is_object()) {
            out.errors.push_back({index, "feature has no properties object"});
            continue;
        }
        const Json& props = feature["properties"];

        if (!props.contains("image_id") || !props["image_id"].is_string()) {
            out.errors.push_back({index, "missing image_id"});
            continue;
        }
        const std::string image_id = props["image_id"].get<std::string>();

        if (!props.contains("bounds_imcoords") || !props["bounds_imcoords"].is_string()) {
            out.errors.push_back({index, "missing bounds_imcoords"});
            continue;
        }
        long long corners[4];
        if (!parse_corner_string(props["bounds_imcoords"].get<std::string>(), corners)) {
            out.errors.push_back({index, "unparsable bounds_imcoords '" +
                                             props["bounds_imcoords"].get<std::string>() + "'"});
            continue;
        }

        std::string class_name;
        if (props.contains("type_id")) {
            long long type_id = 0;
            if (props["type_id"].is_number_integer()) {
                type_id = props["type_id"].get<long long>();
            } else if (props["type_id"].is_string()) {
                try {
                    type_id = std::stoll(props["type_id"].get<std::string>());
                } catch (const std::exception&) {
                    out.errors.push_back({index, "non-numeric type_id"});
                    continue;
                }
            } else {
                out.errors.push_back({index, "non-numeric type_id"});
                continue;
            }
            const auto& table = xview_class_names();
            auto it = table.find(static_cast<int>(type_id));
            if (it != table.end()) {
                class_name = it->second;
            } else {
                class_name = "unknown:" + std::to_string(type_id);
                ++out.unknown_class_count;
            }
        } else if (props.contains("class_name") && props["class_name"].is_string()) {
            class_name = props["class_name"].get<std::string>();
        } else if (props.contains("type") && props["type"].is_string()) {
            class_name = props["type"].get<std::string>();
        } else {
            out.errors.push_back({index, "missing type_id / class string"});
            continue;
        }

        class_name = normalize_class_name(class_name);
        if (class_name.empty()) {
            out.errors.push_back({index, "empty class name"});
            continue;
        }

        const long long w = corners[2] - corners[0];
        const long long h = corners[3] - corners[1];
        if (w <= 0 || h <= 0) {
            ++out.zero_area_dropped;
            continue;
        }

        RawDetection d;
        d.source_image_id = image_id;
        d.class_name = class_name;
        d.bbox = {static_cast<int>(corners[0]), static_cast<int>(corners[1]),
                  static_cast<int>(w), static_cast<int>(h)};
        d.source_index = index;
        out.detections.push_back(std::move(d));
    }
}

void ingest_jsonl(std::istream& source, IngestResult& out) {
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(source, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') {
            line.pop_back();
        }
        if (line.empty()) {
            continue;
        }
        Json rec = Json::parse(line, nullptr, false);
        if (rec.is_discarded() || !rec.is_object()) {
            out.errors.push_back({lineno, "invalid JSON record"});
            continue;
        }
        if (!rec.contains("image_id") || !rec["image_id"].is_string()) {
            out.errors.push_back({lineno, "missing image_id"});
            continue;
        }
        if (!rec.contains("class_name") || !rec["class_name"].is_string()) {
            out.errors.push_back({lineno, "missing class_name"});
            continue;
        }
        if (!rec.contains("bbox") || !rec["bbox"].is_array() || rec["bbox"].size() != 4) {
            out.errors.push_back({lineno, "missing bbox [x, y, w, h]"});
            continue;
        }
        double vals[4];
        bool ok = true;
        for (int i = 0; i < 4; ++i) {
            ok = ok && parse_double(rec["bbox"][static_cast<std::size_t>(i)], vals[i]);
        }
        if (!ok) {
            out.errors.push_back({lineno, "non-numeric bbox entry"});
            continue;
        }

        std::string class_name = normalize_class_name(rec["class_name"].get<std::string>());
        if (class_name.empty()) {
            out.errors.push_back({lineno, "empty class name"});
            continue;
        }

        const long long w = std::llround(vals[2]);
        const long long h = std::llround(vals[3]);
        if (w <= 0 || h <= 0) {
            ++out.zero_area_dropped;
            continue;
        }

        RawDetection d;
        d.source_image_id = rec["image_id"].get<std::string>();
        d.class_name = class_name;
        d.bbox = {static_cast<int>(std::llround(vals[0])), static_cast<int>(std::llround(vals[1])),
                  static_cast<int>(w), static_cast<int>(h)};
        d.source_index = lineno;
        out.detections.push_back(std::move(d));
    }
}

}  // namespace

IngestResult ingest_detections(std::istream& source, InputFormat format) {
    IngestResult out;
    if (format == InputFormat::XViewGeoJson) {
        ingest_xview_geojson(source, out);
    } else {
        ingest_jsonl(source, out);
    }
    return out;
}

ChipResult chip(const std::vector<RawDetection>& detections,
                const SourceSizeMap& source_sizes,
                int chip_size,
                double min_area_frac) {
    if (chip_size <= 0) {
        throw std::invalid_argument("chip_size must be positive");
    }
    if (!(min_area_frac > 0.0) || min_area_frac > 1.0) {
        throw std::invalid_argument("min_area_frac must be in (0, 1]");
    }

    ChipResult out;

    auto chip_id_for = [](const std::string& image_id, int row, int col) {
        return image_id + "_r" + pad_int(static_cast<std::size_t>(row), 3) + "_c" +
               pad_int(static_cast<std::size_t>(col), 3);
    };

    // Tile every valid source image so the chip set covers the corpus.
    for (const auto& [image_id, size] : source_sizes) {
        if (size.width < 1 || size.height < 1) {
            continue;
        }
        const int cols = (size.width + chip_size - 1) / chip_size;
        const int rows = (size.height + chip_size - 1) / chip_size;
        for (int r = 0; r < rows; ++r) {
            for (int c = 0; c < cols; ++c) {
                ImageChip ch;
                ch.chip_id = chip_id_for(image_id, r, c);
                ch.source_image_id = image_id;
                ch.origin_x = c * chip_size;
                ch.origin_y = r * chip_size;
                ch.width = std::min(chip_size, size.width - ch.origin_x);
                ch.height = std::min(chip_size, size.height - ch.origin_y);
                if (!size.pixel_uri.empty()) {
                    ch.pixel_uri = size.pixel_uri + "#" + std::to_string(ch.origin_x) + "," +
                                   std::to_string(ch.origin_y) + "," + std::to_string(ch.width) +
                                   "," + std::to_string(ch.height);
                }
                out.chips.push_back(std::move(ch));
            }
        }
    }

    for (const RawDetection& raw : detections) {
        auto size_it = source_sizes.find(raw.source_image_id);
        if (size_it == source_sizes.end()) {
            out.rejected.push_back({raw.source_index, "no dimensions for source image '" +
                                                          raw.source_image_id + "'"});
            continue;
        }
        const SourceSize& size = size_it->second;
        if (size.width < 1 || size.height < 1) {
            out.rejected.push_back({raw.source_index, "source image '" + raw.source_image_id +
                                                          "' smaller than 1 px"});
            continue;
        }

        const std::int64_t original_area = raw.bbox.area();

        // Clamp to the source image, then to each intersecting tile.
        const int sx0 = std::clamp(raw.bbox.x, 0, size.width);
        const int sy0 = std::clamp(raw.bbox.y, 0, size.height);
        const int sx1 = std::clamp(raw.bbox.x + raw.bbox.w, 0, size.width);
        const int sy1 = std::clamp(raw.bbox.y + raw.bbox.h, 0, size.height);
        if (sx1 <= sx0 || sy1 <= sy0) {
            ++out.dropped_below_min_area;
            continue;
        }

        const int col0 = sx0 / chip_size;
        const int col1 = (sx1 - 1) / chip_size;
        const int row0 = sy0 / chip_size;
        const int row1 = (sy1 - 1) / chip_size;
        for (int r = row0; r <= row1; ++r) {
            for (int c = col0; c <= col1; ++c) {
                const int tx0 = c * chip_size;
                const int ty0 = r * chip_size;
                const int tx1 = std::min(tx0 + chip_size, size.width);
                const int ty1 = std::min(ty0 + chip_size, size.height);

                const int ix0 = std::max(sx0, tx0);
                const int iy0 = std::max(sy0, ty0);
                const int ix1 = std::min(sx1, tx1);
                const int iy1 = std::min(sy1, ty1);
                if (ix1 <= ix0 || iy1 <= iy0) {
                    continue;
                }
                const std::int64_t clipped_area =
                    static_cast<std::int64_t>(ix1 - ix0) * (iy1 - iy0);
                if (static_cast<double>(clipped_area) <
                    min_area_frac * static_cast<double>(original_area)) {
                    ++out.dropped_below_min_area;
                    continue;
                }

                Detection d;
                d.chip_id = chip_id_for(raw.source_image_id, r, c);
                d.detection_id = d.chip_id + "_det" + pad_int(raw.source_index, 5);
                d.class_name = raw.class_name;
                d.bbox = {ix0 - tx0, iy0 - ty0, ix1 - ix0, iy1 - iy0};
                out.detections.push_back(std::move(d));
            }
        }
    }

    std::sort(out.detections.begin(), out.detections.end(),
              [](const Detection& a, const Detection& b) {
                  if (a.chip_id != b.chip_id) {
                      return a.chip_id < b.chip_id;
                  }
                  return a.detection_id < b.detection_id;
              });
    return out;
}

Quadrant quadrant_of(const Detection& d, const ImageChip& chip) {
    const bool left = d.bbox.center_x() < chip.width / 2.0;
    const bool top = d.bbox.center_y() < chip.height / 2.0;
    if (top) {
        return left ? Quadrant::TopLeft : Quadrant::TopRight;
    }
    return left ? Quadrant::BottomLeft : Quadrant::BottomRight;
}

SplitAssignment make_splits(const std::vector<std::string>& chip_ids,
                            std::uint64_t seed,
                            const SplitRatios& ratios) {
    const double sum = ratios.train + ratios.val + ratios.test;
    if (!(ratios.train > 0.0) || !(ratios.val > 0.0) || !(ratios.test > 0.0)) {
        throw std::invalid_argument("split ratios must be positive");
    }
    if (std::abs(sum - 1.0) > 1e-6) {
        throw std::invalid_argument("split ratios must sum to 1");
    }

    std::vector<std::string> ids = chip_ids;
    std::sort(ids.begin(), ids.end());
    ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
    if (ids.size() < 3) {
        throw std::invalid_argument("need at least one chip per split group");
    }

    const std::size_t n = ids.size();
    const double targets[3] = {ratios.train * n, ratios.val * n, ratios.test * n};
    std::size_t counts[3];
    double fracs[3];
    std::size_t assigned = 0;
    for (int i = 0; i < 3; ++i) {
        counts[i] = static_cast<std::size_t>(std::floor(targets[i]));
        fracs[i] = targets[i] - static_cast<double>(counts[i]);
        assigned += counts[i];
    }
    // Largest-remainder rounding; ties resolved in (train, val, test) order.
    int order[3] = {0, 1, 2};
    std::sort(order, order + 3, [&](int a, int b) {
        if (fracs[a] != fracs[b]) {
            return fracs[a] > fracs[b];
        }
        return a < b;
    });
    for (int i = 0; assigned < n; ++i) {
        ++counts[order[i % 3]];
        ++assigned;
    }

    Rng rng(seed);
    deterministic_shuffle(ids, rng);

    SplitAssignment out;
    out.seed = seed;
    std::size_t idx = 0;
    for (std::size_t i = 0; i < counts[0]; ++i) {
        out.by_chip[ids[idx++]] = Split::Train;
    }
    for (std::size_t i = 0; i < counts[1]; ++i) {
        out.by_chip[ids[idx++]] = Split::Val;
    }
    for (std::size_t i = 0; i < counts[2]; ++i) {
        out.by_chip[ids[idx++]] = Split::Test;
    }
    return out;
}

ClassStats compute_class_stats(const std::vector<Detection>& detections,
                               const SplitAssignment* splits) {
    ClassStats stats;
    for (const Detection& d : detections) {
        ClassStats::Entry& entry = stats.classes[d.class_name];
        ++entry.total;
        ++stats.total_detections;
        if (splits != nullptr) {
            auto it = splits->by_chip.find(d.chip_id);
            if (it != splits->by_chip.end()) {
                switch (it->second) {
                    case Split::Train:
                        ++entry.train;
                        ++stats.train_total;
                        break;
                    case Split::Val:
                        ++entry.val;
                        ++stats.val_total;
                        break;
                    case Split::Test:
                        ++entry.test;
                        ++stats.test_total;
                        break;
                }
            }
        }
    }
    if (stats.total_detections > 0) {
        for (auto& [name, entry] : stats.classes) {
            entry.frequency =
                static_cast<double>(entry.total) / static_cast<double>(stats.total_detections);
        }
    }
    return stats;
}

bool is_unique(const Detection& d,
               const std::vector<Detection>& peers,
               const ImageChip& chip,
               int unique_max) {
    const Quadrant q = quadrant_of(d, chip);
    int count = 0;
    for (const Detection& p : peers) {
        if (p.class_name == d.class_name && quadrant_of(p, chip) == q) {
            ++count;
        }
    }
    return count < unique_max;
}

bool is_interesting(const Detection& d, const ClassStats& stats, double interest_frac) {
    auto it = stats.classes.find(d.class_name);
    if (it == stats.classes.end()) {
        throw std::invalid_argument("class '" + d.class_name + "' missing from stats");
    }
    return it->second.frequency < interest_frac;
}

std::vector<Detection> filter_candidates(const std::vector<ImageChip>& chips,
                                         const std::vector<Detection>& detections,
                                         double interest_frac,
                                         int unique_max) {
    std::unordered_map<std::string, const ImageChip*> chip_by_id;
    chip_by_id.reserve(chips.size());
    for (const ImageChip& c : chips) {
        chip_by_id[c.chip_id] = &c;
    }

    const ClassStats stats = compute_class_stats(detections);

    // Per-chip (class, quadrant) tallies; equivalent to running is_unique on
    // every detection but linear in the corpus size.
    std::unordered_map<std::string, std::map<QuadKey, int>> tallies;
    std::vector<Quadrant> quadrants(detections.size());
    for (std::size_t i = 0; i < detections.size(); ++i) {
        const Detection& d = detections[i];
        auto it = chip_by_id.find(d.chip_id);
        if (it == chip_by_id.end()) {
            throw std::invalid_argument("detection '" + d.detection_id +
                                        "' references unknown chip '" + d.chip_id + "'");
        }
        quadrants[i] = quadrant_of(d, *it->second);
        ++tallies[d.chip_id][QuadKey{d.class_name, quadrants[i]}];
    }

    std::vector<Detection> kept;
    for (std::size_t i = 0; i < detections.size(); ++i) {
        const Detection& d = detections[i];
        const int same = tallies[d.chip_id][QuadKey{d.class_name, quadrants[i]}];
        if (same >= unique_max) {
            continue;
        }
        if (!is_interesting(d, stats, interest_frac)) {
            continue;
        }
        kept.push_back(d);
    }

    std::sort(kept.begin(), kept.end(), [](const Detection& a, const Detection& b) {
        if (a.chip_id != b.chip_id) {
            return a.chip_id < b.chip_id;
        }
        return a.detection_id < b.detection_id;
    });
    return kept;
}

}  // namespace rsseg::geodata
