#pragma once

#include <cstdint>
#include <istream>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace rsseg::geodata {

// Axis-aligned pixel box, (x, y) = top-left corner.
struct BBox {
    int x = 0;
    int y = 0;
    int w = 0;
    int h = 0;

    std::int64_t area() const { return static_cast<std::int64_t>(w) * h; }
    double center_x() const { return x + w / 2.0; }
    double center_y() const { return y + h / 2.0; }
};

enum class Quadrant { TopLeft, TopRight, BottomLeft, BottomRight };

std::string to_string(Quadrant q);
std::optional<Quadrant> quadrant_from_string(const std::string& s);

// A fixed-size tile cut from a source image. Right/bottom edge tiles may be
// smaller than chip_size.
struct ImageChip {
    std::string chip_id;
    std::string source_image_id;
    int origin_x = 0;
    int origin_y = 0;
    int width = 512;
    int height = 512;
    std::string pixel_uri;  // empty = no raster attached
};

struct Detection {
    std::string detection_id;
    std::string chip_id;
    std::string class_name;
    BBox bbox;  // chip-local coordinates
};

// A detection as read from an annotation stream, before chipping.
struct RawDetection {
    std::string source_image_id;
    std::string class_name;
    BBox bbox;  // source-image coordinates
    std::size_t source_index = 0;
};

enum class InputFormat { XViewGeoJson, Jsonl };

struct RecordError {
    std::size_t index = 0;  // line number (jsonl) or feature index (geojson), 1-based
    std::string message;
};

struct IngestResult {
    std::vector<RawDetection> detections;
    std::vector<RecordError> errors;
    std::size_t zero_area_dropped = 0;
    std::size_t unknown_class_count = 0;
};

// Parses an annotation stream. Malformed records are reported per record and
// do not abort the run; degenerate (zero-area) boxes are dropped and counted.
IngestResult ingest_detections(std::istream& source, InputFormat format);

// Standard xView type_id -> class name table; ids absent from it ingest as
// "unknown:<id>".
const std::map<int, std::string>& xview_class_names();

// Trim leading/trailing whitespace and collapse internal runs of spaces.
std::string normalize_class_name(const std::string& name);

struct SourceSize {
    int width = 0;
    int height = 0;
    std::string pixel_uri;
};
using SourceSizeMap = std::map<std::string, SourceSize>;

struct ChipResult {
    std::vector<ImageChip> chips;
    std::vector<Detection> detections;
    std::vector<RecordError> rejected;  // bad or missing source dimensions
    std::size_t dropped_below_min_area = 0;
};

// Tiles each source image into non-overlapping chip_size x chip_size chips
// (partial tiles at the right/bottom edges keep their reduced size) and
// assigns every detection to each tile it intersects, clamped to the tile.
// Clamped copies retaining < min_area_frac of the original box area are
// dropped. Output coordinates are chip-local.
ChipResult chip(const std::vector<RawDetection>& detections,
                const SourceSizeMap& source_sizes,
                int chip_size = 512,
                double min_area_frac = 0.3);

// Quadrant of the box center; left iff center_x < width/2, top iff
// center_y < height/2 (strict, so a center on the midline goes right/bottom).
Quadrant quadrant_of(const Detection& d, const ImageChip& chip);

struct ClassStats {
    struct Entry {
        std::int64_t total = 0;
        std::int64_t train = 0;
        std::int64_t val = 0;
        std::int64_t test = 0;
        double frequency = 0.0;  // total / total_detections
    };
    std::map<std::string, Entry> classes;
    std::int64_t total_detections = 0;
    std::int64_t train_total = 0;
    std::int64_t val_total = 0;
    std::int64_t test_total = 0;
};

enum class Split { Train, Val, Test };

std::string to_string(Split s);
std::optional<Split> split_from_string(const std::string& s);

struct SplitRatios {
    double train = 7205.0 / 9205.0;
    double val = 500.0 / 9205.0;
    double test = 1500.0 / 9205.0;
};

struct SplitAssignment {
    std::map<std::string, Split> by_chip;
    std::uint64_t seed = 0;
};

// Seeded shuffle of the (deduplicated) chip ids, then contiguous blocks sized
// by largest-remainder rounding of the ratios. Pure function of (ids, seed).
SplitAssignment make_splits(const std::vector<std::string>& chip_ids,
                            std::uint64_t seed,
                            const SplitRatios& ratios = SplitRatios{});

ClassStats compute_class_stats(const std::vector<Detection>& detections,
                               const SplitAssignment* splits = nullptr);

// True iff d is the only detection of its class in its quadrant
// (count < unique_max, counting d itself).
bool is_unique(const Detection& d,
               const std::vector<Detection>& peers,
               const ImageChip& chip,
               int unique_max = 2);

// True iff d's class accounts for strictly less than interest_frac of the
// working corpus. Throws std::invalid_argument if the class is missing from
// the stats (corpus mismatch).
bool is_interesting(const Detection& d,
                    const ClassStats& stats,
                    double interest_frac = 0.5);

// Detections passing both filters, sorted by (chip_id, detection_id). Every
// detection must reference a chip in `chips`.
std::vector<Detection> filter_candidates(const std::vector<ImageChip>& chips,
                                         const std::vector<Detection>& detections,
                                         double interest_frac = 0.5,
                                         int unique_max = 2);

}  // namespace rsseg::geodata
