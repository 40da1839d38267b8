#pragma once

#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "rsseg/geodata.hpp"
#include "rsseg/mask.hpp"

namespace rsseg::maskgen {

// Inference settings forwarded verbatim to the segmentation backend.
struct SamConfig {
    int points_per_side = 128;
    double pred_iou_thresh = 0.95;
    double stability_score_thresh = 0.95;
    int min_mask_region_area = 80;
};

struct MaskPart {
    BinaryMask mask;
    std::int64_t overlap_with_bbox = 0;  // pixels of the part inside the bbox rectangle
};

// What a backend needs to know about the chip being segmented. Raster data is
// addressed by URI; this process never decodes pixels.
struct ChipRef {
    std::string chip_id;
    int width = 0;
    int height = 0;
    std::string pixel_uri;
};

struct BackendUnavailable : std::runtime_error {
    explicit BackendUnavailable(const std::string& msg) : std::runtime_error(msg) {}
};

struct ShapeMismatch : std::runtime_error {
    explicit ShapeMismatch(const std::string& msg) : std::runtime_error(msg) {}
};

class SegmentationBackend {
public:
    virtual ~SegmentationBackend() = default;
    virtual std::string name() const = 0;
    // Part masks for one bbox prompt, each with the dims of the chip.
    virtual std::vector<BinaryMask> segment(const ChipRef& chip,
                                            const geodata::BBox& bbox,
                                            const SamConfig& cfg) = 0;
};

// Returns exactly one part: the filled bbox rectangle. Lets the whole pipeline
// run without any segmentation service.
class RectangleStubBackend final : public SegmentationBackend {
public:
    std::string name() const override { return "rect-stub"; }
    std::vector<BinaryMask> segment(const ChipRef& chip,
                                    const geodata::BBox& bbox,
                                    const SamConfig& cfg) override;
};

// POST {endpoint}/segment with the chip reference, bbox and config; expects
// {parts: [{rle_counts, width, height}]}.
class HttpSegmentationBackend final : public SegmentationBackend {
public:
    explicit HttpSegmentationBackend(std::string endpoint, double timeout_s = 60.0);
    ~HttpSegmentationBackend() override;
    std::string name() const override { return "http"; }
    std::vector<BinaryMask> segment(const ChipRef& chip,
                                    const geodata::BBox& bbox,
                                    const SamConfig& cfg) override;

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

// Asks the backend for part masks, validates their dims against the chip and
// computes each part's pixel overlap with the bbox rectangle.
std::vector<MaskPart> segment_bbox(SegmentationBackend& backend,
                                   const ChipRef& chip,
                                   const geodata::BBox& bbox,
                                   const SamConfig& cfg);

struct MergeResult {
    BinaryMask mask;
    bool degenerate = false;  // no part cleared the overlap threshold
    int parts_used = 0;
};

// Pixel-wise union of every part overlapping the bbox by strictly more than
// min_overlap_px pixels. When none qualify the mask is empty and the record
// is flagged degenerate.
MergeResult merge_parts(const std::vector<MaskPart>& parts,
                        const geodata::BBox& bbox,
                        int min_overlap_px = 80);

std::int64_t bbox_overlap(const BinaryMask& mask, const geodata::BBox& bbox);

}  // namespace rsseg::maskgen
