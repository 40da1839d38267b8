#include "rsseg/maskgen.hpp"

#include <algorithm>

#include <httplib.h>
#include <json.hpp>

namespace rsseg::maskgen {

using Json = nlohmann::json;

std::vector<BinaryMask> RectangleStubBackend::segment(const ChipRef& chip,
                                                      const geodata::BBox& bbox,
                                                      const SamConfig& cfg) {
    (void)cfg;
    return {filled_rect_mask(chip.width, chip.height, bbox.x, bbox.y, bbox.w, bbox.h)};
}

struct HttpSegmentationBackend::Impl {
    std::string host;
    std::string path_prefix;
    double timeout_s;
};

namespace {

// "http://host:port/prefix" -> (http://host:port, /prefix)
void split_endpoint(const std::string& endpoint, std::string& host, std::string& prefix) {
    std::size_t scheme = endpoint.find("://");
    std::size_t path_start =
        endpoint.find('/', scheme == std::string::npos ? 0 : scheme + 3);
    if (path_start == std::string::npos) {
        host = endpoint;
        prefix.clear();
    } else {
        host = endpoint.substr(0, path_start);
        prefix = endpoint.substr(path_start);
        while (!prefix.empty() && prefix.back() == '/') {
            prefix.pop_back();
        }
    }
}

}  // namespace

HttpSegmentationBackend::HttpSegmentationBackend(std::string endpoint, double timeout_s)
    : impl_(std::make_unique<Impl>()) {
    split_endpoint(endpoint, impl_->host, impl_->path_prefix);
    impl_->timeout_s = timeout_s;
}

HttpSegmentationBackend::~HttpSegmentationBackend() = default;

std::vector<BinaryMask> HttpSegmentationBackend::segment(const ChipRef& chip,
                                                         const geodata::BBox& bbox,
                                                         const SamConfig& cfg) {
    Json body = {
        {"chip_id", chip.chip_id},
        {"chip_uri", chip.pixel_uri},
        {"width", chip.width},
        {"height", chip.height},
        {"bbox", {bbox.x, bbox.y, bbox.w, bbox.h}},
        {"config",
         {{"points_per_side", cfg.points_per_side},
          {"pred_iou_thresh", cfg.pred_iou_thresh},
          {"stability_score_thresh", cfg.stability_score_thresh},
          {"min_mask_region_area", cfg.min_mask_region_area}}},
    };

    httplib::Client client(impl_->host);
    client.set_connection_timeout(static_cast<time_t>(impl_->timeout_s), 0);
    client.set_read_timeout(static_cast<time_t>(impl_->timeout_s), 0);
    auto res = client.Post((impl_->path_prefix + "/segment").c_str(), body.dump(),
                           "application/json");
    if (!res) {
        throw BackendUnavailable("segmentation backend unreachable at " + impl_->host);
    }
    if (res->status < 200 || res->status >= 300) {
        throw BackendUnavailable("segmentation backend returned status " +
                                 std::to_string(res->status));
    }
    Json parsed = Json::parse(res->body, nullptr, false);
    if (parsed.is_discarded() || !parsed.contains("parts") || !parsed["parts"].is_array()) {
        throw BackendUnavailable("segmentation backend returned malformed body");
    }
    std::vector<BinaryMask> parts;
    for (const Json& p : parsed["parts"]) {
        if (!p.contains("rle_counts") || !p.contains("width") || !p.contains("height")) {
            throw BackendUnavailable("segmentation part missing rle_counts/width/height");
        }
        parts.push_back(rle_decode(p["rle_counts"].get<std::vector<std::int64_t>>(),
                                   p["width"].get<int>(), p["height"].get<int>()));
    }
    return parts;
}

std::int64_t bbox_overlap(const BinaryMask& mask, const geodata::BBox& bbox) {
    const int x0 = std::max(bbox.x, 0);
    const int y0 = std::max(bbox.y, 0);
    const int x1 = std::min(bbox.x + bbox.w, mask.width);
    const int y1 = std::min(bbox.y + bbox.h, mask.height);
    std::int64_t n = 0;
    for (int y = y0; y < y1; ++y) {
        for (int x = x0; x < x1; ++x) {
            n += mask.at(x, y) ? 1 : 0;
        }
    }
    return n;
}

std::vector<MaskPart> segment_bbox(SegmentationBackend& backend,
                                   const ChipRef& chip,
                                   const geodata::BBox& bbox,
                                   const SamConfig& cfg) {
    if (cfg.points_per_side <= 0 || cfg.min_mask_region_area <= 0) {
        throw std::invalid_argument("SamConfig integer fields must be positive");
    }
    if (!(cfg.pred_iou_thresh > 0.0) || cfg.pred_iou_thresh > 1.0 ||
        !(cfg.stability_score_thresh > 0.0) || cfg.stability_score_thresh > 1.0) {
        throw std::invalid_argument("SamConfig thresholds must be in (0, 1]");
    }
    std::vector<BinaryMask> raw = backend.segment(chip, bbox, cfg);
    std::vector<MaskPart> parts;
    parts.reserve(raw.size());
    for (BinaryMask& m : raw) {
        if (m.width != chip.width || m.height != chip.height) {
            throw ShapeMismatch("part is " + std::to_string(m.width) + "x" +
                                std::to_string(m.height) + ", chip is " +
                                std::to_string(chip.width) + "x" + std::to_string(chip.height));
        }
        MaskPart part;
        part.overlap_with_bbox = bbox_overlap(m, bbox);
        part.mask = std::move(m);
        parts.push_back(std::move(part));
    }
    return parts;
}

MergeResult merge_parts(const std::vector<MaskPart>& parts,
                        const geodata::BBox& bbox,
                        int min_overlap_px) {
    (void)bbox;
    MergeResult out;
    for (const MaskPart& p : parts) {
        if (!out.mask.data.empty() && !p.mask.same_dims(out.mask)) {
            throw ShapeMismatch("mask parts disagree on dimensions");
        }
        if (out.mask.data.empty()) {
            out.mask = BinaryMask(p.mask.width, p.mask.height);
        }
        if (p.overlap_with_bbox > min_overlap_px) {
            for (std::size_t i = 0; i < p.mask.data.size(); ++i) {
                if (p.mask.data[i]) {
                    out.mask.data[i] = true;
                }
            }
            ++out.parts_used;
        }
    }
    out.degenerate = out.parts_used == 0;
    return out;
}

}  // namespace rsseg::maskgen
