#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace rsseg::maskgen {

// Bit-per-pixel binary mask, row-major.
struct BinaryMask {
    int width = 0;
    int height = 0;
    std::vector<bool> data;

    BinaryMask() = default;
    BinaryMask(int w, int h) : width(w), height(h), data(static_cast<std::size_t>(w) * h, false) {}

    bool at(int x, int y) const { return data[static_cast<std::size_t>(y) * width + x]; }
    void set(int x, int y, bool v) { data[static_cast<std::size_t>(y) * width + x] = v; }

    std::int64_t area() const {
        std::int64_t n = 0;
        for (bool b : data) {
            n += b ? 1 : 0;
        }
        return n;
    }

    bool same_dims(const BinaryMask& other) const {
        return width == other.width && height == other.height;
    }

    bool operator==(const BinaryMask& other) const = default;
};

// Fills the given rectangle; the rectangle must lie within the mask.
BinaryMask filled_rect_mask(int width, int height, int rx, int ry, int rw, int rh);

// Uncompressed COCO-style RLE: column-major scan, counts alternating runs of
// zeros and ones, always starting with the zero run (a leading 0 when the
// first pixel is set).
std::vector<std::int64_t> rle_encode(const BinaryMask& mask);

// Throws std::invalid_argument when the counts do not sum to width * height
// or contain a negative entry.
BinaryMask rle_decode(const std::vector<std::int64_t>& counts, int width, int height);

}  // namespace rsseg::maskgen
