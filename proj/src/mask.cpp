#include "rsseg/mask.hpp"

#include <stdexcept>

namespace rsseg::maskgen {

BinaryMask filled_rect_mask(int width, int height, int rx, int ry, int rw, int rh) {
    if (rx < 0 || ry < 0 || rw < 0 || rh < 0 || rx + rw > width || ry + rh > height) {
        throw std::invalid_argument("rectangle outside mask bounds");
    }
    BinaryMask m(width, height);
    for (int y = ry; y < ry + rh; ++y) {
        for (int x = rx; x < rx + rw; ++x) {
            m.set(x, y, true);
        }
    }
    return m;
}

std::vector<std::int64_t> rle_encode(const BinaryMask& mask) {
    std::vector<std::int64_t> counts;
    bool current = false;  // runs alternate starting from zeros
    std::int64_t run = 0;
    for (int x = 0; x < mask.width; ++x) {
        for (int y = 0; y < mask.height; ++y) {
            const bool v = mask.at(x, y);
            if (v == current) {
                ++run;
            } else {
                counts.push_back(run);
                current = v;
                run = 1;
            }
        }
    }
    counts.push_back(run);
    return counts;
}

BinaryMask rle_decode(const std::vector<std::int64_t>& counts, int width, int height) {
    const std::int64_t total = static_cast<std::int64_t>(width) * height;
    std::int64_t sum = 0;
    for (std::int64_t c : counts) {
        if (c < 0) {
            throw std::invalid_argument("negative RLE count");
        }
        sum += c;
    }
    if (sum != total) {
        throw std::invalid_argument("RLE counts sum to " + std::to_string(sum) + ", expected " +
                                    std::to_string(total));
    }
    BinaryMask m(width, height);
    std::int64_t pos = 0;
    bool value = false;
    for (std::int64_t c : counts) {
        for (std::int64_t i = 0; i < c; ++i) {
            const std::int64_t x = pos / height;
            const std::int64_t y = pos % height;
            m.set(static_cast<int>(x), static_cast<int>(y), value);
            ++pos;
        }
        value = !value;
    }
    return m;
}

}  // namespace rsseg::maskgen
