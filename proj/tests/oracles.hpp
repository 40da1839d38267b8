// Test-only reference implementations, written independently of the library
// code paths they check: exhaustive filtering, per-pixel segmentation scoring
// and a direct-from-formula CIDEr-D.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "rsseg/geodata.hpp"
#include "rsseg/mask.hpp"
#include "rsseg/metrics.hpp"
#include "rsseg/rng.hpp"

namespace oracles {

using rsseg::geodata::Detection;
using rsseg::geodata::ImageChip;
using rsseg::maskgen::BinaryMask;

// 0 = TL, 1 = TR, 2 = BL, 3 = BR
inline int brute_quadrant(const Detection& d, const ImageChip& chip) {
    const double cx = d.bbox.x + d.bbox.w / 2.0;
    const double cy = d.bbox.y + d.bbox.h / 2.0;
    int q = 0;
    if (!(cx < chip.width / 2.0)) {
        q += 1;
    }
    if (!(cy < chip.height / 2.0)) {
        q += 2;
    }
    return q;
}

// Quadratic-time recomputation of both filters from scratch.
inline std::vector<Detection> brute_filter(const std::vector<ImageChip>& chips,
                                           const std::vector<Detection>& dets,
                                           double interest_frac = 0.5,
                                           int unique_max = 2) {
    std::vector<Detection> kept;
    for (const Detection& d : dets) {
        const ImageChip* chip = nullptr;
        for (const ImageChip& c : chips) {
            if (c.chip_id == d.chip_id) {
                chip = &c;
                break;
            }
        }
        const int dq = brute_quadrant(d, *chip);
        int same = 0;
        for (const Detection& p : dets) {
            if (p.chip_id == d.chip_id && p.class_name == d.class_name &&
                brute_quadrant(p, *chip) == dq) {
                ++same;
            }
        }
        long long class_total = 0;
        for (const Detection& p : dets) {
            if (p.class_name == d.class_name) {
                ++class_total;
            }
        }
        const double freq =
            static_cast<double>(class_total) / static_cast<double>(dets.size());
        if (same < unique_max && freq < interest_frac) {
            kept.push_back(d);
        }
    }
    std::sort(kept.begin(), kept.end(), [](const Detection& a, const Detection& b) {
        if (a.chip_id != b.chip_id) {
            return a.chip_id < b.chip_id;
        }
        return a.detection_id < b.detection_id;
    });
    return kept;
}

struct RandomCorpus {
    std::vector<ImageChip> chips;
    std::vector<Detection> detections;
};

inline RandomCorpus random_corpus(rsseg::Rng& rng,
                                  std::size_t max_dets = 200,
                                  int max_classes = 8,
                                  int max_chips = 20) {
    using rsseg::uniform_index;
    RandomCorpus corpus;
    const std::size_t n_chips = 1 + uniform_index(rng, static_cast<std::uint64_t>(max_chips));
    for (std::size_t i = 0; i < n_chips; ++i) {
        ImageChip chip;
        chip.chip_id = "chip" + std::to_string(100 + i);
        chip.source_image_id = "src" + std::to_string(i);
        if (uniform_index(rng, 4) == 0) {
            chip.width = 100 + static_cast<int>(uniform_index(rng, 413));
            chip.height = 100 + static_cast<int>(uniform_index(rng, 413));
        }
        corpus.chips.push_back(chip);
    }
    const int n_classes = 1 + static_cast<int>(uniform_index(rng, max_classes));
    const std::size_t n_dets = uniform_index(rng, max_dets + 1);
    for (std::size_t i = 0; i < n_dets; ++i) {
        const ImageChip& chip = corpus.chips[uniform_index(rng, n_chips)];
        Detection d;
        d.chip_id = chip.chip_id;
        char idbuf[32];
        std::snprintf(idbuf, sizeof(idbuf), "d%05zu", i);
        d.detection_id = idbuf;
        d.class_name = "class" + std::to_string(uniform_index(rng, n_classes));
        d.bbox.x = static_cast<int>(uniform_index(rng, chip.width - 1));
        d.bbox.y = static_cast<int>(uniform_index(rng, chip.height - 1));
        d.bbox.w = 1 + static_cast<int>(uniform_index(rng, chip.width - d.bbox.x));
        d.bbox.h = 1 + static_cast<int>(uniform_index(rng, chip.height - d.bbox.y));
        corpus.detections.push_back(d);
    }
    return corpus;
}

inline bool same_detections(const std::vector<Detection>& a, const std::vector<Detection>& b) {
    if (a.size() != b.size()) {
        return false;
    }
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (a[i].detection_id != b[i].detection_id || a[i].chip_id != b[i].chip_id) {
            return false;
        }
    }
    return true;
}

// ---------------------------------------------------------------------------
// Per-pixel segmentation scoring

inline double naive_iou(const BinaryMask& a, const BinaryMask& b) {
    long long inter = 0;
    long long uni = 0;
    for (int y = 0; y < a.height; ++y) {
        for (int x = 0; x < a.width; ++x) {
            const bool av = a.at(x, y);
            const bool bv = b.at(x, y);
            if (av && bv) {
                ++inter;
            }
            if (av || bv) {
                ++uni;
            }
        }
    }
    if (uni == 0) {
        return 1.0;
    }
    return static_cast<double>(inter) / static_cast<double>(uni);
}

struct NaiveBucket {
    double giou = 0.0;
    double ciou = 0.0;
    std::size_t count = 0;
};

struct NaiveSegResult {
    NaiveBucket all;
    NaiveBucket small;
    NaiveBucket large;
};

inline NaiveSegResult naive_seg_eval(const std::vector<rsseg::metrics::SegSample>& samples,
                                     int threshold = 500) {
    struct Acc {
        double iou_sum = 0;
        long long inter = 0;
        long long uni = 0;
        std::size_t n = 0;
    };
    Acc acc[3];  // all, small, large
    for (const auto& s : samples) {
        long long inter = 0;
        long long uni = 0;
        long long gt_area = 0;
        for (int y = 0; y < s.gt.height; ++y) {
            for (int x = 0; x < s.gt.width; ++x) {
                const bool pv = s.pred.at(x, y);
                const bool gv = s.gt.at(x, y);
                if (pv && gv) {
                    ++inter;
                }
                if (pv || gv) {
                    ++uni;
                }
                if (gv) {
                    ++gt_area;
                }
            }
        }
        const double iou = uni == 0 ? 1.0 : static_cast<double>(inter) / uni;
        const int bucket = gt_area < threshold ? 1 : 2;
        for (int b : {0, bucket}) {
            acc[b].iou_sum += iou;
            acc[b].n += 1;
            if (uni > 0) {
                acc[b].inter += inter;
                acc[b].uni += uni;
            }
        }
    }
    auto to_bucket = [](const Acc& a) {
        NaiveBucket b;
        b.count = a.n;
        if (a.n > 0) {
            b.giou = a.iou_sum / static_cast<double>(a.n);
            b.ciou = a.uni > 0 ? static_cast<double>(a.inter) / a.uni : 1.0;
        }
        return b;
    };
    return {to_bucket(acc[0]), to_bucket(acc[1]), to_bucket(acc[2])};
}

inline BinaryMask random_mask(rsseg::Rng& rng, int max_side = 64) {
    const int w = 1 + static_cast<int>(rsseg::uniform_index(rng, max_side));
    const int h = 1 + static_cast<int>(rsseg::uniform_index(rng, max_side));
    BinaryMask m(w, h);
    const double density = rsseg::uniform01(rng);
    for (std::size_t i = 0; i < m.data.size(); ++i) {
        m.data[i] = rsseg::uniform01(rng) < density;
    }
    return m;
}

// ---------------------------------------------------------------------------
// Direct-from-formula CIDEr-D

using TokenSeq = std::vector<std::string>;

inline std::vector<TokenSeq> all_ngrams(const TokenSeq& tokens, int n) {
    std::vector<TokenSeq> out;
    for (std::size_t i = 0; i + static_cast<std::size_t>(n) <= tokens.size(); ++i) {
        out.emplace_back(tokens.begin() + static_cast<std::ptrdiff_t>(i),
                         tokens.begin() + static_cast<std::ptrdiff_t>(i) + n);
    }
    return out;
}

inline double brute_cider_d(const rsseg::metrics::CaptionBatch& batch,
                            int max_n = 4,
                            double sigma = 6.0) {
    const std::size_t n_items = batch.size();

    // document frequency: number of items whose reference set contains the ngram
    std::map<TokenSeq, double> df;
    for (const auto& item : batch) {
        std::set<TokenSeq> seen;
        for (const auto& ref : item.references) {
            for (int n = 1; n <= max_n; ++n) {
                for (const auto& g : all_ngrams(ref, n)) {
                    seen.insert(g);
                }
            }
        }
        for (const auto& g : seen) {
            df[g] += 1.0;
        }
    }
    const double log_n = std::log(static_cast<double>(n_items));

    auto tfidf = [&](const TokenSeq& tokens, int n) {
        std::map<TokenSeq, double> counts;
        for (const auto& g : all_ngrams(tokens, n)) {
            counts[g] += 1.0;
        }
        std::map<TokenSeq, double> weights;
        for (const auto& [g, tf] : counts) {
            const double d = df.count(g) > 0 ? df.at(g) : 0.0;
            weights[g] = tf * (log_n - std::log(std::max(1.0, d)));
        }
        return weights;
    };
    auto norm_of = [](const std::map<TokenSeq, double>& w) {
        double s = 0.0;
        for (const auto& [g, v] : w) {
            s += v * v;
        }
        return std::sqrt(s);
    };
    auto length_of = [](const TokenSeq& tokens) {
        return tokens.size() >= 2 ? static_cast<double>(tokens.size() - 1) : 0.0;
    };

    double total = 0.0;
    for (const auto& item : batch) {
        double order_mean = 0.0;
        for (int n = 1; n <= max_n; ++n) {
            const auto wc = tfidf(item.candidate, n);
            const double nc = norm_of(wc);
            double ref_sum = 0.0;
            for (const auto& ref : item.references) {
                const auto wr = tfidf(ref, n);
                const double nr = norm_of(wr);
                double dot = 0.0;
                for (const auto& [g, v] : wc) {
                    if (wr.count(g) > 0) {
                        dot += std::min(v, wr.at(g)) * wr.at(g);
                    }
                }
                double val = dot;
                if (nc != 0.0 && nr != 0.0) {
                    val /= nc * nr;
                }
                const double delta = length_of(item.candidate) - length_of(ref);
                val *= std::exp(-(delta * delta) / (2.0 * sigma * sigma));
                ref_sum += val;
            }
            order_mean += ref_sum;
        }
        order_mean /= static_cast<double>(max_n);
        order_mean /= static_cast<double>(item.references.size());
        total += order_mean * 10.0;
    }
    return total / static_cast<double>(n_items);
}

}  // namespace oracles
