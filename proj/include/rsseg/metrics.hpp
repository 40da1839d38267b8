#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "rsseg/mask.hpp"

namespace rsseg::metrics {

// |a ∩ b| / |a ∪ b|; 1.0 when both masks are empty. Throws on dim mismatch.
double iou(const maskgen::BinaryMask& a, const maskgen::BinaryMask& b);

enum class SizeBucket { Small, Large };

// Small iff the ground-truth mask area is strictly below the threshold.
SizeBucket bucket_of(const maskgen::BinaryMask& gt, int small_threshold = 500);

struct SegSample {
    std::string id;
    maskgen::BinaryMask pred;
    maskgen::BinaryMask gt;
};

struct BucketReport {
    double giou = 0.0;
    double ciou = 0.0;
    double giou_std = 0.0;  // population std of per-sample IoU
    std::size_t count = 0;
};

struct SegReport {
    BucketReport all;
    std::optional<BucketReport> small;
    std::optional<BucketReport> large;
    int small_threshold = 500;
};

// gIoU = mean per-sample IoU; cIoU = cumulative intersection / cumulative
// union with both-empty samples (0/0) omitted from the cIoU sums.
SegReport evaluate_segmentation(const std::vector<SegSample>& samples,
                                int small_threshold = 500);

// Lowercase, strip ASCII punctuation, split on whitespace.
std::vector<std::string> tokenize(const std::string& text);

struct CaptionItem {
    std::vector<std::string> candidate;
    std::vector<std::vector<std::string>> references;  // at least one
};
using CaptionBatch = std::vector<CaptionItem>;

struct BleuResult {
    std::vector<double> scores;  // BLEU-1 .. BLEU-max_n
    bool empty_candidate = false;
};

// Corpus BLEU: clipped modified n-gram precision, geometric mean over orders,
// brevity penalty exp(1 - r/c) for c <= r with closest-reference lengths.
// No smoothing; a zero precision at any order <= n zeroes BLEU-n.
BleuResult bleu(const CaptionBatch& batch, int max_n = 4);

// Mean over items of the best (over references) LCS F_beta score.
double rouge_l(const CaptionBatch& batch, double beta = 1.2);

// Pre-computed document frequencies for scoring against an external corpus.
struct CiderIdf {
    std::size_t doc_count = 0;
    std::map<std::string, double> df;  // space-joined n-gram -> document frequency
};

// Builds the idf table from a batch's reference sets.
CiderIdf cider_idf_from_references(const CaptionBatch& batch, int max_n = 4);

// CIDEr-D on the conventional 0..10 scale. An idf corpus of a single document
// is rejected (every idf weight would be zero); pass an external table to
// score single items.
double cider_d(const CaptionBatch& batch,
               int max_n = 4,
               double sigma = 6.0,
               const CiderIdf* external_idf = nullptr);

enum class VqaCategory { Count, Presence, Comparison, Area };

std::string to_string(VqaCategory c);
std::optional<VqaCategory> vqa_category_from_string(const std::string& s);

struct VqaItem {
    VqaCategory category = VqaCategory::Count;
    std::string predicted;
    std::string gold;
};

struct VqaCategoryReport {
    std::size_t total = 0;
    std::size_t correct = 0;
    double accuracy = 0.0;
};

struct VqaReport {
    std::map<VqaCategory, VqaCategoryReport> categories;  // absent = no items
    VqaCategoryReport overall;
};

// Exact match after normalization: lowercase, trim, strip one trailing period.
std::string normalize_vqa_answer(const std::string& answer);

VqaReport vqa_accuracy(const std::vector<VqaItem>& items);

}  // namespace rsseg::metrics
