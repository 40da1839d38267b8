#include "rsseg/metrics.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <stdexcept>
#include <unordered_map>
#include <unordered_set>

namespace rsseg::metrics {

double iou(const maskgen::BinaryMask& a, const maskgen::BinaryMask& b) {
    if (!a.same_dims(b)) {
        throw std::invalid_argument("mask dimensions differ");
    }
    std::int64_t inter = 0;
    std::int64_t uni = 0;
    for (std::size_t i = 0; i < a.data.size(); ++i) {
        const bool av = a.data[i];
        const bool bv = b.data[i];
        inter += (av && bv) ? 1 : 0;
        uni += (av || bv) ? 1 : 0;
    }
    if (uni == 0) {
        return 1.0;  // both empty: perfect agreement
    }
    return static_cast<double>(inter) / static_cast<double>(uni);
}

SizeBucket bucket_of(const maskgen::BinaryMask& gt, int small_threshold) {
    return gt.area() < small_threshold ? SizeBucket::Small : SizeBucket::Large;
}

namespace {

struct BucketAccum {
    double iou_sum = 0.0;
    double iou_sq_sum = 0.0;
    std::int64_t inter_sum = 0;
    std::int64_t union_sum = 0;
    std::size_t count = 0;

    void add(double sample_iou, std::int64_t inter, std::int64_t uni) {
        iou_sum += sample_iou;
        iou_sq_sum += sample_iou * sample_iou;
        if (uni > 0) {
            inter_sum += inter;
            union_sum += uni;
        }
        ++count;
    }

    BucketReport report() const {
        BucketReport r;
        r.count = count;
        if (count == 0) {
            return r;
        }
        r.giou = iou_sum / static_cast<double>(count);
        const double var =
            std::max(0.0, iou_sq_sum / static_cast<double>(count) - r.giou * r.giou);
        r.giou_std = std::sqrt(var);
        r.ciou = union_sum > 0
                     ? static_cast<double>(inter_sum) / static_cast<double>(union_sum)
                     : 1.0;  // only both-empty samples in the bucket
        return r;
    }
};

}  // namespace

SegReport evaluate_segmentation(const std::vector<SegSample>& samples, int small_threshold) {
    if (samples.empty()) {
        throw std::invalid_argument("no samples to evaluate");
    }
    BucketAccum all;
    BucketAccum small_acc;
    BucketAccum large_acc;
    for (const SegSample& s : samples) {
        if (!s.pred.same_dims(s.gt)) {
            throw std::invalid_argument("sample '" + s.id + "' has mismatched dimensions");
        }
        std::int64_t inter = 0;
        std::int64_t uni = 0;
        for (std::size_t i = 0; i < s.pred.data.size(); ++i) {
            const bool pv = s.pred.data[i];
            const bool gv = s.gt.data[i];
            inter += (pv && gv) ? 1 : 0;
            uni += (pv || gv) ? 1 : 0;
        }
        const double sample_iou =
            uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
        all.add(sample_iou, inter, uni);
        if (bucket_of(s.gt, small_threshold) == SizeBucket::Small) {
            small_acc.add(sample_iou, inter, uni);
        } else {
            large_acc.add(sample_iou, inter, uni);
        }
    }

    SegReport report;
    report.small_threshold = small_threshold;
    report.all = all.report();
    if (small_acc.count > 0) {
        report.small = small_acc.report();
    }
    if (large_acc.count > 0) {
        report.large = large_acc.report();
    }
    return report;
}

std::vector<std::string> tokenize(const std::string& text) {
    std::string cleaned;
    cleaned.reserve(text.size());
    for (char c : text) {
        const unsigned char uc = static_cast<unsigned char>(c);
        if (std::ispunct(uc)) {
            continue;
        }
        cleaned.push_back(static_cast<char>(std::tolower(uc)));
    }
    std::vector<std::string> tokens;
    std::size_t i = 0;
    while (i < cleaned.size()) {
        while (i < cleaned.size() && std::isspace(static_cast<unsigned char>(cleaned[i]))) {
            ++i;
        }
        std::size_t start = i;
        while (i < cleaned.size() && !std::isspace(static_cast<unsigned char>(cleaned[i]))) {
            ++i;
        }
        if (i > start) {
            tokens.push_back(cleaned.substr(start, i - start));
        }
    }
    return tokens;
}

namespace {

using NgramCounts = std::unordered_map<std::string, std::int64_t>;

std::string join_ngram(const std::vector<std::string>& tokens, std::size_t start, int n) {
    std::string key = tokens[start];
    for (int k = 1; k < n; ++k) {
        key += ' ';
        key += tokens[start + static_cast<std::size_t>(k)];
    }
    return key;
}

NgramCounts count_ngrams(const std::vector<std::string>& tokens, int n) {
    NgramCounts counts;
    if (static_cast<int>(tokens.size()) >= n) {
        for (std::size_t i = 0; i + static_cast<std::size_t>(n) <= tokens.size(); ++i) {
            ++counts[join_ngram(tokens, i, n)];
        }
    }
    return counts;
}

void validate_batch(const CaptionBatch& batch) {
    if (batch.empty()) {
        throw std::invalid_argument("empty caption batch");
    }
    for (const CaptionItem& item : batch) {
        if (item.references.empty()) {
            throw std::invalid_argument("caption item without references");
        }
    }
}

}  // namespace

BleuResult bleu(const CaptionBatch& batch, int max_n) {
    validate_batch(batch);
    if (max_n < 1) {
        throw std::invalid_argument("max_n must be >= 1");
    }

    std::vector<std::int64_t> matches(static_cast<std::size_t>(max_n), 0);
    std::vector<std::int64_t> totals(static_cast<std::size_t>(max_n), 0);
    std::int64_t candidate_len = 0;
    std::int64_t reference_len = 0;
    bool empty_candidate = false;

    for (const CaptionItem& item : batch) {
        const std::int64_t c = static_cast<std::int64_t>(item.candidate.size());
        if (c == 0) {
            empty_candidate = true;
        }
        candidate_len += c;

        // closest reference length; ties resolved toward the shorter one
        std::int64_t best_ref = static_cast<std::int64_t>(item.references[0].size());
        for (const auto& ref : item.references) {
            const std::int64_t r = static_cast<std::int64_t>(ref.size());
            const std::int64_t d_new = std::llabs(r - c);
            const std::int64_t d_best = std::llabs(best_ref - c);
            if (d_new < d_best || (d_new == d_best && r < best_ref)) {
                best_ref = r;
            }
        }
        reference_len += best_ref;

        for (int n = 1; n <= max_n; ++n) {
            const NgramCounts cand_counts = count_ngrams(item.candidate, n);
            NgramCounts max_ref_counts;
            for (const auto& ref : item.references) {
                for (const auto& [ngram, cnt] : count_ngrams(ref, n)) {
                    auto it = max_ref_counts.find(ngram);
                    if (it == max_ref_counts.end() || it->second < cnt) {
                        max_ref_counts[ngram] = cnt;
                    }
                }
            }
            for (const auto& [ngram, cnt] : cand_counts) {
                auto it = max_ref_counts.find(ngram);
                const std::int64_t clipped = it == max_ref_counts.end()
                                                 ? 0
                                                 : std::min(cnt, it->second);
                matches[static_cast<std::size_t>(n - 1)] += clipped;
                totals[static_cast<std::size_t>(n - 1)] += cnt;
            }
        }
    }

    double brevity = 1.0;
    if (candidate_len == 0) {
        brevity = 0.0;
    } else if (candidate_len <= reference_len) {
        brevity = std::exp(1.0 - static_cast<double>(reference_len) /
                                     static_cast<double>(candidate_len));
    }

    BleuResult result;
    result.empty_candidate = empty_candidate;
    result.scores.assign(static_cast<std::size_t>(max_n), 0.0);
    for (int n = 1; n <= max_n; ++n) {
        double log_sum = 0.0;
        bool zero = false;
        for (int k = 1; k <= n; ++k) {
            const std::int64_t num = matches[static_cast<std::size_t>(k - 1)];
            const std::int64_t den = totals[static_cast<std::size_t>(k - 1)];
            if (num == 0 || den == 0) {
                zero = true;
                break;
            }
            log_sum += std::log(static_cast<double>(num) / static_cast<double>(den));
        }
        result.scores[static_cast<std::size_t>(n - 1)] =
            zero ? 0.0 : brevity * std::exp(log_sum / n);
    }
    return result;
}

namespace {

std::size_t lcs_length(const std::vector<std::string>& a, const std::vector<std::string>& b) {
    if (a.empty() || b.empty()) {
        return 0;
    }
    std::vector<std::size_t> prev(b.size() + 1, 0);
    std::vector<std::size_t> cur(b.size() + 1, 0);
    for (std::size_t i = 1; i <= a.size(); ++i) {
        for (std::size_t j = 1; j <= b.size(); ++j) {
            if (a[i - 1] == b[j - 1]) {
                cur[j] = prev[j - 1] + 1;
            } else {
                cur[j] = std::max(prev[j], cur[j - 1]);
            }
        }
        std::swap(prev, cur);
    }
    return prev[b.size()];
}

}  // namespace

double rouge_l(const CaptionBatch& batch, double beta) {
    validate_batch(batch);
    const double beta2 = beta * beta;
    double sum = 0.0;
    for (const CaptionItem& item : batch) {
        double best = 0.0;
        for (const auto& ref : item.references) {
            const std::size_t lcs = lcs_length(item.candidate, ref);
            if (lcs == 0 || item.candidate.empty() || ref.empty()) {
                continue;
            }
            const double precision =
                static_cast<double>(lcs) / static_cast<double>(item.candidate.size());
            const double recall = static_cast<double>(lcs) / static_cast<double>(ref.size());
            const double denom = recall + beta2 * precision;
            if (denom > 0.0) {
                best = std::max(best, (1.0 + beta2) * precision * recall / denom);
            }
        }
        sum += best;
    }
    return sum / static_cast<double>(batch.size());
}

CiderIdf cider_idf_from_references(const CaptionBatch& batch, int max_n) {
    CiderIdf idf;
    idf.doc_count = batch.size();
    for (const CaptionItem& item : batch) {
        std::unordered_set<std::string> seen;
        for (const auto& ref : item.references) {
            for (int n = 1; n <= max_n; ++n) {
                for (const auto& [ngram, cnt] : count_ngrams(ref, n)) {
                    seen.insert(ngram);
                }
            }
        }
        for (const std::string& ngram : seen) {
            idf.df[ngram] += 1.0;
        }
    }
    return idf;
}

namespace {

// tf-idf vector per order plus its norm and the bigram-count length used by
// the CIDEr-D length penalty.
struct CiderVec {
    std::vector<std::unordered_map<std::string, double>> vec;
    std::vector<double> norm;
    double length = 0.0;
};

CiderVec cider_vector(const std::vector<std::string>& tokens,
                      int max_n,
                      double log_doc_count,
                      const std::map<std::string, double>& df) {
    CiderVec out;
    out.vec.resize(static_cast<std::size_t>(max_n));
    out.norm.assign(static_cast<std::size_t>(max_n), 0.0);
    for (int n = 1; n <= max_n; ++n) {
        for (const auto& [ngram, cnt] : count_ngrams(tokens, n)) {
            auto it = df.find(ngram);
            const double doc_freq = it == df.end() ? 0.0 : it->second;
            const double log_df = std::log(std::max(1.0, doc_freq));
            const double weight = static_cast<double>(cnt) * (log_doc_count - log_df);
            out.vec[static_cast<std::size_t>(n - 1)][ngram] = weight;
            out.norm[static_cast<std::size_t>(n - 1)] += weight * weight;
            if (n == 2) {
                out.length += static_cast<double>(cnt);
            }
        }
    }
    for (double& v : out.norm) {
        v = std::sqrt(v);
    }
    return out;
}

}  // namespace

double cider_d(const CaptionBatch& batch, int max_n, double sigma, const CiderIdf* external_idf) {
    validate_batch(batch);

    CiderIdf local;
    const CiderIdf* idf = external_idf;
    if (idf == nullptr) {
        if (batch.size() < 2) {
            throw std::invalid_argument(
                "CIDEr idf needs a corpus of at least 2 items (or an external idf table)");
        }
        local = cider_idf_from_references(batch, max_n);
        idf = &local;
    }
    if (idf->doc_count == 0) {
        throw std::invalid_argument("idf table with zero documents");
    }
    const double log_doc_count = std::log(static_cast<double>(idf->doc_count));

    double score_sum = 0.0;
    for (const CaptionItem& item : batch) {
        const CiderVec cand = cider_vector(item.candidate, max_n, log_doc_count, idf->df);
        std::vector<double> order_sums(static_cast<std::size_t>(max_n), 0.0);
        for (const auto& ref : item.references) {
            const CiderVec rv = cider_vector(ref, max_n, log_doc_count, idf->df);
            const double delta = cand.length - rv.length;
            const double length_penalty = std::exp(-(delta * delta) / (2.0 * sigma * sigma));
            for (int n = 0; n < max_n; ++n) {
                double dot = 0.0;
                for (const auto& [ngram, wc] : cand.vec[static_cast<std::size_t>(n)]) {
                    auto it = rv.vec[static_cast<std::size_t>(n)].find(ngram);
                    if (it != rv.vec[static_cast<std::size_t>(n)].end()) {
                        dot += std::min(wc, it->second) * it->second;
                    }
                }
                double val = dot;
                const double nh = cand.norm[static_cast<std::size_t>(n)];
                const double nr = rv.norm[static_cast<std::size_t>(n)];
                if (nh != 0.0 && nr != 0.0) {
                    val /= nh * nr;
                }
                order_sums[static_cast<std::size_t>(n)] += val * length_penalty;
            }
        }
        double item_score = 0.0;
        for (double v : order_sums) {
            item_score += v;
        }
        item_score /= static_cast<double>(max_n);
        item_score /= static_cast<double>(item.references.size());
        item_score *= 10.0;
        score_sum += item_score;
    }
    return score_sum / static_cast<double>(batch.size());
}

std::string to_string(VqaCategory c) {
    switch (c) {
        case VqaCategory::Count: return "count";
        case VqaCategory::Presence: return "presence";
        case VqaCategory::Comparison: return "comparison";
        case VqaCategory::Area: return "area";
    }
    return "count";
}

std::optional<VqaCategory> vqa_category_from_string(const std::string& s) {
    std::string lower;
    for (char c : s) {
        lower.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    }
    if (lower == "count") return VqaCategory::Count;
    if (lower == "presence") return VqaCategory::Presence;
    if (lower == "comparison") return VqaCategory::Comparison;
    if (lower == "area") return VqaCategory::Area;
    return std::nullopt;
}

std::string normalize_vqa_answer(const std::string& answer) {
    std::size_t begin = 0;
    std::size_t end = answer.size();
    while (begin < end && std::isspace(static_cast<unsigned char>(answer[begin]))) {
        ++begin;
    }
    while (end > begin && std::isspace(static_cast<unsigned char>(answer[end - 1]))) {
        --end;
    }
    std::string out = answer.substr(begin, end - begin);
    if (!out.empty() && out.back() == '.') {
        out.pop_back();
    }
    for (char& c : out) {
        c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    }
    return out;
}

VqaReport vqa_accuracy(const std::vector<VqaItem>& items) {
    VqaReport report;
    for (const VqaItem& item : items) {
        VqaCategoryReport& cat = report.categories[item.category];
        ++cat.total;
        ++report.overall.total;
        if (normalize_vqa_answer(item.predicted) == normalize_vqa_answer(item.gold)) {
            ++cat.correct;
            ++report.overall.correct;
        }
    }
    for (auto& [cat, r] : report.categories) {
        r.accuracy = r.total == 0 ? 0.0 : static_cast<double>(r.correct) / r.total;
    }
    report.overall.accuracy = report.overall.total == 0
                                  ? 0.0
                                  : static_cast<double>(report.overall.correct) /
                                        report.overall.total;
    return report;
}

}  // namespace rsseg::metrics
