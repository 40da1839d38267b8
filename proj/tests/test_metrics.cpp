#include <doctest.h>

#include <algorithm>

#include "rsseg/metrics.hpp"
#include "rsseg/rng.hpp"

#include "oracles.hpp"

using namespace rsseg;
using namespace rsseg::metrics;
using rsseg::maskgen::BinaryMask;
using rsseg::maskgen::filled_rect_mask;

namespace {

CaptionItem item(const std::string& cand, const std::vector<std::string>& refs) {
    CaptionItem it;
    it.candidate = tokenize(cand);
    for (const auto& r : refs) {
        it.references.push_back(tokenize(r));
    }
    return it;
}

}  // namespace

TEST_CASE("iou handles the canonical cases") {
    const BinaryMask a = filled_rect_mask(20, 20, 0, 0, 10, 10);
    CHECK(iou(a, a) == doctest::Approx(1.0));

    const BinaryMask b = filled_rect_mask(20, 20, 10, 10, 5, 5);
    CHECK(iou(a, b) == doctest::Approx(0.0));

    // 10x10 square against a copy shifted 5 right: 50 / 150
    const BinaryMask shifted = filled_rect_mask(20, 20, 5, 0, 10, 10);
    CHECK(iou(a, shifted) == doctest::Approx(1.0 / 3));

    const BinaryMask empty1(20, 20);
    const BinaryMask empty2(20, 20);
    CHECK(iou(empty1, empty2) == doctest::Approx(1.0));

    CHECK_THROWS_AS(iou(a, BinaryMask(10, 10)), std::invalid_argument);
}

TEST_CASE("iou is symmetric and grows with shared pixels") {
    Rng rng(3);
    for (int trial = 0; trial < 30; ++trial) {
        BinaryMask a = oracles::random_mask(rng, 32);
        BinaryMask b(a.width, a.height);
        for (std::size_t i = 0; i < b.data.size(); ++i) {
            b.data[i] = uniform01(rng) < 0.4;
        }
        CHECK(iou(a, b) == doctest::Approx(iou(b, a)));
        CHECK(iou(a, b) == doctest::Approx(oracles::naive_iou(a, b)));

        // adding one shared pixel never decreases IoU
        BinaryMask a2 = a;
        BinaryMask b2 = b;
        bool added = false;
        for (std::size_t i = 0; i < a2.data.size() && !added; ++i) {
            if (!a2.data[i] && !b2.data[i]) {
                a2.data[i] = true;
                b2.data[i] = true;
                added = true;
            }
        }
        if (added) {
            CHECK(iou(a2, b2) >= iou(a, b) - 1e-12);
        }
    }
}

TEST_CASE("segmentation report matches hand arithmetic") {
    SegSample perfect;
    perfect.id = "a";
    perfect.pred = filled_rect_mask(64, 64, 0, 0, 10, 10);
    perfect.gt = perfect.pred;

    SegSample miss;
    miss.id = "b";
    miss.pred = filled_rect_mask(64, 64, 20, 20, 10, 10);
    miss.gt = filled_rect_mask(64, 64, 40, 40, 0, 0);  // empty gt, pred has 100 px

    const auto report = evaluate_segmentation({perfect, miss});
    CHECK(report.all.count == 2);
    CHECK(report.all.giou == doctest::Approx(0.5));
    CHECK(report.all.ciou == doctest::Approx(0.5));  // 100 / (100 + 100)
}

TEST_CASE("the size bucket threshold is strict at 500") {
    // masks with exact areas 499 and 500
    BinaryMask gt499(64, 64);
    for (int i = 0; i < 499; ++i) {
        gt499.data[static_cast<std::size_t>(i)] = true;
    }
    BinaryMask gt500(64, 64);
    for (int i = 0; i < 500; ++i) {
        gt500.data[static_cast<std::size_t>(i)] = true;
    }
    CHECK(bucket_of(gt499) == SizeBucket::Small);
    CHECK(bucket_of(gt500) == SizeBucket::Large);

    SegSample s1{"s1", gt499, gt499};
    SegSample s2{"s2", gt500, gt500};
    const auto report = evaluate_segmentation({s1, s2});
    REQUIRE(report.small.has_value());
    REQUIRE(report.large.has_value());
    CHECK(report.small->count == 1);
    CHECK(report.large->count == 1);
    CHECK(report.small->count + report.large->count == report.all.count);
}

TEST_CASE("self-evaluation is exactly one in every bucket") {
    std::vector<SegSample> samples;
    Rng rng(17);
    for (int i = 0; i < 10; ++i) {
        SegSample s;
        s.id = "s" + std::to_string(i);
        s.gt = oracles::random_mask(rng, 48);
        s.pred = s.gt;
        samples.push_back(std::move(s));
    }
    const auto report = evaluate_segmentation(samples);
    CHECK(report.all.giou == 1.0);
    CHECK(report.all.ciou == 1.0);
    if (report.small) {
        CHECK(report.small->giou == 1.0);
        CHECK(report.small->ciou == 1.0);
    }
    if (report.large) {
        CHECK(report.large->giou == 1.0);
        CHECK(report.large->ciou == 1.0);
    }
}

TEST_CASE("segmentation scoring matches the per-pixel oracle on random masks") {
    Rng rng(23);
    std::vector<SegSample> samples;
    for (int i = 0; i < 60; ++i) {
        SegSample s;
        s.id = "r" + std::to_string(i);
        s.gt = oracles::random_mask(rng, 64);
        s.pred = BinaryMask(s.gt.width, s.gt.height);
        for (std::size_t k = 0; k < s.pred.data.size(); ++k) {
            s.pred.data[k] = uniform01(rng) < 0.5;
        }
        samples.push_back(std::move(s));
    }
    const auto report = evaluate_segmentation(samples);
    const auto oracle = oracles::naive_seg_eval(samples);
    CHECK(std::abs(report.all.giou - oracle.all.giou) <= 1e-12);
    CHECK(std::abs(report.all.ciou - oracle.all.ciou) <= 1e-12);
    if (report.small) {
        CHECK(std::abs(report.small->giou - oracle.small.giou) <= 1e-12);
        CHECK(std::abs(report.small->ciou - oracle.small.ciou) <= 1e-12);
    }
    if (report.large) {
        CHECK(std::abs(report.large->giou - oracle.large.giou) <= 1e-12);
        CHECK(std::abs(report.large->ciou - oracle.large.ciou) <= 1e-12);
    }
}

TEST_CASE("cIoU differs from gIoU when unions are unequal") {
    // sample 1: IoU 1 with union 100; sample 2: IoU 0.2 with union 500
    BinaryMask gt1(64, 64);
    for (int i = 0; i < 100; ++i) {
        gt1.data[static_cast<std::size_t>(i)] = true;
    }
    SegSample s1{"a", gt1, gt1};

    BinaryMask gt2(64, 64);
    BinaryMask pred2(64, 64);
    for (int i = 0; i < 300; ++i) {
        gt2.data[static_cast<std::size_t>(i)] = true;
    }
    for (int i = 200; i < 500; ++i) {
        pred2.data[static_cast<std::size_t>(i)] = true;
    }
    SegSample s2{"b", pred2, gt2};
    const auto report = evaluate_segmentation({s1, s2});
    const double giou = (1.0 + 100.0 / 500.0) / 2.0;
    const double ciou = (100.0 + 100.0) / (100.0 + 500.0);
    CHECK(report.all.giou == doctest::Approx(giou));
    CHECK(report.all.ciou == doctest::Approx(ciou));
    CHECK(report.all.giou != doctest::Approx(report.all.ciou));
}

TEST_CASE("empty sample lists are rejected") {
    CHECK_THROWS_AS(evaluate_segmentation({}), std::invalid_argument);
}

TEST_CASE("tokenizer lowercases and strips punctuation") {
    CHECK(tokenize("The cat, sat!") == std::vector<std::string>{"the", "cat", "sat"});
    CHECK(tokenize("  A   B  ") == std::vector<std::string>{"a", "b"});
    CHECK(tokenize("").empty());
}

TEST_CASE("identical candidate and reference score BLEU one") {
    CaptionBatch batch{item("the quick brown fox jumps over the lazy dog",
                            {"the quick brown fox jumps over the lazy dog"}),
                       item("a river runs through the valley floor here",
                            {"a river runs through the valley floor here"})};
    const auto result = bleu(batch);
    for (double score : result.scores) {
        CHECK(score == doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("clipped unigram precision matches the hand-worked example") {
    CaptionBatch batch{item("the the the the", {"the cat"})};
    const auto result = bleu(batch);
    CHECK(result.scores[0] == doctest::Approx(0.25));  // clipped 1/4, c=4 > r=2 so BP=1
    CHECK(result.scores[1] == doctest::Approx(0.0));
}

TEST_CASE("empty candidates give zero BLEU with a warning") {
    CaptionBatch batch{item("", {"the cat"})};
    const auto result = bleu(batch);
    CHECK(result.empty_candidate);
    for (double score : result.scores) {
        CHECK(score == 0.0);
    }
}

TEST_CASE("corpus BLEU is invariant under batch permutation") {
    CaptionBatch batch{
        item("a small boat on the water", {"a small boat floats on the water"}),
        item("two trucks near the warehouse", {"trucks parked near a warehouse"}),
        item("the runway is empty", {"an empty runway", "the runway sits empty"}),
    };
    const auto direct = bleu(batch);
    CaptionBatch shuffled{batch[2], batch[0], batch[1]};
    const auto permuted = bleu(shuffled);
    for (int n = 0; n < 4; ++n) {
        CHECK(direct.scores[static_cast<std::size_t>(n)] ==
              doctest::Approx(permuted.scores[static_cast<std::size_t>(n)]).epsilon(1e-12));
        CHECK(direct.scores[static_cast<std::size_t>(n)] >= 0.0);
        CHECK(direct.scores[static_cast<std::size_t>(n)] <= 1.0);
    }
}

TEST_CASE("rouge-l matches the stated F-beta arithmetic") {
    CaptionBatch identical{item("the same text", {"the same text"})};
    CHECK(rouge_l(identical) == doctest::Approx(1.0).epsilon(1e-12));

    CaptionBatch batch{item("the sat", {"the cat sat"})};
    const double precision = 1.0;
    const double recall = 2.0 / 3.0;
    const double beta2 = 1.2 * 1.2;
    const double expected = (1.0 + beta2) * precision * recall / (recall + beta2 * precision);
    CHECK(rouge_l(batch) == doctest::Approx(expected).epsilon(1e-12));

    CaptionBatch empty_cand{item("", {"the cat"})};
    CHECK(rouge_l(empty_cand) == doctest::Approx(0.0));
}

TEST_CASE("cider is zero without shared n-grams") {
    CaptionBatch batch{
        item("alpha beta gamma", {"delta epsilon zeta"}),
        item("eta theta iota", {"kappa lambda mu"}),
    };
    CHECK(cider_d(batch) == doctest::Approx(0.0));
}

TEST_CASE("an n-gram present in every reference document contributes nothing") {
    // "dock" appears in both documents' references: idf = log(2/2) = 0.
    CaptionBatch batch{
        item("dock", {"dock"}),
        item("dock", {"dock"}),
    };
    CHECK(cider_d(batch) == doctest::Approx(0.0));
}

TEST_CASE("identical pairs with nonzero idf saturate the ten-point scale") {
    // disjoint vocabularies keep every idf weight positive, so the cosine per
    // order is exactly 1 and each item scores 10
    CaptionBatch batch{
        item("alpha beta gamma delta epsilon", {"alpha beta gamma delta epsilon"}),
        item("zeta eta theta iota kappa", {"zeta eta theta iota kappa"}),
    };
    CHECK(cider_d(batch) == doctest::Approx(10.0).epsilon(1e-12));
}

TEST_CASE("cider matches the brute-force oracle on a fixture") {
    CaptionBatch batch{
        item("a plane parked at the airport gate",
             {"a plane is parked at the gate", "an aircraft waits at the airport gate"}),
        item("three ships in the harbor", {"ships sit in the harbor", "three boats in a harbor"}),
        item("a bridge crosses the wide river", {"a bridge spans the river"}),
        item("cars line the residential street", {"cars parked along a residential street"}),
        item("the storage tanks are white", {"white storage tanks", "round white tanks"}),
    };
    const double ours = cider_d(batch);
    const double oracle = oracles::brute_cider_d(batch);
    CHECK(std::abs(ours - oracle) <= 1e-9);
    CHECK(ours > 0.0);
}

TEST_CASE("single-item corpora need an external idf table") {
    CaptionBatch single{item("one item only", {"one item"})};
    CHECK_THROWS_AS(cider_d(single), std::invalid_argument);

    CaptionBatch corpus{
        item("a plane parked", {"a plane parked here"}),
        item("ships in the harbor", {"ships in the harbor"}),
        item("one item only", {"one item"}),
    };
    const CiderIdf idf = cider_idf_from_references(corpus);
    CHECK_NOTHROW(cider_d(single, 4, 6.0, &idf));
}

TEST_CASE("vqa accuracy is exact match after normalization") {
    std::vector<VqaItem> items{
        {VqaCategory::Presence, "yes", "Yes."},
        {VqaCategory::Count, "4", "4"},
        {VqaCategory::Comparison, "smaller", "smaller"},
        {VqaCategory::Area, "120", "130"},
    };
    const auto report = vqa_accuracy(items);
    CHECK(report.overall.total == 4);
    CHECK(report.overall.correct == 3);
    CHECK(report.overall.accuracy == doctest::Approx(0.75));
    CHECK(report.categories.at(VqaCategory::Presence).accuracy == doctest::Approx(1.0));
    CHECK(report.categories.at(VqaCategory::Area).accuracy == doctest::Approx(0.0));
}

TEST_CASE("perfect predictions score one hundred percent per category") {
    std::vector<VqaItem> items{
        {VqaCategory::Count, " 7 ", "7"},
        {VqaCategory::Presence, "NO", "no."},
    };
    const auto report = vqa_accuracy(items);
    CHECK(report.categories.at(VqaCategory::Count).accuracy == doctest::Approx(1.0));
    CHECK(report.categories.at(VqaCategory::Presence).accuracy == doctest::Approx(1.0));
    CHECK(report.categories.count(VqaCategory::Comparison) == 0);  // absent stays absent
    CHECK(report.categories.count(VqaCategory::Area) == 0);
}
