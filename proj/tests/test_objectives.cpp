#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "rsseg/objectives.hpp"
#include "rsseg/rng.hpp"

using namespace rsseg;
using namespace rsseg::objectives;
using rsseg::maskgen::BinaryMask;

namespace {

TokenLogits uniform_logits(int seq_len, int vocab, double value = 0.0) {
    TokenLogits tl;
    tl.seq_len = seq_len;
    tl.vocab = vocab;
    tl.values.assign(static_cast<std::size_t>(seq_len) * vocab, value);
    tl.target.assign(static_cast<std::size_t>(seq_len), 0);
    tl.loss_mask.assign(static_cast<std::size_t>(seq_len), 1);
    return tl;
}

}  // namespace

TEST_CASE("uniform logits give ln(V) cross entropy") {
    const auto tl = uniform_logits(4, 8);
    const auto lv = text_ce(tl);
    CHECK(lv.loss == doctest::Approx(std::log(8.0)).epsilon(1e-12));
}

TEST_CASE("a dominant target logit drives the loss to zero") {
    auto tl = uniform_logits(2, 8);
    for (int t = 0; t < tl.seq_len; ++t) {
        tl.values[static_cast<std::size_t>(t) * tl.vocab + 0] = 50.0;  // target is 0
    }
    const auto lv = text_ce(tl);
    CHECK(lv.loss < 1e-9);
}

TEST_CASE("masked-out positions contribute neither loss nor gradient") {
    auto tl = uniform_logits(3, 4);
    tl.loss_mask = {1, 0, 1};
    const auto lv = text_ce(tl);
    for (int v = 0; v < tl.vocab; ++v) {
        CHECK(lv.grad[static_cast<std::size_t>(tl.vocab) + v] == 0.0);
    }
    tl.loss_mask = {0, 0, 0};
    CHECK_THROWS_AS(text_ce(tl), EmptyTarget);
}

TEST_CASE("text cross-entropy gradients pass a finite-difference check") {
    Rng rng(1);
    TokenLogits tl;
    tl.seq_len = 8;
    tl.vocab = 32;
    tl.values.resize(8 * 32);
    for (double& v : tl.values) {
        v = uniform01(rng) * 6.0 - 3.0;
    }
    tl.target.resize(8);
    tl.loss_mask.assign(8, 1);
    for (auto& t : tl.target) {
        t = static_cast<int>(uniform_index(rng, 32));
    }
    const auto lv = text_ce(tl);
    auto f = [&tl](const std::vector<double>& x) {
        TokenLogits copy = tl;
        copy.values = x;
        return text_ce(copy).loss;
    };
    CHECK(finite_diff_check(f, tl.values, lv.grad) < 1e-4);
}

TEST_CASE("bce at zero logits equals ln 2 regardless of the target") {
    LogitGrid grid(4, 4);
    BinaryMask gt(4, 4);
    gt.set(1, 1, true);
    gt.set(2, 3, true);
    const auto lv = bce_with_logits(grid, gt);
    CHECK(std::abs(lv.loss - std::log(2.0)) <= 1e-12);
}

TEST_CASE("saturated correct logits drive bce to zero") {
    LogitGrid grid(4, 4);
    BinaryMask gt(4, 4);
    for (int y = 0; y < 4; ++y) {
        for (int x = 0; x < 4; ++x) {
            const bool on = (x + y) % 2 == 0;
            gt.set(x, y, on);
            grid.values[static_cast<std::size_t>(y) * 4 + x] = on ? 50.0 : -50.0;
        }
    }
    CHECK(bce_with_logits(grid, gt).loss < 1e-9);
}

TEST_CASE("bce stays finite for extreme logits") {
    LogitGrid grid(2, 2);
    grid.values = {1e4, -1e4, 9999.0, -9999.0};
    BinaryMask gt(2, 2);
    gt.set(0, 0, true);
    const auto lv = bce_with_logits(grid, gt);
    CHECK(std::isfinite(lv.loss));
    for (double g : lv.grad) {
        CHECK(std::isfinite(g));
    }
}

TEST_CASE("bce rejects mismatched dimensions") {
    LogitGrid grid(4, 4);
    BinaryMask gt(5, 4);
    CHECK_THROWS_AS(bce_with_logits(grid, gt), std::invalid_argument);
}

TEST_CASE("bce gradients pass a finite-difference check") {
    Rng rng(2);
    LogitGrid grid(16, 16);
    BinaryMask gt(16, 16);
    for (std::size_t i = 0; i < grid.values.size(); ++i) {
        grid.values[i] = uniform01(rng) * 6.0 - 3.0;
        gt.data[i] = uniform01(rng) < 0.5;
    }
    const auto lv = bce_with_logits(grid, gt);
    auto f = [&](const std::vector<double>& x) {
        LogitGrid copy = grid;
        copy.values = x;
        return bce_with_logits(copy, gt).loss;
    };
    CHECK(finite_diff_check(f, grid.values, lv.grad) < 1e-4);
}

TEST_CASE("dice loss vanishes when probabilities match the target") {
    LogitGrid grid(4, 4);
    BinaryMask gt(4, 4);
    for (int y = 0; y < 4; ++y) {
        for (int x = 0; x < 4; ++x) {
            const bool on = x < 2;
            gt.set(x, y, on);
            grid.values[static_cast<std::size_t>(y) * 4 + x] = on ? 60.0 : -60.0;
        }
    }
    CHECK(dice_loss(grid, gt).loss == doctest::Approx(0.0).epsilon(1e-6));
}

TEST_CASE("dice closed form: near-zero probabilities against four target pixels") {
    LogitGrid grid(2, 2);
    grid.values.assign(4, -50.0);
    BinaryMask gt(2, 2);
    std::fill(gt.data.begin(), gt.data.end(), true);
    const auto lv = dice_loss(grid, gt, 1.0);
    CHECK(lv.loss == doctest::Approx(0.8).epsilon(1e-6));
}

TEST_CASE("dice gradients pass a finite-difference check") {
    Rng rng(3);
    LogitGrid grid(16, 16);
    BinaryMask gt(16, 16);
    for (std::size_t i = 0; i < grid.values.size(); ++i) {
        grid.values[i] = uniform01(rng) * 6.0 - 3.0;
        gt.data[i] = uniform01(rng) < 0.5;
    }
    const auto lv = dice_loss(grid, gt);
    auto f = [&](const std::vector<double>& x) {
        LogitGrid copy = grid;
        copy.values = x;
        return dice_loss(copy, gt).loss;
    };
    CHECK(finite_diff_check(f, grid.values, lv.grad) < 1e-4);
}

TEST_CASE("unit components compose to the published weighting") {
    const auto b = compose_breakdown(1.0, 1.0, 1.0, LossWeights{});
    CHECK(b.l_mask == 2.5);
    CHECK(b.total == 3.5);
}

TEST_CASE("all-zero weights produce a zero total") {
    const auto b = compose_breakdown(0.7, 1.3, 0.2, LossWeights{0.0, 0.0, 0.0, 0.0});
    CHECK(b.l_mask == 0.0);
    CHECK(b.total == 0.0);
}

TEST_CASE("the breakdown invariants hold bit-for-bit") {
    Rng rng(4);
    for (int trial = 0; trial < 50; ++trial) {
        TokenLogits tl;
        tl.seq_len = 1 + static_cast<int>(uniform_index(rng, 8));
        tl.vocab = 2 + static_cast<int>(uniform_index(rng, 31));
        tl.values.resize(static_cast<std::size_t>(tl.seq_len) * tl.vocab);
        for (double& v : tl.values) {
            v = uniform01(rng) * 4.0 - 2.0;
        }
        tl.target.resize(static_cast<std::size_t>(tl.seq_len));
        tl.loss_mask.assign(static_cast<std::size_t>(tl.seq_len), 1);
        for (auto& t : tl.target) {
            t = static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(tl.vocab)));
        }
        LogitGrid grid(5, 7);
        BinaryMask gt(7, 5);
        for (std::size_t i = 0; i < grid.values.size(); ++i) {
            grid.values[i] = uniform01(rng) * 4.0 - 2.0;
            gt.data[i] = uniform01(rng) < 0.5;
        }
        const LossWeights w{1.0, 1.0, 2.0, 0.5};
        const auto b = total_loss(tl, grid, gt, w);
        CHECK(b.l_mask == w.lambda_bce * b.l_bce + w.lambda_dice * b.l_dice);
        CHECK(b.total == w.lambda_txt * b.l_txt + w.lambda_mask * b.l_mask);
        CHECK(std::abs(b.total - (b.l_txt + 2.0 * b.l_bce + 0.5 * b.l_dice)) <= 1e-12);
        CHECK(b.l_txt >= 0.0);
        CHECK(b.l_bce >= 0.0);
        CHECK(b.l_dice >= 0.0);
        CHECK(b.l_dice < 1.0);
    }
}

TEST_CASE("finite differences are near-exact for a quadratic") {
    auto f = [](const std::vector<double>& x) { return x[0] * x[0]; };
    CHECK(finite_diff_check(f, {3.0}, {6.0}) < 1e-8);
}

TEST_CASE("the gradient-check suite passes at its tolerance") {
    const auto report = run_gradient_checks(7, 25);
    for (const auto& row : report.rows) {
        INFO(row.loss_name << " max_rel_err=" << row.max_rel_err);
        CHECK(row.pass);
    }
    CHECK(report.all_pass);
}

TEST_CASE("negative weights are rejected") {
    CHECK_THROWS_AS(compose_breakdown(1.0, 1.0, 1.0, LossWeights{1.0, 1.0, -2.0, 0.5}),
                    std::invalid_argument);
}

TEST_CASE("loss instances round-trip through JSON with identical totals") {
    for (std::uint64_t seed : {1ull, 2ull, 3ull}) {
        const LossInstance original = random_loss_instance(seed);
        const LossInstance restored = loss_instance_from_json(loss_instance_to_json(original));
        const auto a = total_loss(original.tokens, original.grid, original.gt, original.weights);
        const auto b = total_loss(restored.tokens, restored.grid, restored.gt, restored.weights);
        CHECK(a.total == b.total);
        CHECK(a.l_txt == b.l_txt);
        CHECK(a.l_mask == b.l_mask);
    }
}

TEST_CASE("regression fixtures verify against recorded breakdowns") {
    namespace fs = std::filesystem;
    const fs::path path = fs::temp_directory_path() / "rsseg_loss_fixture.jsonl";
    write_loss_fixture(path.string(), 99, 10);
    const auto result = verify_loss_fixture(path.string());
    CHECK(result.instances == 10);
    CHECK(result.failures == 0);
    CHECK(result.max_abs_err <= 1e-12);
    fs::remove(path);
}
