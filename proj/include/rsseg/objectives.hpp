#pragma once

#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "rsseg/mask.hpp"

namespace rsseg::objectives {

struct LossWeights {
    double lambda_txt = 1.0;
    double lambda_mask = 1.0;
    double lambda_bce = 2.0;
    double lambda_dice = 0.5;
};

// Pre-sigmoid per-pixel logits, row-major.
struct LogitGrid {
    int height = 0;
    int width = 0;
    std::vector<double> values;

    LogitGrid() = default;
    LogitGrid(int h, int w) : height(h), width(w), values(static_cast<std::size_t>(h) * w, 0.0) {}
    std::size_t size() const { return values.size(); }
};

// T x V logits with target indices; loss_mask marks the positions that count
// toward the loss (prompt tokens excluded).
struct TokenLogits {
    int seq_len = 0;
    int vocab = 0;
    std::vector<double> values;      // seq_len * vocab, row-major
    std::vector<int> target;         // seq_len entries in [0, vocab)
    std::vector<std::uint8_t> loss_mask;  // seq_len entries, nonzero = counted
};

struct EmptyTarget : std::invalid_argument {
    explicit EmptyTarget(const std::string& msg) : std::invalid_argument(msg) {}
};

struct LossValue {
    double loss = 0.0;
    std::vector<double> grad;  // same layout as the input values
};

// Mean over counted positions of -log softmax(logits)[target].
LossValue text_ce(const TokenLogits& tl);

// Numerically stable mean binary cross-entropy of sigmoid(logits) vs gt.
LossValue bce_with_logits(const LogitGrid& pred, const maskgen::BinaryMask& gt);

// 1 - (2 * sum(p*g) + eps) / (sum(p) + sum(g) + eps) with p = sigmoid(logits).
LossValue dice_loss(const LogitGrid& pred, const maskgen::BinaryMask& gt, double eps = 1.0);

struct LossBreakdown {
    double l_txt = 0.0;
    double l_bce = 0.0;
    double l_dice = 0.0;
    double l_mask = 0.0;
    double total = 0.0;
};

// l_mask = lambda_bce*l_bce + lambda_dice*l_dice;
// total  = lambda_txt*l_txt + lambda_mask*l_mask. Same-order summation so the
// decomposition holds bit-for-bit.
LossBreakdown compose_breakdown(double l_txt, double l_bce, double l_dice, const LossWeights& w);

LossBreakdown total_loss(const TokenLogits& tl,
                         const LogitGrid& pred,
                         const maskgen::BinaryMask& gt,
                         const LossWeights& w = LossWeights{});

// Central finite differences per coordinate; returns
// max |g_analytic - g_fd| / (|g_fd| + 1e-8).
double finite_diff_check(const std::function<double(const std::vector<double>&)>& f,
                         std::vector<double> point,
                         const std::vector<double>& analytic_grad,
                         double h = 1e-4);

// Gradient-check suite behind `losses check`.
struct GradCheckRow {
    std::string loss_name;
    int instances = 0;
    double max_rel_err = 0.0;
    bool pass = false;
};

struct GradCheckReport {
    std::vector<GradCheckRow> rows;
    double tolerance = 1e-4;
    bool all_pass = false;
};

GradCheckReport run_gradient_checks(std::uint64_t seed = 7, int instances_per_loss = 100);

// A full loss evaluation instance, serializable for regression fixtures.
struct LossInstance {
    TokenLogits tokens;
    LogitGrid grid;
    maskgen::BinaryMask gt;
    LossWeights weights;
};

nlohmann::json loss_instance_to_json(const LossInstance& instance);
LossInstance loss_instance_from_json(const nlohmann::json& j);

LossInstance random_loss_instance(std::uint64_t seed);

struct FixtureCheckResult {
    std::size_t instances = 0;
    std::size_t failures = 0;
    double max_abs_err = 0.0;
};

// Re-evaluates every {instance, breakdown} line and compares against the
// recorded totals.
FixtureCheckResult verify_loss_fixture(const std::string& path, double tolerance = 1e-12);
void write_loss_fixture(const std::string& path, std::uint64_t seed, int instances);

}  // namespace rsseg::objectives
