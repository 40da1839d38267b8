#include "rsseg/objectives.hpp"

#include <algorithm>
#include <cmath>

#include "rsseg/jsonl.hpp"
#include "rsseg/rng.hpp"

namespace rsseg::objectives {

namespace {

double sigmoid(double z) {
    if (z >= 0.0) {
        return 1.0 / (1.0 + std::exp(-z));
    }
    const double e = std::exp(z);
    return e / (1.0 + e);
}

void check_grid(const LogitGrid& pred, const maskgen::BinaryMask& gt) {
    if (pred.height != gt.height || pred.width != gt.width) {
        throw std::invalid_argument("logit grid and mask dimensions differ");
    }
    if (pred.values.size() != static_cast<std::size_t>(pred.height) * pred.width ||
        pred.values.empty()) {
        throw std::invalid_argument("logit grid has inconsistent or empty storage");
    }
}

}  // namespace

LossValue text_ce(const TokenLogits& tl) {
    const std::size_t expected = static_cast<std::size_t>(tl.seq_len) * tl.vocab;
    if (tl.values.size() != expected || tl.target.size() != static_cast<std::size_t>(tl.seq_len) ||
        tl.loss_mask.size() != static_cast<std::size_t>(tl.seq_len)) {
        throw std::invalid_argument("token logits have inconsistent storage");
    }

    int count = 0;
    for (int t = 0; t < tl.seq_len; ++t) {
        if (tl.loss_mask[static_cast<std::size_t>(t)]) {
            if (tl.target[static_cast<std::size_t>(t)] < 0 ||
                tl.target[static_cast<std::size_t>(t)] >= tl.vocab) {
                throw std::invalid_argument("target index out of vocabulary range");
            }
            ++count;
        }
    }
    if (count == 0) {
        throw EmptyTarget("no counted positions in loss mask");
    }

    LossValue out;
    out.grad.assign(tl.values.size(), 0.0);
    for (int t = 0; t < tl.seq_len; ++t) {
        if (!tl.loss_mask[static_cast<std::size_t>(t)]) {
            continue;
        }
        const double* row = tl.values.data() + static_cast<std::size_t>(t) * tl.vocab;
        double m = row[0];
        for (int v = 1; v < tl.vocab; ++v) {
            m = std::max(m, row[v]);
        }
        double sum = 0.0;
        for (int v = 0; v < tl.vocab; ++v) {
            sum += std::exp(row[v] - m);
        }
        const double lse = m + std::log(sum);
        const int target = tl.target[static_cast<std::size_t>(t)];
        out.loss += lse - row[target];

        double* grow = out.grad.data() + static_cast<std::size_t>(t) * tl.vocab;
        for (int v = 0; v < tl.vocab; ++v) {
            const double p = std::exp(row[v] - lse);
            grow[v] = (p - (v == target ? 1.0 : 0.0)) / count;
        }
    }
    out.loss /= count;
    return out;
}

LossValue bce_with_logits(const LogitGrid& pred, const maskgen::BinaryMask& gt) {
    check_grid(pred, gt);
    const std::size_t n = pred.values.size();

    LossValue out;
    out.grad.assign(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        const double z = pred.values[i];
        const double y = gt.data[i] ? 1.0 : 0.0;
        // max(z,0) - z*y + log(1 + exp(-|z|))
        out.loss += std::max(z, 0.0) - z * y + std::log1p(std::exp(-std::abs(z)));
        out.grad[i] = (sigmoid(z) - y) / static_cast<double>(n);
    }
    out.loss /= static_cast<double>(n);
    return out;
}

LossValue dice_loss(const LogitGrid& pred, const maskgen::BinaryMask& gt, double eps) {
    check_grid(pred, gt);
    const std::size_t n = pred.values.size();

    std::vector<double> probs(n);
    double sum_pg = 0.0;
    double sum_p = 0.0;
    double sum_g = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        probs[i] = sigmoid(pred.values[i]);
        sum_p += probs[i];
        if (gt.data[i]) {
            sum_pg += probs[i];
            sum_g += 1.0;
        }
    }
    const double num = 2.0 * sum_pg + eps;
    const double den = sum_p + sum_g + eps;

    LossValue out;
    out.loss = 1.0 - num / den;
    out.grad.assign(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        const double g = gt.data[i] ? 1.0 : 0.0;
        const double dloss_dp = -(2.0 * g * den - num) / (den * den);
        out.grad[i] = dloss_dp * probs[i] * (1.0 - probs[i]);
    }
    return out;
}

LossBreakdown compose_breakdown(double l_txt, double l_bce, double l_dice, const LossWeights& w) {
    if (w.lambda_txt < 0.0 || w.lambda_mask < 0.0 || w.lambda_bce < 0.0 || w.lambda_dice < 0.0) {
        throw std::invalid_argument("loss weights must be non-negative");
    }
    LossBreakdown b;
    b.l_txt = l_txt;
    b.l_bce = l_bce;
    b.l_dice = l_dice;
    b.l_mask = w.lambda_bce * l_bce + w.lambda_dice * l_dice;
    b.total = w.lambda_txt * l_txt + w.lambda_mask * b.l_mask;
    return b;
}

LossBreakdown total_loss(const TokenLogits& tl,
                         const LogitGrid& pred,
                         const maskgen::BinaryMask& gt,
                         const LossWeights& w) {
    const double l_txt = text_ce(tl).loss;
    const double l_bce = bce_with_logits(pred, gt).loss;
    const double l_dice = dice_loss(pred, gt).loss;
    return compose_breakdown(l_txt, l_bce, l_dice, w);
}

double finite_diff_check(const std::function<double(const std::vector<double>&)>& f,
                         std::vector<double> point,
                         const std::vector<double>& analytic_grad,
                         double h) {
    if (analytic_grad.size() != point.size()) {
        throw std::invalid_argument("gradient and point sizes differ");
    }
    double max_rel = 0.0;
    for (std::size_t i = 0; i < point.size(); ++i) {
        const double saved = point[i];
        point[i] = saved + h;
        const double f_plus = f(point);
        point[i] = saved - h;
        const double f_minus = f(point);
        point[i] = saved;
        const double g_fd = (f_plus - f_minus) / (2.0 * h);
        const double rel = std::abs(analytic_grad[i] - g_fd) / (std::abs(g_fd) + 1e-8);
        max_rel = std::max(max_rel, rel);
    }
    return max_rel;
}

namespace {

TokenLogits random_token_logits(Rng& rng) {
    TokenLogits tl;
    tl.seq_len = 1 + static_cast<int>(uniform_index(rng, 8));
    tl.vocab = 2 + static_cast<int>(uniform_index(rng, 31));
    tl.values.resize(static_cast<std::size_t>(tl.seq_len) * tl.vocab);
    for (double& v : tl.values) {
        v = uniform01(rng) * 6.0 - 3.0;
    }
    tl.target.resize(static_cast<std::size_t>(tl.seq_len));
    tl.loss_mask.resize(static_cast<std::size_t>(tl.seq_len));
    for (int t = 0; t < tl.seq_len; ++t) {
        tl.target[static_cast<std::size_t>(t)] =
            static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(tl.vocab)));
        tl.loss_mask[static_cast<std::size_t>(t)] = uniform01(rng) < 0.7 ? 1 : 0;
    }
    tl.loss_mask[uniform_index(rng, static_cast<std::uint64_t>(tl.seq_len))] = 1;
    return tl;
}

void random_grid_pair(Rng& rng, LogitGrid& grid, maskgen::BinaryMask& gt) {
    const int h = 2 + static_cast<int>(uniform_index(rng, 15));
    const int w = 2 + static_cast<int>(uniform_index(rng, 15));
    grid = LogitGrid(h, w);
    gt = maskgen::BinaryMask(w, h);
    for (std::size_t i = 0; i < grid.values.size(); ++i) {
        grid.values[i] = uniform01(rng) * 6.0 - 3.0;
        gt.data[i] = uniform01(rng) < 0.5;
    }
}

}  // namespace

GradCheckReport run_gradient_checks(std::uint64_t seed, int instances_per_loss) {
    GradCheckReport report;
    report.tolerance = 1e-4;
    Rng rng(seed);

    GradCheckRow text_row{"text_ce", instances_per_loss, 0.0, false};
    for (int i = 0; i < instances_per_loss; ++i) {
        TokenLogits tl = random_token_logits(rng);
        const LossValue lv = text_ce(tl);
        auto f = [&tl](const std::vector<double>& x) {
            TokenLogits copy = tl;
            copy.values = x;
            return text_ce(copy).loss;
        };
        text_row.max_rel_err = std::max(text_row.max_rel_err,
                                        finite_diff_check(f, tl.values, lv.grad));
    }

    GradCheckRow bce_row{"bce_with_logits", instances_per_loss, 0.0, false};
    GradCheckRow dice_row{"dice_loss", instances_per_loss, 0.0, false};
    for (int i = 0; i < instances_per_loss; ++i) {
        LogitGrid grid;
        maskgen::BinaryMask gt;
        random_grid_pair(rng, grid, gt);

        const LossValue bce = bce_with_logits(grid, gt);
        auto f_bce = [&grid, &gt](const std::vector<double>& x) {
            LogitGrid copy = grid;
            copy.values = x;
            return bce_with_logits(copy, gt).loss;
        };
        bce_row.max_rel_err = std::max(bce_row.max_rel_err,
                                       finite_diff_check(f_bce, grid.values, bce.grad));

        const LossValue dice = dice_loss(grid, gt);
        auto f_dice = [&grid, &gt](const std::vector<double>& x) {
            LogitGrid copy = grid;
            copy.values = x;
            return dice_loss(copy, gt).loss;
        };
        dice_row.max_rel_err = std::max(dice_row.max_rel_err,
                                        finite_diff_check(f_dice, grid.values, dice.grad));
    }

    GradCheckRow total_row{"total_loss", instances_per_loss, 0.0, false};
    const LossWeights weights;
    for (int i = 0; i < instances_per_loss; ++i) {
        TokenLogits tl = random_token_logits(rng);
        LogitGrid grid;
        maskgen::BinaryMask gt;
        random_grid_pair(rng, grid, gt);

        // Gradient of the weighted total w.r.t. the concatenated
        // (token logits, grid logits) vector.
        const LossValue g_txt = text_ce(tl);
        const LossValue g_bce = bce_with_logits(grid, gt);
        const LossValue g_dice = dice_loss(grid, gt);
        std::vector<double> point = tl.values;
        point.insert(point.end(), grid.values.begin(), grid.values.end());
        std::vector<double> analytic(point.size());
        for (std::size_t k = 0; k < tl.values.size(); ++k) {
            analytic[k] = weights.lambda_txt * g_txt.grad[k];
        }
        for (std::size_t k = 0; k < grid.values.size(); ++k) {
            analytic[tl.values.size() + k] =
                weights.lambda_mask *
                (weights.lambda_bce * g_bce.grad[k] + weights.lambda_dice * g_dice.grad[k]);
        }
        auto f_total = [&tl, &grid, &gt, &weights](const std::vector<double>& x) {
            TokenLogits tcopy = tl;
            tcopy.values.assign(x.begin(), x.begin() + static_cast<std::ptrdiff_t>(tl.values.size()));
            LogitGrid gcopy = grid;
            gcopy.values.assign(x.begin() + static_cast<std::ptrdiff_t>(tl.values.size()), x.end());
            return total_loss(tcopy, gcopy, gt, weights).total;
        };
        total_row.max_rel_err = std::max(total_row.max_rel_err,
                                         finite_diff_check(f_total, point, analytic));
    }

    report.rows = {text_row, bce_row, dice_row, total_row};
    report.all_pass = true;
    for (GradCheckRow& row : report.rows) {
        row.pass = row.max_rel_err < report.tolerance;
        report.all_pass = report.all_pass && row.pass;
    }
    return report;
}

using Json = nlohmann::json;

Json loss_instance_to_json(const LossInstance& instance) {
    std::vector<int> mask_bits(instance.gt.data.size());
    for (std::size_t i = 0; i < instance.gt.data.size(); ++i) {
        mask_bits[i] = instance.gt.data[i] ? 1 : 0;
    }
    std::vector<int> loss_mask(instance.tokens.loss_mask.begin(),
                               instance.tokens.loss_mask.end());
    return Json{
        {"tokens",
         {{"seq_len", instance.tokens.seq_len},
          {"vocab", instance.tokens.vocab},
          {"values", instance.tokens.values},
          {"target", instance.tokens.target},
          {"loss_mask", loss_mask}}},
        {"grid",
         {{"height", instance.grid.height},
          {"width", instance.grid.width},
          {"values", instance.grid.values}}},
        {"gt", mask_bits},
        {"weights",
         {{"lambda_txt", instance.weights.lambda_txt},
          {"lambda_mask", instance.weights.lambda_mask},
          {"lambda_bce", instance.weights.lambda_bce},
          {"lambda_dice", instance.weights.lambda_dice}}},
    };
}

LossInstance loss_instance_from_json(const Json& j) {
    LossInstance instance;
    const Json& t = j.at("tokens");
    instance.tokens.seq_len = t.at("seq_len").get<int>();
    instance.tokens.vocab = t.at("vocab").get<int>();
    instance.tokens.values = t.at("values").get<std::vector<double>>();
    instance.tokens.target = t.at("target").get<std::vector<int>>();
    for (int bit : t.at("loss_mask").get<std::vector<int>>()) {
        instance.tokens.loss_mask.push_back(bit ? 1 : 0);
    }
    const Json& g = j.at("grid");
    instance.grid.height = g.at("height").get<int>();
    instance.grid.width = g.at("width").get<int>();
    instance.grid.values = g.at("values").get<std::vector<double>>();
    instance.gt = maskgen::BinaryMask(instance.grid.width, instance.grid.height);
    const auto bits = j.at("gt").get<std::vector<int>>();
    if (bits.size() != instance.gt.data.size()) {
        throw std::invalid_argument("gt bit count does not match the grid");
    }
    for (std::size_t i = 0; i < bits.size(); ++i) {
        instance.gt.data[i] = bits[i] != 0;
    }
    const Json& w = j.at("weights");
    instance.weights.lambda_txt = w.at("lambda_txt").get<double>();
    instance.weights.lambda_mask = w.at("lambda_mask").get<double>();
    instance.weights.lambda_bce = w.at("lambda_bce").get<double>();
    instance.weights.lambda_dice = w.at("lambda_dice").get<double>();
    return instance;
}

LossInstance random_loss_instance(std::uint64_t seed) {
    Rng rng(seed);
    LossInstance instance;
    instance.tokens = random_token_logits(rng);
    random_grid_pair(rng, instance.grid, instance.gt);
    return instance;
}

void write_loss_fixture(const std::string& path, std::uint64_t seed, int instances) {
    std::vector<Json> lines;
    for (int i = 0; i < instances; ++i) {
        const LossInstance instance = random_loss_instance(seed + static_cast<std::uint64_t>(i));
        const LossBreakdown b =
            total_loss(instance.tokens, instance.grid, instance.gt, instance.weights);
        lines.push_back(Json{
            {"instance", loss_instance_to_json(instance)},
            {"breakdown",
             {{"l_txt", b.l_txt},
              {"l_bce", b.l_bce},
              {"l_dice", b.l_dice},
              {"l_mask", b.l_mask},
              {"total", b.total}}},
        });
    }
    write_jsonl(path, lines);
}

FixtureCheckResult verify_loss_fixture(const std::string& path, double tolerance) {
    FixtureCheckResult result;
    for (const Json& line : read_jsonl(path).records) {
        ++result.instances;
        const LossInstance instance = loss_instance_from_json(line.at("instance"));
        const LossBreakdown b =
            total_loss(instance.tokens, instance.grid, instance.gt, instance.weights);
        const Json& expected = line.at("breakdown");
        const double errs[] = {
            std::abs(b.l_txt - expected.at("l_txt").get<double>()),
            std::abs(b.l_bce - expected.at("l_bce").get<double>()),
            std::abs(b.l_dice - expected.at("l_dice").get<double>()),
            std::abs(b.l_mask - expected.at("l_mask").get<double>()),
            std::abs(b.total - expected.at("total").get<double>()),
        };
        double worst = 0.0;
        for (double e : errs) {
            worst = std::max(worst, e);
        }
        result.max_abs_err = std::max(result.max_abs_err, worst);
        if (worst > tolerance) {
            ++result.failures;
        }
    }
    return result;
}

}  // namespace rsseg::objectives
