// rsseg: build referring-segmentation datasets from detection annotations and
// evaluate predictions against them.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "rsseg/jsonl.hpp"
#include "rsseg/maskgen.hpp"
#include "rsseg/objectives.hpp"
#include "rsseg/pipeline.hpp"

namespace fs = std::filesystem;
using namespace rsseg;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitValidation = 1;
constexpr int kExitIo = 2;

struct GlobalOpts {
    std::string config_path;
    std::string out_dir = "run";
    std::optional<std::uint64_t> seed;
    std::optional<int> workers;
};

pipeline::RunConfig make_config(const GlobalOpts& g) {
    pipeline::RunConfig cfg;
    if (!g.config_path.empty()) {
        cfg = pipeline::load_run_config(g.config_path);
    }
    if (g.seed) {
        cfg.seed = *g.seed;
    }
    if (g.workers) {
        cfg.workers = *g.workers;
    }
    return cfg;
}

std::string in_out_dir(const GlobalOpts& g, const std::string& name) {
    return (fs::path(g.out_dir) / name).string();
}

void print_record_errors(const std::vector<geodata::RecordError>& errors) {
    for (const auto& e : errors) {
        std::cerr << "  record " << e.index << ": " << e.message << "\n";
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"dataset synthesis and evaluation for referring segmentation over satellite imagery"};
    app.require_subcommand(1);

    GlobalOpts g;
    app.add_option("--config", g.config_path, "JSON run configuration");
    app.add_option("--out", g.out_dir, "output directory for pipeline artifacts");
    std::uint64_t seed_flag = 0;
    auto* seed_opt = app.add_option("--seed", seed_flag, "override the run seed");
    int workers_flag = 1;
    auto* workers_opt = app.add_option("--workers", workers_flag, "worker threads per stage");

    // ---- ingest
    auto* ingest = app.add_subcommand("ingest", "parse an annotation stream");
    std::string ingest_input;
    std::string ingest_format = "jsonl";
    ingest->add_option("--input", ingest_input, "annotation file")->required();
    ingest->add_option("--format", ingest_format, "xview-geojson | jsonl")
        ->check(CLI::IsMember({"xview-geojson", "jsonl"}));

    // ---- chip
    auto* chip_cmd = app.add_subcommand("chip", "tile sources and localize detections");
    std::string chip_sizes;
    chip_cmd->add_option("--sizes", chip_sizes, "source dimensions JSON")->required();

    // ---- stats
    auto* stats_cmd = app.add_subcommand("stats", "per-class detection statistics");
    std::string stats_detections;
    std::string stats_splits;
    stats_cmd->add_option("--detections", stats_detections, "detections JSONL");
    stats_cmd->add_option("--splits", stats_splits, "split assignment JSONL");

    // ---- filter
    auto* filter_cmd = app.add_subcommand("filter", "apply uniqueness and interest filters");

    // ---- synth
    auto* synth_cmd = app.add_subcommand("synth", "generate localization queries");

    // ---- masks
    auto* masks_cmd = app.add_subcommand("masks", "generate segmentation masks");

    // ---- split
    auto* split_cmd = app.add_subcommand("split", "assign train/val/test splits");

    // ---- package
    auto* package_cmd = app.add_subcommand("package", "join queries, masks and splits");

    // ---- eval
    auto* eval_cmd = app.add_subcommand("eval", "evaluate predictions");
    eval_cmd->require_subcommand(1);
    std::string eval_pred;
    std::string eval_gt;
    auto* eval_seg = eval_cmd->add_subcommand("seg", "gIoU/cIoU with size buckets");
    auto* eval_caption = eval_cmd->add_subcommand("caption", "BLEU / ROUGE-L / CIDEr");
    auto* eval_vqa = eval_cmd->add_subcommand("vqa", "per-category answer accuracy");
    for (auto* sub : {eval_seg, eval_caption, eval_vqa}) {
        sub->add_option("--pred", eval_pred, "predictions JSONL")->required();
        sub->add_option("--gt", eval_gt, "ground truth JSONL")->required();
    }

    // ---- losses
    auto* losses_cmd = app.add_subcommand("losses", "training-objective numerics");
    auto* losses_check = losses_cmd->add_subcommand("check", "run the gradient-check suite");
    std::uint64_t losses_seed = 7;
    int losses_instances = 100;
    std::string losses_fixture;
    std::string losses_write_fixture;
    losses_check->add_option("--check-seed", losses_seed, "suite seed");
    losses_check->add_option("--instances", losses_instances, "instances per loss");
    losses_check->add_option("--fixture", losses_fixture,
                             "verify recorded breakdowns from a regression fixture");
    losses_check->add_option("--write-fixture", losses_write_fixture,
                             "write a regression fixture before running the suite");

    // ---- sample-for-review
    auto* sample_cmd = app.add_subcommand("sample-for-review",
                                          "export a random manifest sample for human review");
    std::string sample_manifest;
    std::size_t sample_n = 10;
    sample_cmd->add_option("--manifest", sample_manifest, "dataset manifest JSONL");
    sample_cmd->add_option("--n", sample_n, "number of records");

    CLI11_PARSE(app, argc, argv);

    if (*seed_opt) {
        g.seed = seed_flag;
    }
    if (*workers_opt) {
        g.workers = workers_flag;
    }

    try {
        fs::create_directories(g.out_dir);
        const pipeline::RunConfig cfg = make_config(g);

        if (*ingest) {
            const auto format = ingest_format == "xview-geojson"
                                    ? geodata::InputFormat::XViewGeoJson
                                    : geodata::InputFormat::Jsonl;
            const auto outcome =
                pipeline::run_ingest(ingest_input, format, in_out_dir(g, "raw.jsonl"));
            std::cout << "ingest: " << outcome.kept << " detections, "
                      << outcome.errors.size() << " errors, " << outcome.zero_area_dropped
                      << " zero-area dropped, " << outcome.unknown_class_count
                      << " unknown classes\n";
            if (!outcome.errors.empty()) {
                print_record_errors(outcome.errors);
                return kExitValidation;
            }
            return kExitOk;
        }

        if (*chip_cmd) {
            const auto outcome = pipeline::run_chip(cfg, in_out_dir(g, "raw.jsonl"), chip_sizes,
                                                    in_out_dir(g, "chips.jsonl"),
                                                    in_out_dir(g, "detections.jsonl"));
            std::cout << "chip: " << outcome.chips << " chips, " << outcome.detections
                      << " detections, " << outcome.rejected.size() << " rejected, "
                      << outcome.dropped_below_min_area << " dropped below min area\n";
            if (!outcome.rejected.empty()) {
                print_record_errors(outcome.rejected);
                return kExitValidation;
            }
            return kExitOk;
        }

        if (*stats_cmd) {
            const std::string detections = stats_detections.empty()
                                               ? in_out_dir(g, "detections.jsonl")
                                               : stats_detections;
            std::optional<std::string> splits;
            if (!stats_splits.empty()) {
                splits = stats_splits;
            }
            pipeline::run_stats(detections, splits, in_out_dir(g, "stats.json"),
                                in_out_dir(g, "stats.txt"));
            std::cout << read_text_file(in_out_dir(g, "stats.txt"));
            return kExitOk;
        }

        if (*filter_cmd) {
            const std::size_t kept = pipeline::run_filter(cfg, in_out_dir(g, "chips.jsonl"),
                                                          in_out_dir(g, "detections.jsonl"),
                                                          in_out_dir(g, "filtered.jsonl"));
            std::cout << "filter: " << kept << " candidates\n";
            return kExitOk;
        }

        if (*synth_cmd) {
            const auto outcome = pipeline::run_synth(
                cfg, in_out_dir(g, "chips.jsonl"), in_out_dir(g, "detections.jsonl"),
                in_out_dir(g, "filtered.jsonl"), in_out_dir(g, "queries.jsonl"),
                in_out_dir(g, "queries.journal.jsonl"), in_out_dir(g, "synth.ledger.jsonl"),
                in_out_dir(g, "llm_audit.jsonl"));
            std::cout << "synth: " << outcome.records << " query records for "
                      << outcome.detections << " detections (" << outcome.resumed
                      << " resumed, " << outcome.failed << " failed)\n";
            if (outcome.failed > 0) {
                std::cerr << "failures ledgered in " << outcome.ledger_path << "\n";
                return kExitValidation;
            }
            return kExitOk;
        }

        if (*masks_cmd) {
            const auto outcome =
                pipeline::run_masks(cfg, in_out_dir(g, "chips.jsonl"),
                                    in_out_dir(g, "filtered.jsonl"), in_out_dir(g, "masks.jsonl"));
            std::cout << "masks: " << outcome.masks << " masks, " << outcome.degenerate
                      << " degenerate\n";
            return kExitOk;
        }

        if (*split_cmd) {
            pipeline::run_split(cfg, in_out_dir(g, "chips.jsonl"), in_out_dir(g, "splits.jsonl"));
            std::cout << "split: assignments written to " << in_out_dir(g, "splits.jsonl")
                      << "\n";
            return kExitOk;
        }

        if (*package_cmd) {
            const auto outcome = pipeline::run_package(
                cfg, in_out_dir(g, "filtered.jsonl"), in_out_dir(g, "queries.jsonl"),
                in_out_dir(g, "masks.jsonl"), in_out_dir(g, "splits.jsonl"),
                in_out_dir(g, "manifest.jsonl"), in_out_dir(g, "manifest.header.json"),
                in_out_dir(g, "class_table.txt"), in_out_dir(g, "package.ledger.jsonl"));
            std::cout << "package: " << outcome.records << " records, " << outcome.dropped
                      << " dropped (ledger: " << outcome.ledger_path << ")\n";
            return kExitOk;
        }

        if (*eval_seg) {
            const auto outcome = pipeline::run_eval_seg(
                eval_pred, eval_gt, in_out_dir(g, "eval_seg.json"),
                in_out_dir(g, "eval_seg.txt"), in_out_dir(g, "eval_seg.ledger.jsonl"));
            std::cout << read_text_file(in_out_dir(g, "eval_seg.txt"));
            std::cout << "matched " << outcome.matched << ", excluded " << outcome.unmatched
                      << "\n";
            return kExitOk;
        }

        if (*eval_caption) {
            const auto outcome = pipeline::run_eval_caption(
                eval_pred, eval_gt, in_out_dir(g, "eval_caption.json"),
                in_out_dir(g, "eval_caption.txt"), in_out_dir(g, "eval_caption.ledger.jsonl"));
            std::cout << read_text_file(in_out_dir(g, "eval_caption.txt"));
            std::cout << "matched " << outcome.matched << ", excluded " << outcome.unmatched
                      << "\n";
            return kExitOk;
        }

        if (*eval_vqa) {
            const auto outcome = pipeline::run_eval_vqa(
                eval_pred, eval_gt, in_out_dir(g, "eval_vqa.json"),
                in_out_dir(g, "eval_vqa.txt"), in_out_dir(g, "eval_vqa.ledger.jsonl"));
            std::cout << read_text_file(in_out_dir(g, "eval_vqa.txt"));
            std::cout << "matched " << outcome.matched << ", excluded " << outcome.unmatched
                      << "\n";
            return kExitOk;
        }

        if (*losses_check) {
            if (!losses_write_fixture.empty()) {
                objectives::write_loss_fixture(losses_write_fixture, losses_seed,
                                               losses_instances);
                std::cout << "wrote " << losses_instances << " instances to "
                          << losses_write_fixture << "\n";
            }
            bool fixture_ok = true;
            if (!losses_fixture.empty()) {
                const auto fixture = objectives::verify_loss_fixture(losses_fixture);
                fixture_ok = fixture.failures == 0;
                std::printf("fixture %s: %zu instances, %zu failures, max abs err %.3e\n",
                            losses_fixture.c_str(), fixture.instances, fixture.failures,
                            fixture.max_abs_err);
            }
            const auto report = objectives::run_gradient_checks(losses_seed, losses_instances);
            std::printf("%-18s %10s %14s  %s\n", "loss", "instances", "max_rel_err", "status");
            for (const auto& row : report.rows) {
                std::printf("%-18s %10d %14.3e  %s\n", row.loss_name.c_str(), row.instances,
                            row.max_rel_err, row.pass ? "pass" : "FAIL");
            }
            std::printf("tolerance %.1e: %s\n", report.tolerance,
                        report.all_pass ? "all pass" : "FAILURES");
            return (report.all_pass && fixture_ok) ? kExitOk : kExitValidation;
        }

        if (*sample_cmd) {
            const std::string manifest =
                sample_manifest.empty() ? in_out_dir(g, "manifest.jsonl") : sample_manifest;
            const std::size_t taken = pipeline::run_sample_for_review(
                manifest, sample_n, cfg.seed, in_out_dir(g, "review_sample.jsonl"));
            std::cout << "sample-for-review: " << taken << " records written to "
                      << in_out_dir(g, "review_sample.jsonl") << "\n";
            return kExitOk;
        }
    } catch (const IoError& e) {
        std::cerr << "I/O error: " << e.what() << "\n";
        return kExitIo;
    } catch (const maskgen::BackendUnavailable& e) {
        std::cerr << "backend error: " << e.what() << "\n";
        return kExitIo;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitValidation;
    }

    return kExitOk;
}
