#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "rsseg/gateway.hpp"
#include "rsseg/geodata.hpp"
#include "rsseg/jsonl.hpp"
#include "rsseg/maskgen.hpp"
#include "rsseg/metrics.hpp"
#include "rsseg/prompting.hpp"

namespace rsseg::pipeline {

struct LlmSettings {
    llm::BackendConfig backend;
    std::string model = "gpt-4o";
    double temperature_stage = 0.2;
    double temperature_rephrase = 0.7;
    int max_tokens = 512;
};

struct SamSettings {
    std::string kind = "rect-stub";  // "rect-stub" | "http"
    std::string endpoint;
    maskgen::SamConfig config;
    int merge_min_overlap_px = 80;
    double timeout_s = 60.0;
};

struct RunConfig {
    std::uint64_t seed = 42;
    int chip_size = 512;
    double min_area_frac = 0.3;
    double interest_frac = 0.5;
    int unique_max = 2;
    double spatial_prob = 0.5;
    int variants_per_object = 3;
    geodata::SplitRatios split_ratios;
    LlmSettings llm;
    SamSettings sam;
    int workers = 1;
};

Json run_config_to_json(const RunConfig& cfg);
RunConfig run_config_from_json(const Json& j);
RunConfig load_run_config(const std::string& path);

// Stable across re-serialization: hash of the canonical (sorted-key) dump.
std::string config_hash(const RunConfig& cfg);

// ---------------------------------------------------------------------------
// Artifact record schemas (JSON-Lines, one record per line)

Json chip_to_json(const geodata::ImageChip& chip);
geodata::ImageChip chip_from_json(const Json& j);

Json detection_to_json(const geodata::Detection& d, const std::string& quadrant);
geodata::Detection detection_from_json(const Json& j);

Json query_record_to_json(const prompting::QueryRecord& q);
prompting::QueryRecord query_record_from_json(const Json& j);

struct MaskRecord {
    std::string detection_id;
    int width = 0;
    int height = 0;
    std::vector<std::int64_t> rle_counts;
    bool degenerate = false;
};

Json mask_record_to_json(const MaskRecord& m);
MaskRecord mask_record_from_json(const Json& j);

// ---------------------------------------------------------------------------
// Pipeline steps. All functions throw IoError for file-system failures and
// std::invalid_argument (or subclasses) for validation failures; callers map
// them to exit codes.

struct IngestOutcome {
    std::size_t kept = 0;
    std::vector<geodata::RecordError> errors;
    std::size_t zero_area_dropped = 0;
    std::size_t unknown_class_count = 0;
};

IngestOutcome run_ingest(const std::string& input_path,
                         geodata::InputFormat format,
                         const std::string& out_path);

geodata::SourceSizeMap load_source_sizes(const std::string& path);

struct ChipOutcome {
    std::size_t chips = 0;
    std::size_t detections = 0;
    std::vector<geodata::RecordError> rejected;
    std::size_t dropped_below_min_area = 0;
};

ChipOutcome run_chip(const RunConfig& cfg,
                     const std::string& raw_path,
                     const std::string& sizes_path,
                     const std::string& chips_out,
                     const std::string& detections_out);

void run_stats(const std::string& detections_path,
               const std::optional<std::string>& splits_path,
               const std::string& out_json,
               const std::string& out_txt);

std::size_t run_filter(const RunConfig& cfg,
                       const std::string& chips_path,
                       const std::string& detections_path,
                       const std::string& out_path);

void run_split(const RunConfig& cfg, const std::string& chips_path, const std::string& out_path);

struct SynthOutcome {
    std::size_t detections = 0;
    std::size_t records = 0;       // query records written
    std::size_t resumed = 0;       // detections satisfied by the journal
    std::size_t failed = 0;        // detections ledgered this run
    std::string ledger_path;
};

// Two-stage generation plus rephrasings for every filtered detection, in
// sorted detection_id order. Progress is journaled per detection so an
// interrupted run resumes without repeating completed work.
SynthOutcome run_synth(const RunConfig& cfg,
                       const std::string& chips_path,
                       const std::string& detections_path,
                       const std::string& filtered_path,
                       const std::string& queries_out,
                       const std::string& journal_path,
                       const std::string& ledger_path,
                       const std::string& audit_path);

struct MasksOutcome {
    std::size_t masks = 0;
    std::size_t degenerate = 0;
};

MasksOutcome run_masks(const RunConfig& cfg,
                       const std::string& chips_path,
                       const std::string& filtered_path,
                       const std::string& masks_out,
                       maskgen::SegmentationBackend* backend_override = nullptr);

struct PackageOutcome {
    std::size_t records = 0;
    std::size_t dropped = 0;
    std::string ledger_path;
};

PackageOutcome run_package(const RunConfig& cfg,
                           const std::string& filtered_path,
                           const std::string& queries_path,
                           const std::string& masks_path,
                           const std::string& splits_path,
                           const std::string& manifest_out,
                           const std::string& header_out,
                           const std::string& class_table_out,
                           const std::string& ledger_path);

struct SegEvalOutcome {
    metrics::SegReport report;
    std::size_t matched = 0;
    std::size_t unmatched = 0;
};

SegEvalOutcome run_eval_seg(const std::string& pred_path,
                            const std::string& gt_path,
                            const std::string& out_json,
                            const std::string& out_txt,
                            const std::string& ledger_path);

struct CaptionEvalOutcome {
    std::vector<double> bleu;  // BLEU-1..4
    double rouge_l = 0.0;
    double cider_x100 = 0.0;   // CIDEr-D scaled to the conventional table scale
    std::size_t matched = 0;
    std::size_t unmatched = 0;
};

CaptionEvalOutcome run_eval_caption(const std::string& pred_path,
                                    const std::string& gt_path,
                                    const std::string& out_json,
                                    const std::string& out_txt,
                                    const std::string& ledger_path);

struct VqaEvalOutcome {
    metrics::VqaReport report;
    std::size_t matched = 0;
    std::size_t unmatched = 0;
};

VqaEvalOutcome run_eval_vqa(const std::string& pred_path,
                            const std::string& gt_path,
                            const std::string& out_json,
                            const std::string& out_txt,
                            const std::string& ledger_path);

std::size_t run_sample_for_review(const std::string& manifest_path,
                                  std::size_t n,
                                  std::uint64_t seed,
                                  const std::string& out_path);

// ---------------------------------------------------------------------------
// Text report rendering (reports.cpp)

std::string render_stats_text(const geodata::ClassStats& stats, bool with_splits);
std::string render_seg_report_text(const metrics::SegReport& report);
std::string render_caption_report_text(const CaptionEvalOutcome& outcome);
std::string render_vqa_report_text(const metrics::VqaReport& report);
std::string render_class_table(const geodata::ClassStats& stats);

Json seg_report_to_json(const metrics::SegReport& report);
Json vqa_report_to_json(const metrics::VqaReport& report);
Json class_stats_to_json(const geodata::ClassStats& stats, bool with_splits);

}  // namespace rsseg::pipeline
