#include "rsseg/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <set>
#include <thread>
#include <unordered_map>

#include "rsseg/rng.hpp"

namespace rsseg::pipeline {

namespace {

constexpr const char* kVersion = "0.1.0";

std::string header_path_for(const std::string& path) {
    const std::string suffix = ".jsonl";
    if (path.size() > suffix.size() &&
        path.compare(path.size() - suffix.size(), suffix.size(), suffix) == 0) {
        return path.substr(0, path.size() - suffix.size()) + ".header.json";
    }
    return path + ".header.json";
}

void write_header(const std::string& artifact_path, Json header) {
    header["version"] = kVersion;
    write_json(header_path_for(artifact_path), header);
}

std::string trim(const std::string& s) {
    std::size_t b = 0;
    std::size_t e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) {
        ++b;
    }
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) {
        --e;
    }
    return s.substr(b, e - b);
}

template <typename Fn>
void parallel_for(std::size_t n, int workers, Fn&& fn) {
    if (workers <= 1 || n <= 1) {
        for (std::size_t i = 0; i < n; ++i) {
            fn(i);
        }
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::mutex error_mu;
    const std::size_t pool_size = std::min<std::size_t>(static_cast<std::size_t>(workers), n);
    std::vector<std::thread> pool;
    pool.reserve(pool_size);
    for (std::size_t t = 0; t < pool_size; ++t) {
        pool.emplace_back([&] {
            for (std::size_t i = next.fetch_add(1); i < n; i = next.fetch_add(1)) {
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard<std::mutex> lock(error_mu);
                    if (!error) {
                        error = std::current_exception();
                    }
                }
            }
        });
    }
    for (std::thread& th : pool) {
        th.join();
    }
    if (error) {
        std::rethrow_exception(error);
    }
}

}  // namespace

// ---------------------------------------------------------------------------
// Config

Json run_config_to_json(const RunConfig& cfg) {
    return Json{
        {"seed", cfg.seed},
        {"chip_size", cfg.chip_size},
        {"min_area_frac", cfg.min_area_frac},
        {"interest_frac", cfg.interest_frac},
        {"unique_max", cfg.unique_max},
        {"spatial_prob", cfg.spatial_prob},
        {"variants_per_object", cfg.variants_per_object},
        {"split_ratios",
         {{"train", cfg.split_ratios.train},
          {"val", cfg.split_ratios.val},
          {"test", cfg.split_ratios.test}}},
        {"llm",
         {{"kind", cfg.llm.backend.kind == llm::BackendKind::Http ? "http" : "mock"},
          {"base_url", cfg.llm.backend.base_url},
          {"api_key_env", cfg.llm.backend.api_key_env},
          {"requests_per_minute", cfg.llm.backend.requests_per_minute},
          {"max_retries", cfg.llm.backend.max_retries},
          {"timeout_s", cfg.llm.backend.timeout_s},
          {"model", cfg.llm.model},
          {"temperature_stage", cfg.llm.temperature_stage},
          {"temperature_rephrase", cfg.llm.temperature_rephrase},
          {"max_tokens", cfg.llm.max_tokens}}},
        {"sam",
         {{"kind", cfg.sam.kind},
          {"endpoint", cfg.sam.endpoint},
          {"points_per_side", cfg.sam.config.points_per_side},
          {"pred_iou_thresh", cfg.sam.config.pred_iou_thresh},
          {"stability_score_thresh", cfg.sam.config.stability_score_thresh},
          {"min_mask_region_area", cfg.sam.config.min_mask_region_area},
          {"merge_min_overlap_px", cfg.sam.merge_min_overlap_px},
          {"timeout_s", cfg.sam.timeout_s}}},
        {"workers", cfg.workers},
    };
}

RunConfig run_config_from_json(const Json& j) {
    RunConfig cfg;
    cfg.seed = j.value("seed", cfg.seed);
    cfg.chip_size = j.value("chip_size", cfg.chip_size);
    cfg.min_area_frac = j.value("min_area_frac", cfg.min_area_frac);
    cfg.interest_frac = j.value("interest_frac", cfg.interest_frac);
    cfg.unique_max = j.value("unique_max", cfg.unique_max);
    cfg.spatial_prob = j.value("spatial_prob", cfg.spatial_prob);
    cfg.variants_per_object = j.value("variants_per_object", cfg.variants_per_object);
    if (j.contains("split_ratios")) {
        const Json& r = j["split_ratios"];
        cfg.split_ratios.train = r.value("train", cfg.split_ratios.train);
        cfg.split_ratios.val = r.value("val", cfg.split_ratios.val);
        cfg.split_ratios.test = r.value("test", cfg.split_ratios.test);
    }
    if (j.contains("llm")) {
        const Json& l = j["llm"];
        cfg.llm.backend.kind =
            l.value("kind", std::string("mock")) == "http" ? llm::BackendKind::Http
                                                           : llm::BackendKind::Mock;
        cfg.llm.backend.base_url = l.value("base_url", cfg.llm.backend.base_url);
        cfg.llm.backend.api_key_env = l.value("api_key_env", cfg.llm.backend.api_key_env);
        cfg.llm.backend.requests_per_minute =
            l.value("requests_per_minute", cfg.llm.backend.requests_per_minute);
        cfg.llm.backend.max_retries = l.value("max_retries", cfg.llm.backend.max_retries);
        cfg.llm.backend.timeout_s = l.value("timeout_s", cfg.llm.backend.timeout_s);
        cfg.llm.model = l.value("model", cfg.llm.model);
        cfg.llm.temperature_stage = l.value("temperature_stage", cfg.llm.temperature_stage);
        cfg.llm.temperature_rephrase =
            l.value("temperature_rephrase", cfg.llm.temperature_rephrase);
        cfg.llm.max_tokens = l.value("max_tokens", cfg.llm.max_tokens);
    }
    if (j.contains("sam")) {
        const Json& s = j["sam"];
        cfg.sam.kind = s.value("kind", cfg.sam.kind);
        cfg.sam.endpoint = s.value("endpoint", cfg.sam.endpoint);
        cfg.sam.config.points_per_side =
            s.value("points_per_side", cfg.sam.config.points_per_side);
        cfg.sam.config.pred_iou_thresh =
            s.value("pred_iou_thresh", cfg.sam.config.pred_iou_thresh);
        cfg.sam.config.stability_score_thresh =
            s.value("stability_score_thresh", cfg.sam.config.stability_score_thresh);
        cfg.sam.config.min_mask_region_area =
            s.value("min_mask_region_area", cfg.sam.config.min_mask_region_area);
        cfg.sam.merge_min_overlap_px =
            s.value("merge_min_overlap_px", cfg.sam.merge_min_overlap_px);
        cfg.sam.timeout_s = s.value("timeout_s", cfg.sam.timeout_s);
    }
    cfg.workers = j.value("workers", cfg.workers);
    return cfg;
}

RunConfig load_run_config(const std::string& path) {
    return run_config_from_json(read_json(path));
}

std::string config_hash(const RunConfig& cfg) {
    // workers change scheduling, never results, so they stay out of the hash
    Json j = run_config_to_json(cfg);
    j.erase("workers");
    return fnv1a64_hex(j.dump());
}

// ---------------------------------------------------------------------------
// Record schemas

Json chip_to_json(const geodata::ImageChip& chip) {
    Json j = {
        {"chip_id", chip.chip_id},
        {"source_image_id", chip.source_image_id},
        {"origin", {chip.origin_x, chip.origin_y}},
        {"width", chip.width},
        {"height", chip.height},
    };
    if (!chip.pixel_uri.empty()) {
        j["pixel_uri"] = chip.pixel_uri;
    }
    return j;
}

geodata::ImageChip chip_from_json(const Json& j) {
    geodata::ImageChip chip;
    chip.chip_id = j.at("chip_id").get<std::string>();
    chip.source_image_id = j.at("source_image_id").get<std::string>();
    chip.origin_x = j.at("origin").at(0).get<int>();
    chip.origin_y = j.at("origin").at(1).get<int>();
    chip.width = j.at("width").get<int>();
    chip.height = j.at("height").get<int>();
    chip.pixel_uri = j.value("pixel_uri", std::string());
    return chip;
}

Json detection_to_json(const geodata::Detection& d, const std::string& quadrant) {
    return Json{
        {"detection_id", d.detection_id},
        {"chip_id", d.chip_id},
        {"class_name", d.class_name},
        {"bbox", {d.bbox.x, d.bbox.y, d.bbox.w, d.bbox.h}},
        {"quadrant", quadrant},
    };
}

geodata::Detection detection_from_json(const Json& j) {
    geodata::Detection d;
    d.detection_id = j.at("detection_id").get<std::string>();
    d.chip_id = j.at("chip_id").get<std::string>();
    d.class_name = j.at("class_name").get<std::string>();
    d.bbox.x = j.at("bbox").at(0).get<int>();
    d.bbox.y = j.at("bbox").at(1).get<int>();
    d.bbox.w = j.at("bbox").at(2).get<int>();
    d.bbox.h = j.at("bbox").at(3).get<int>();
    return d;
}

Json query_record_to_json(const prompting::QueryRecord& q) {
    return Json{
        {"query_id", q.query_id},
        {"detection_id", q.detection_id},
        {"chip_id", q.chip_id},
        {"text", q.text},
        {"variant", q.variant},
        {"includes_spatial", q.includes_spatial},
    };
}

prompting::QueryRecord query_record_from_json(const Json& j) {
    prompting::QueryRecord q;
    q.query_id = j.at("query_id").get<std::string>();
    q.detection_id = j.at("detection_id").get<std::string>();
    q.chip_id = j.at("chip_id").get<std::string>();
    q.text = j.at("text").get<std::string>();
    q.variant = j.at("variant").get<int>();
    q.includes_spatial = j.at("includes_spatial").get<bool>();
    return q;
}

Json mask_record_to_json(const MaskRecord& m) {
    return Json{
        {"detection_id", m.detection_id},
        {"width", m.width},
        {"height", m.height},
        {"rle_counts", m.rle_counts},
        {"degenerate", m.degenerate},
    };
}

MaskRecord mask_record_from_json(const Json& j) {
    MaskRecord m;
    m.detection_id = j.at("detection_id").get<std::string>();
    m.width = j.at("width").get<int>();
    m.height = j.at("height").get<int>();
    m.rle_counts = j.at("rle_counts").get<std::vector<std::int64_t>>();
    m.degenerate = j.value("degenerate", false);
    return m;
}

// ---------------------------------------------------------------------------
// Ingest / chip / stats / filter / split

IngestOutcome run_ingest(const std::string& input_path,
                         geodata::InputFormat format,
                         const std::string& out_path) {
    std::ifstream in(input_path, std::ios::binary);
    if (!in) {
        throw IoError("cannot open " + input_path);
    }
    geodata::IngestResult result = geodata::ingest_detections(in, format);

    std::vector<Json> lines;
    lines.reserve(result.detections.size());
    for (const geodata::RawDetection& d : result.detections) {
        lines.push_back(Json{
            {"image_id", d.source_image_id},
            {"class_name", d.class_name},
            {"bbox", {d.bbox.x, d.bbox.y, d.bbox.w, d.bbox.h}},
            {"source_index", d.source_index},
        });
    }
    write_jsonl(out_path, lines);
    write_header(out_path, Json{{"counts",
                                 {{"detections", result.detections.size()},
                                  {"errors", result.errors.size()},
                                  {"zero_area_dropped", result.zero_area_dropped},
                                  {"unknown_class", result.unknown_class_count}}}});

    IngestOutcome outcome;
    outcome.kept = result.detections.size();
    outcome.errors = result.errors;
    outcome.zero_area_dropped = result.zero_area_dropped;
    outcome.unknown_class_count = result.unknown_class_count;
    return outcome;
}

geodata::SourceSizeMap load_source_sizes(const std::string& path) {
    const Json j = read_json(path);
    if (!j.is_object()) {
        throw std::invalid_argument("sizes file must be a JSON object keyed by image id");
    }
    geodata::SourceSizeMap sizes;
    for (const auto& [image_id, value] : j.items()) {
        geodata::SourceSize s;
        if (value.is_array() && value.size() == 2) {
            s.width = value.at(0).get<int>();
            s.height = value.at(1).get<int>();
        } else if (value.is_object()) {
            s.width = value.value("width", 0);
            s.height = value.value("height", 0);
            s.pixel_uri = value.value("uri", std::string());
        } else {
            throw std::invalid_argument("size entry for '" + image_id +
                                        "' must be [w, h] or {width, height, uri}");
        }
        sizes[image_id] = s;
    }
    return sizes;
}

namespace {

std::vector<geodata::RawDetection> load_raw_detections(const std::string& path) {
    JsonlFile file = read_jsonl(path);
    if (!file.errors.empty()) {
        throw std::invalid_argument(path + ": line " + std::to_string(file.errors[0].line) +
                                    ": " + file.errors[0].message);
    }
    std::vector<geodata::RawDetection> out;
    out.reserve(file.records.size());
    std::size_t fallback_index = 0;
    for (const Json& j : file.records) {
        ++fallback_index;
        geodata::RawDetection d;
        d.source_image_id = j.at("image_id").get<std::string>();
        d.class_name = j.at("class_name").get<std::string>();
        d.bbox.x = j.at("bbox").at(0).get<int>();
        d.bbox.y = j.at("bbox").at(1).get<int>();
        d.bbox.w = j.at("bbox").at(2).get<int>();
        d.bbox.h = j.at("bbox").at(3).get<int>();
        d.source_index = j.value("source_index", fallback_index);
        out.push_back(std::move(d));
    }
    return out;
}

std::vector<geodata::ImageChip> load_chips(const std::string& path) {
    JsonlFile file = read_jsonl(path);
    std::vector<geodata::ImageChip> chips;
    chips.reserve(file.records.size());
    for (const Json& j : file.records) {
        chips.push_back(chip_from_json(j));
    }
    return chips;
}

std::vector<geodata::Detection> load_detections(const std::string& path) {
    JsonlFile file = read_jsonl(path);
    std::vector<geodata::Detection> dets;
    dets.reserve(file.records.size());
    for (const Json& j : file.records) {
        dets.push_back(detection_from_json(j));
    }
    return dets;
}

geodata::SplitAssignment load_splits(const std::string& path) {
    JsonlFile file = read_jsonl(path);
    geodata::SplitAssignment splits;
    for (const Json& j : file.records) {
        const auto split = geodata::split_from_string(j.at("split").get<std::string>());
        if (!split) {
            throw std::invalid_argument("unknown split value '" +
                                        j.at("split").get<std::string>() + "'");
        }
        splits.by_chip[j.at("chip_id").get<std::string>()] = *split;
    }
    return splits;
}

void write_detections(const std::string& path,
                      const std::vector<geodata::Detection>& detections,
                      const std::vector<geodata::ImageChip>& chips) {
    std::unordered_map<std::string, const geodata::ImageChip*> by_id;
    for (const geodata::ImageChip& c : chips) {
        by_id[c.chip_id] = &c;
    }
    std::vector<Json> lines;
    lines.reserve(detections.size());
    for (const geodata::Detection& d : detections) {
        auto it = by_id.find(d.chip_id);
        if (it == by_id.end()) {
            throw std::invalid_argument("detection '" + d.detection_id +
                                        "' references unknown chip '" + d.chip_id + "'");
        }
        lines.push_back(
            detection_to_json(d, geodata::to_string(geodata::quadrant_of(d, *it->second))));
    }
    write_jsonl(path, lines);
}

}  // namespace

ChipOutcome run_chip(const RunConfig& cfg,
                     const std::string& raw_path,
                     const std::string& sizes_path,
                     const std::string& chips_out,
                     const std::string& detections_out) {
    const std::vector<geodata::RawDetection> raw = load_raw_detections(raw_path);
    const geodata::SourceSizeMap sizes = load_source_sizes(sizes_path);

    geodata::ChipResult result = geodata::chip(raw, sizes, cfg.chip_size, cfg.min_area_frac);

    std::vector<Json> chip_lines;
    chip_lines.reserve(result.chips.size());
    for (const geodata::ImageChip& c : result.chips) {
        chip_lines.push_back(chip_to_json(c));
    }
    write_jsonl(chips_out, chip_lines);
    write_header(chips_out, Json{{"counts", {{"chips", result.chips.size()}}},
                                 {"chip_size", cfg.chip_size}});

    write_detections(detections_out, result.detections, result.chips);
    write_header(detections_out,
                 Json{{"counts",
                       {{"detections", result.detections.size()},
                        {"rejected", result.rejected.size()},
                        {"dropped_below_min_area", result.dropped_below_min_area}}},
                      {"min_area_frac", cfg.min_area_frac}});

    ChipOutcome outcome;
    outcome.chips = result.chips.size();
    outcome.detections = result.detections.size();
    outcome.rejected = result.rejected;
    outcome.dropped_below_min_area = result.dropped_below_min_area;
    return outcome;
}

void run_stats(const std::string& detections_path,
               const std::optional<std::string>& splits_path,
               const std::string& out_json,
               const std::string& out_txt) {
    const std::vector<geodata::Detection> dets = load_detections(detections_path);
    geodata::SplitAssignment splits;
    const bool with_splits = splits_path.has_value();
    if (with_splits) {
        splits = load_splits(*splits_path);
    }
    const geodata::ClassStats stats =
        geodata::compute_class_stats(dets, with_splits ? &splits : nullptr);
    write_json(out_json, class_stats_to_json(stats, with_splits));
    write_text_file(out_txt, render_stats_text(stats, with_splits));
}

std::size_t run_filter(const RunConfig& cfg,
                       const std::string& chips_path,
                       const std::string& detections_path,
                       const std::string& out_path) {
    const std::vector<geodata::ImageChip> chips = load_chips(chips_path);
    const std::vector<geodata::Detection> dets = load_detections(detections_path);
    const std::vector<geodata::Detection> kept =
        geodata::filter_candidates(chips, dets, cfg.interest_frac, cfg.unique_max);
    write_detections(out_path, kept, chips);
    write_header(out_path, Json{{"counts",
                                 {{"candidates", kept.size()}, {"from", dets.size()}}},
                                {"interest_frac", cfg.interest_frac},
                                {"unique_max", cfg.unique_max}});
    return kept.size();
}

void run_split(const RunConfig& cfg, const std::string& chips_path, const std::string& out_path) {
    const std::vector<geodata::ImageChip> chips = load_chips(chips_path);
    std::vector<std::string> ids;
    ids.reserve(chips.size());
    for (const geodata::ImageChip& c : chips) {
        ids.push_back(c.chip_id);
    }
    const geodata::SplitAssignment splits =
        geodata::make_splits(ids, cfg.seed, cfg.split_ratios);

    std::vector<Json> lines;
    lines.reserve(splits.by_chip.size());
    std::size_t train = 0;
    std::size_t val = 0;
    std::size_t test = 0;
    for (const auto& [chip_id, split] : splits.by_chip) {
        lines.push_back(Json{{"chip_id", chip_id}, {"split", geodata::to_string(split)}});
        switch (split) {
            case geodata::Split::Train: ++train; break;
            case geodata::Split::Val: ++val; break;
            case geodata::Split::Test: ++test; break;
        }
    }
    write_jsonl(out_path, lines);
    write_header(out_path, Json{{"counts", {{"train", train}, {"val", val}, {"test", test}}},
                                {"seed", cfg.seed}});
}

// ---------------------------------------------------------------------------
// Synthesis

namespace {

struct SynthRecord {
    bool ok = false;
    bool resumed = false;
    std::string failure_stage;
    std::string failure_reason;
    std::vector<prompting::QueryRecord> queries;
};

llm::ChatRequest make_request(const RunConfig& cfg,
                              const std::string& prompt,
                              double temperature,
                              const std::string& tag) {
    llm::ChatRequest req;
    req.model = cfg.llm.model;
    req.messages = {{"user", prompt}};
    req.temperature = temperature;
    req.max_tokens = cfg.llm.max_tokens;
    req.request_tag = tag;
    return req;
}

}  // namespace

SynthOutcome run_synth(const RunConfig& cfg,
                       const std::string& chips_path,
                       const std::string& detections_path,
                       const std::string& filtered_path,
                       const std::string& queries_out,
                       const std::string& journal_path,
                       const std::string& ledger_path,
                       const std::string& audit_path) {
    const std::vector<geodata::ImageChip> chips = load_chips(chips_path);
    const std::vector<geodata::Detection> all_dets = load_detections(detections_path);
    std::vector<geodata::Detection> targets = load_detections(filtered_path);
    std::sort(targets.begin(), targets.end(),
              [](const geodata::Detection& a, const geodata::Detection& b) {
                  return a.detection_id < b.detection_id;
              });

    std::unordered_map<std::string, std::vector<geodata::Detection>> peers_by_chip;
    for (const geodata::Detection& d : all_dets) {
        peers_by_chip[d.chip_id].push_back(d);
    }

    // Spatial-reference coin flips are a single sequential stream ordered by
    // sorted detection_id, so the assignment is independent of worker
    // scheduling and journal state.
    Rng rng(cfg.seed);
    std::vector<bool> coins(targets.size());
    for (std::size_t i = 0; i < targets.size(); ++i) {
        coins[i] = prompting::decide_include_bbox(rng, cfg.spatial_prob);
    }

    // Journal lines from previous runs let an interrupted synthesis resume.
    const std::string cfg_hash = config_hash(cfg);
    std::unordered_map<std::string, Json> journal;
    if (std::filesystem::exists(journal_path)) {
        for (const Json& j : read_jsonl(journal_path).records) {
            if (j.value("config_hash", std::string()) != cfg_hash) {
                continue;  // journal written under a different configuration
            }
            if (j.value("status", std::string()) == "ok") {
                journal[j.at("detection_id").get<std::string>()] = j;
            }
        }
    }

    std::ofstream journal_out(journal_path, std::ios::binary | std::ios::app);
    if (!journal_out) {
        throw IoError("cannot write " + journal_path);
    }
    std::ofstream audit_out(audit_path, std::ios::binary | std::ios::app);
    if (!audit_out) {
        throw IoError("cannot write " + audit_path);
    }
    std::mutex journal_mu;
    std::mutex audit_mu;

    llm::Client client(cfg.llm.backend);
    client.set_audit_sink([&](const std::string& line) {
        std::lock_guard<std::mutex> lock(audit_mu);
        audit_out << line << '\n';
        audit_out.flush();
    });

    std::vector<SynthRecord> results(targets.size());

    parallel_for(targets.size(), cfg.workers, [&](std::size_t i) {
        const geodata::Detection& d = targets[i];
        SynthRecord& rec = results[i];

        auto journaled = journal.find(d.detection_id);
        if (journaled != journal.end()) {
            rec.ok = true;
            rec.resumed = true;
            for (const Json& qj : journaled->second.at("queries")) {
                rec.queries.push_back(query_record_from_json(qj));
                rec.queries.back().characteristics =
                    journaled->second.value("characteristics", std::string());
            }
            return;
        }

        auto peers_it = peers_by_chip.find(d.chip_id);
        if (peers_it == peers_by_chip.end()) {
            rec.failure_stage = "peers";
            rec.failure_reason = "no detections recorded for chip " + d.chip_id;
            return;
        }
        const bool include_bbox = coins[i];

        try {
            const std::string p1 = prompting::render_stage1(d, peers_it->second);
            const llm::ChatResponse r1 = client.complete(make_request(
                cfg, p1, cfg.llm.temperature_stage, d.detection_id + ":stage1"));
            const std::string characteristics = trim(r1.content);
            if (characteristics.empty()) {
                rec.failure_stage = "stage1";
                rec.failure_reason = "empty characteristics";
                return;
            }

            const std::string p2 =
                prompting::render_stage2(d, peers_it->second, characteristics, include_bbox);
            const llm::ChatResponse r2 = client.complete(make_request(
                cfg, p2, cfg.llm.temperature_stage, d.detection_id + ":stage2"));
            const std::string principal = prompting::parse_query_response(r2.content);

            std::vector<prompting::QueryRecord> queries;
            prompting::QueryRecord q0;
            q0.query_id = d.detection_id + "_q0";
            q0.detection_id = d.detection_id;
            q0.chip_id = d.chip_id;
            q0.text = principal;
            q0.variant = 0;
            q0.includes_spatial = include_bbox;
            q0.characteristics = characteristics;
            queries.push_back(q0);

            for (int v = 1; v < cfg.variants_per_object; ++v) {
                const std::string pv = prompting::render_rephrase(principal, v);
                const llm::ChatResponse rv = client.complete(make_request(
                    cfg, pv, cfg.llm.temperature_rephrase,
                    d.detection_id + ":rephrase" + std::to_string(v)));
                prompting::QueryRecord q = q0;
                q.query_id = d.detection_id + "_q" + std::to_string(v);
                q.text = prompting::parse_query_response(rv.content);
                q.variant = v;
                queries.push_back(q);
            }

            rec.ok = true;
            rec.queries = std::move(queries);

            Json jline = {
                {"detection_id", d.detection_id},
                {"status", "ok"},
                {"config_hash", cfg_hash},
                {"includes_spatial", include_bbox},
                {"characteristics", characteristics},
            };
            jline["queries"] = Json::array();
            for (const prompting::QueryRecord& q : rec.queries) {
                jline["queries"].push_back(query_record_to_json(q));
            }
            std::lock_guard<std::mutex> lock(journal_mu);
            journal_out << jline.dump() << '\n';
            journal_out.flush();
        } catch (const llm::GatewayError& e) {
            rec.failure_stage = "gateway";
            rec.failure_reason = std::string(llm::to_string(e.code)) + ": " + e.what();
        } catch (const prompting::MalformedResponse& e) {
            rec.failure_stage = "parse";
            rec.failure_reason = e.what();
        } catch (const prompting::TemplateError& e) {
            rec.failure_stage = "render";
            rec.failure_reason = e.what();
        } catch (const std::invalid_argument& e) {
            rec.failure_stage = "render";
            rec.failure_reason = e.what();
        }
    });

    std::vector<Json> query_lines;
    std::vector<Json> ledger_lines;
    SynthOutcome outcome;
    outcome.detections = targets.size();
    outcome.ledger_path = ledger_path;
    for (std::size_t i = 0; i < targets.size(); ++i) {
        const SynthRecord& rec = results[i];
        if (rec.ok) {
            for (const prompting::QueryRecord& q : rec.queries) {
                query_lines.push_back(query_record_to_json(q));
            }
            outcome.records += rec.queries.size();
            if (rec.resumed) {
                ++outcome.resumed;
            }
        } else {
            ++outcome.failed;
            ledger_lines.push_back(Json{
                {"detection_id", targets[i].detection_id},
                {"stage", rec.failure_stage},
                {"reason", rec.failure_reason},
            });
        }
    }
    write_jsonl(queries_out, query_lines);
    write_header(queries_out, Json{{"counts",
                                    {{"query_records", query_lines.size()},
                                     {"detections", targets.size()},
                                     {"failed", outcome.failed}}},
                                   {"seed", cfg.seed},
                                   {"config_hash", cfg_hash},
                                   {"llm_backend",
                                    cfg.llm.backend.kind == llm::BackendKind::Http ? "http"
                                                                                   : "mock"}});
    write_jsonl(ledger_path, ledger_lines);
    return outcome;
}

// ---------------------------------------------------------------------------
// Masks

MasksOutcome run_masks(const RunConfig& cfg,
                       const std::string& chips_path,
                       const std::string& filtered_path,
                       const std::string& masks_out,
                       maskgen::SegmentationBackend* backend_override) {
    const std::vector<geodata::ImageChip> chips = load_chips(chips_path);
    std::vector<geodata::Detection> targets = load_detections(filtered_path);
    std::sort(targets.begin(), targets.end(),
              [](const geodata::Detection& a, const geodata::Detection& b) {
                  return a.detection_id < b.detection_id;
              });

    std::unordered_map<std::string, const geodata::ImageChip*> chip_by_id;
    for (const geodata::ImageChip& c : chips) {
        chip_by_id[c.chip_id] = &c;
    }

    maskgen::RectangleStubBackend stub;
    std::unique_ptr<maskgen::HttpSegmentationBackend> http;
    maskgen::SegmentationBackend* backend = backend_override;
    if (backend == nullptr) {
        if (cfg.sam.kind == "rect-stub") {
            backend = &stub;
        } else if (cfg.sam.kind == "http") {
            http = std::make_unique<maskgen::HttpSegmentationBackend>(cfg.sam.endpoint,
                                                                      cfg.sam.timeout_s);
            backend = http.get();
        } else {
            throw std::invalid_argument("unknown segmentation backend kind '" + cfg.sam.kind +
                                        "'");
        }
    }

    std::vector<MaskRecord> records(targets.size());
    parallel_for(targets.size(), cfg.workers, [&](std::size_t i) {
        const geodata::Detection& d = targets[i];
        auto it = chip_by_id.find(d.chip_id);
        if (it == chip_by_id.end()) {
            throw std::invalid_argument("detection '" + d.detection_id +
                                        "' references unknown chip '" + d.chip_id + "'");
        }
        const geodata::ImageChip& chip = *it->second;
        maskgen::ChipRef ref{chip.chip_id, chip.width, chip.height, chip.pixel_uri};

        const std::vector<maskgen::MaskPart> parts =
            maskgen::segment_bbox(*backend, ref, d.bbox, cfg.sam.config);
        const maskgen::MergeResult merged =
            maskgen::merge_parts(parts, d.bbox, cfg.sam.merge_min_overlap_px);

        MaskRecord rec;
        rec.detection_id = d.detection_id;
        rec.width = chip.width;
        rec.height = chip.height;
        rec.degenerate = merged.degenerate;
        if (merged.degenerate || merged.mask.data.empty()) {
            maskgen::BinaryMask empty(chip.width, chip.height);
            rec.rle_counts = maskgen::rle_encode(empty);
        } else {
            rec.rle_counts = maskgen::rle_encode(merged.mask);
        }
        records[i] = std::move(rec);
    });

    std::vector<Json> lines;
    lines.reserve(records.size());
    MasksOutcome outcome;
    outcome.masks = records.size();
    for (const MaskRecord& rec : records) {
        if (rec.degenerate) {
            ++outcome.degenerate;
        }
        lines.push_back(mask_record_to_json(rec));
    }
    write_jsonl(masks_out, lines);
    write_header(masks_out, Json{{"counts",
                                  {{"masks", outcome.masks},
                                   {"degenerate", outcome.degenerate}}},
                                 {"sam_backend", backend->name()},
                                 {"sam_config",
                                  {{"points_per_side", cfg.sam.config.points_per_side},
                                   {"pred_iou_thresh", cfg.sam.config.pred_iou_thresh},
                                   {"stability_score_thresh",
                                    cfg.sam.config.stability_score_thresh},
                                   {"min_mask_region_area", cfg.sam.config.min_mask_region_area},
                                   {"merge_min_overlap_px", cfg.sam.merge_min_overlap_px}}}});
    return outcome;
}

// ---------------------------------------------------------------------------
// Package

PackageOutcome run_package(const RunConfig& cfg,
                           const std::string& filtered_path,
                           const std::string& queries_path,
                           const std::string& masks_path,
                           const std::string& splits_path,
                           const std::string& manifest_out,
                           const std::string& header_out,
                           const std::string& class_table_out,
                           const std::string& ledger_path) {
    std::vector<geodata::Detection> targets = load_detections(filtered_path);
    std::sort(targets.begin(), targets.end(),
              [](const geodata::Detection& a, const geodata::Detection& b) {
                  return a.detection_id < b.detection_id;
              });

    // quadrants were materialized by the chip step
    std::unordered_map<std::string, std::string> quadrant_by_det;
    for (const Json& j : read_jsonl(filtered_path).records) {
        quadrant_by_det[j.at("detection_id").get<std::string>()] =
            j.value("quadrant", std::string());
    }

    std::unordered_map<std::string, std::vector<prompting::QueryRecord>> queries_by_det;
    for (const Json& j : read_jsonl(queries_path).records) {
        prompting::QueryRecord q = query_record_from_json(j);
        queries_by_det[q.detection_id].push_back(std::move(q));
    }

    std::unordered_map<std::string, MaskRecord> mask_by_det;
    for (const Json& j : read_jsonl(masks_path).records) {
        MaskRecord m = mask_record_from_json(j);
        mask_by_det[m.detection_id] = std::move(m);
    }

    const geodata::SplitAssignment splits = load_splits(splits_path);

    std::vector<Json> manifest;
    std::vector<Json> ledger;
    std::size_t train = 0;
    std::size_t val = 0;
    std::size_t test = 0;
    std::set<std::string> chips_seen;
    std::vector<geodata::Detection> packaged;

    for (const geodata::Detection& d : targets) {
        auto drop = [&](const std::string& reason) {
            ledger.push_back(Json{{"detection_id", d.detection_id}, {"reason", reason}});
        };

        auto qit = queries_by_det.find(d.detection_id);
        if (qit == queries_by_det.end()) {
            drop("no queries");
            continue;
        }
        if (static_cast<int>(qit->second.size()) != cfg.variants_per_object) {
            drop("expected " + std::to_string(cfg.variants_per_object) + " queries, found " +
                 std::to_string(qit->second.size()));
            continue;
        }
        auto mit = mask_by_det.find(d.detection_id);
        if (mit == mask_by_det.end()) {
            drop("no mask");
            continue;
        }
        if (mit->second.degenerate) {
            drop("degenerate mask");
            continue;
        }
        auto sit = splits.by_chip.find(d.chip_id);
        if (sit == splits.by_chip.end()) {
            drop("no split for chip " + d.chip_id);
            continue;
        }

        std::sort(qit->second.begin(), qit->second.end(),
                  [](const prompting::QueryRecord& a, const prompting::QueryRecord& b) {
                      return a.variant < b.variant;
                  });

        Json rec = {
            {"detection_id", d.detection_id},
            {"chip_id", d.chip_id},
            {"class_name", d.class_name},
            {"bbox", {d.bbox.x, d.bbox.y, d.bbox.w, d.bbox.h}},
            {"quadrant", quadrant_by_det[d.detection_id]},
            {"split", geodata::to_string(sit->second)},
            {"mask",
             {{"width", mit->second.width},
              {"height", mit->second.height},
              {"rle_counts", mit->second.rle_counts}}},
        };
        rec["queries"] = Json::array();
        for (const prompting::QueryRecord& q : qit->second) {
            rec["queries"].push_back(query_record_to_json(q));
        }
        manifest.push_back(std::move(rec));
        packaged.push_back(d);
        chips_seen.insert(d.chip_id);
        switch (sit->second) {
            case geodata::Split::Train: ++train; break;
            case geodata::Split::Val: ++val; break;
            case geodata::Split::Test: ++test; break;
        }
    }

    write_jsonl(ledger_path, ledger);
    if (manifest.empty()) {
        throw std::invalid_argument("package join produced zero records (see " + ledger_path +
                                    ")");
    }
    write_jsonl(manifest_out, manifest);

    Json header = {
        {"version", kVersion},
        {"seed", cfg.seed},
        {"config_hash", config_hash(cfg)},
        {"llm_backend", cfg.llm.backend.kind == llm::BackendKind::Http ? "http" : "mock"},
        {"sam_backend", cfg.sam.kind},
        {"counts",
         {{"records", manifest.size()},
          {"queries", manifest.size() * static_cast<std::size_t>(cfg.variants_per_object)},
          {"chips", chips_seen.size()},
          {"dropped", ledger.size()},
          {"by_split", {{"train", train}, {"val", val}, {"test", test}}}}},
    };
    write_json(header_out, header);

    const geodata::ClassStats stats = geodata::compute_class_stats(packaged, &splits);
    write_text_file(class_table_out, render_class_table(stats));

    PackageOutcome outcome;
    outcome.records = manifest.size();
    outcome.dropped = ledger.size();
    outcome.ledger_path = ledger_path;
    return outcome;
}

// ---------------------------------------------------------------------------
// Evaluation commands

namespace {

std::unordered_map<std::string, MaskRecord> load_mask_records(const std::string& path) {
    std::unordered_map<std::string, MaskRecord> out;
    for (const Json& j : read_jsonl(path).records) {
        MaskRecord m = mask_record_from_json(j);
        out[m.detection_id] = std::move(m);
    }
    return out;
}

}  // namespace

SegEvalOutcome run_eval_seg(const std::string& pred_path,
                            const std::string& gt_path,
                            const std::string& out_json,
                            const std::string& out_txt,
                            const std::string& ledger_path) {
    const auto preds = load_mask_records(pred_path);
    const auto gts = load_mask_records(gt_path);

    std::vector<std::string> matched_ids;
    std::vector<Json> ledger;
    for (const auto& [id, gt] : gts) {
        if (preds.count(id) > 0) {
            matched_ids.push_back(id);
        } else {
            ledger.push_back(Json{{"id", id}, {"reason", "missing prediction"}});
        }
    }
    for (const auto& [id, pred] : preds) {
        if (gts.count(id) == 0) {
            ledger.push_back(Json{{"id", id}, {"reason", "missing ground truth"}});
        }
    }
    std::sort(matched_ids.begin(), matched_ids.end());

    std::vector<metrics::SegSample> samples;
    samples.reserve(matched_ids.size());
    for (const std::string& id : matched_ids) {
        const MaskRecord& p = preds.at(id);
        const MaskRecord& g = gts.at(id);
        if (p.width != g.width || p.height != g.height) {
            ledger.push_back(Json{{"id", id}, {"reason", "dimension mismatch"}});
            continue;
        }
        metrics::SegSample s;
        s.id = id;
        s.pred = maskgen::rle_decode(p.rle_counts, p.width, p.height);
        s.gt = maskgen::rle_decode(g.rle_counts, g.width, g.height);
        samples.push_back(std::move(s));
    }
    write_jsonl(ledger_path, ledger);

    if (samples.empty()) {
        throw std::invalid_argument("no ids matched between " + pred_path + " and " + gt_path);
    }

    SegEvalOutcome outcome;
    outcome.report = metrics::evaluate_segmentation(samples);
    outcome.matched = samples.size();
    outcome.unmatched = ledger.size();
    write_json(out_json, seg_report_to_json(outcome.report));
    write_text_file(out_txt, render_seg_report_text(outcome.report));
    return outcome;
}

CaptionEvalOutcome run_eval_caption(const std::string& pred_path,
                                    const std::string& gt_path,
                                    const std::string& out_json,
                                    const std::string& out_txt,
                                    const std::string& ledger_path) {
    std::unordered_map<std::string, std::string> candidates;
    for (const Json& j : read_jsonl(pred_path).records) {
        candidates[j.at("id").get<std::string>()] =
            j.contains("candidate") ? j.at("candidate").get<std::string>()
                                    : j.at("predicted").get<std::string>();
    }
    std::unordered_map<std::string, std::vector<std::string>> references;
    for (const Json& j : read_jsonl(gt_path).records) {
        references[j.at("id").get<std::string>()] =
            j.at("references").get<std::vector<std::string>>();
    }

    std::vector<std::string> ids;
    std::vector<Json> ledger;
    for (const auto& [id, refs] : references) {
        if (candidates.count(id) > 0) {
            ids.push_back(id);
        } else {
            ledger.push_back(Json{{"id", id}, {"reason", "missing candidate"}});
        }
    }
    for (const auto& [id, cand] : candidates) {
        if (references.count(id) == 0) {
            ledger.push_back(Json{{"id", id}, {"reason", "missing references"}});
        }
    }
    std::sort(ids.begin(), ids.end());
    write_jsonl(ledger_path, ledger);

    if (ids.empty()) {
        throw std::invalid_argument("no ids matched between " + pred_path + " and " + gt_path);
    }

    metrics::CaptionBatch batch;
    batch.reserve(ids.size());
    for (const std::string& id : ids) {
        metrics::CaptionItem item;
        item.candidate = metrics::tokenize(candidates.at(id));
        for (const std::string& ref : references.at(id)) {
            item.references.push_back(metrics::tokenize(ref));
        }
        batch.push_back(std::move(item));
    }

    CaptionEvalOutcome outcome;
    outcome.bleu = metrics::bleu(batch).scores;
    outcome.rouge_l = metrics::rouge_l(batch);
    outcome.cider_x100 = metrics::cider_d(batch) * 100.0;
    outcome.matched = ids.size();
    outcome.unmatched = ledger.size();

    Json report = {
        {"bleu_1", outcome.bleu[0]},
        {"bleu_2", outcome.bleu[1]},
        {"bleu_3", outcome.bleu[2]},
        {"bleu_4", outcome.bleu[3]},
        {"rouge_l", outcome.rouge_l},
        {"cider", outcome.cider_x100},
        {"meteor", nullptr},
        {"spice", nullptr},
        {"items", outcome.matched},
    };
    write_json(out_json, report);
    write_text_file(out_txt, render_caption_report_text(outcome));
    return outcome;
}

VqaEvalOutcome run_eval_vqa(const std::string& pred_path,
                            const std::string& gt_path,
                            const std::string& out_json,
                            const std::string& out_txt,
                            const std::string& ledger_path) {
    std::unordered_map<std::string, std::string> predicted;
    for (const Json& j : read_jsonl(pred_path).records) {
        predicted[j.at("id").get<std::string>()] = j.at("predicted").get<std::string>();
    }

    std::vector<metrics::VqaItem> items;
    std::vector<Json> ledger;
    std::size_t gold_count = 0;
    std::set<std::string> matched_ids;
    for (const Json& j : read_jsonl(gt_path).records) {
        ++gold_count;
        const std::string id = j.at("id").get<std::string>();
        auto pit = predicted.find(id);
        if (pit == predicted.end()) {
            ledger.push_back(Json{{"id", id}, {"reason", "missing prediction"}});
            continue;
        }
        const auto category = metrics::vqa_category_from_string(j.at("category").get<std::string>());
        if (!category) {
            ledger.push_back(Json{{"id", id},
                                  {"reason", "unknown category '" +
                                                 j.at("category").get<std::string>() + "'"}});
            continue;
        }
        metrics::VqaItem item;
        item.category = *category;
        item.predicted = pit->second;
        item.gold = j.at("gold").get<std::string>();
        items.push_back(std::move(item));
        matched_ids.insert(id);
    }
    for (const auto& [id, p] : predicted) {
        if (matched_ids.count(id) == 0) {
            bool already = false;
            for (const Json& l : ledger) {
                if (l.at("id").get<std::string>() == id) {
                    already = true;
                    break;
                }
            }
            if (!already) {
                ledger.push_back(Json{{"id", id}, {"reason", "missing gold"}});
            }
        }
    }
    write_jsonl(ledger_path, ledger);

    if (items.empty()) {
        throw std::invalid_argument("no ids matched between " + pred_path + " and " + gt_path);
    }

    VqaEvalOutcome outcome;
    outcome.report = metrics::vqa_accuracy(items);
    outcome.matched = items.size();
    outcome.unmatched = ledger.size();
    write_json(out_json, vqa_report_to_json(outcome.report));
    write_text_file(out_txt, render_vqa_report_text(outcome.report));
    return outcome;
}

std::size_t run_sample_for_review(const std::string& manifest_path,
                                  std::size_t n,
                                  std::uint64_t seed,
                                  const std::string& out_path) {
    const JsonlFile manifest = read_jsonl(manifest_path);
    std::vector<std::size_t> indices(manifest.records.size());
    for (std::size_t i = 0; i < indices.size(); ++i) {
        indices[i] = i;
    }
    Rng rng(seed);
    deterministic_shuffle(indices, rng);
    const std::size_t take = std::min(n, indices.size());
    std::vector<Json> sample;
    sample.reserve(take);
    for (std::size_t i = 0; i < take; ++i) {
        sample.push_back(manifest.records[indices[i]]);
    }
    write_jsonl(out_path, sample);
    return take;
}

}  // namespace rsseg::pipeline
