#include <algorithm>
#include <cstdio>
#include <sstream>

#include "rsseg/pipeline.hpp"

namespace rsseg::pipeline {

namespace {

std::string fixed(double v, int precision = 4) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.*f", precision, v);
    return buf;
}

void pad_to(std::string& s, std::size_t width) {
    while (s.size() < width) {
        s.push_back(' ');
    }
}

// Left-aligned first column, right-aligned numeric columns.
std::string render_table(const std::vector<std::vector<std::string>>& rows) {
    if (rows.empty()) {
        return "";
    }
    std::vector<std::size_t> widths(rows[0].size(), 0);
    for (const auto& row : rows) {
        for (std::size_t c = 0; c < row.size(); ++c) {
            widths[c] = std::max(widths[c], row[c].size());
        }
    }
    std::ostringstream out;
    for (const auto& row : rows) {
        for (std::size_t c = 0; c < row.size(); ++c) {
            std::string cell = row[c];
            if (c == 0) {
                pad_to(cell, widths[c]);
                out << cell;
            } else {
                out << "  ";
                std::string padding(widths[c] - cell.size(), ' ');
                out << padding << cell;
            }
        }
        out << '\n';
    }
    return out.str();
}

}  // namespace

std::string render_stats_text(const geodata::ClassStats& stats, bool with_splits) {
    std::vector<std::vector<std::string>> rows;
    if (with_splits) {
        rows.push_back({"class", "total", "freq", "train", "val", "test"});
    } else {
        rows.push_back({"class", "total", "freq"});
    }
    for (const auto& [name, e] : stats.classes) {
        std::vector<std::string> row = {name, std::to_string(e.total), fixed(e.frequency)};
        if (with_splits) {
            row.push_back(std::to_string(e.train));
            row.push_back(std::to_string(e.val));
            row.push_back(std::to_string(e.test));
        }
        rows.push_back(std::move(row));
    }
    std::vector<std::string> total_row = {"TOTAL", std::to_string(stats.total_detections), ""};
    if (with_splits) {
        total_row.push_back(std::to_string(stats.train_total));
        total_row.push_back(std::to_string(stats.val_total));
        total_row.push_back(std::to_string(stats.test_total));
    }
    rows.push_back(std::move(total_row));
    return render_table(rows);
}

std::string render_class_table(const geodata::ClassStats& stats) {
    std::vector<std::vector<std::string>> rows;
    rows.push_back({"Object Category", "Train", "Val", "Test", "Total"});
    for (const auto& [name, e] : stats.classes) {
        rows.push_back({name, std::to_string(e.train), std::to_string(e.val),
                        std::to_string(e.test), std::to_string(e.total)});
    }
    rows.push_back({"Total", std::to_string(stats.train_total), std::to_string(stats.val_total),
                    std::to_string(stats.test_total), std::to_string(stats.total_detections)});
    return render_table(rows);
}

Json class_stats_to_json(const geodata::ClassStats& stats, bool with_splits) {
    Json classes = Json::object();
    for (const auto& [name, e] : stats.classes) {
        Json entry = {{"total", e.total}, {"frequency", e.frequency}};
        if (with_splits) {
            entry["train"] = e.train;
            entry["val"] = e.val;
            entry["test"] = e.test;
        }
        classes[name] = entry;
    }
    Json out = {{"classes", classes}, {"total_detections", stats.total_detections}};
    if (with_splits) {
        out["split_totals"] = {
            {"train", stats.train_total}, {"val", stats.val_total}, {"test", stats.test_total}};
    }
    return out;
}

namespace {

Json bucket_to_json(const metrics::BucketReport& b) {
    return Json{
        {"giou", b.giou}, {"ciou", b.ciou}, {"giou_std", b.giou_std}, {"count", b.count}};
}

}  // namespace

Json seg_report_to_json(const metrics::SegReport& report) {
    Json out = {
        {"all", bucket_to_json(report.all)},
        {"small", report.small ? bucket_to_json(*report.small) : Json(nullptr)},
        {"large", report.large ? bucket_to_json(*report.large) : Json(nullptr)},
        {"small_threshold", report.small_threshold},
    };
    return out;
}

std::string render_seg_report_text(const metrics::SegReport& report) {
    std::vector<std::vector<std::string>> rows;
    rows.push_back({"bucket", "count", "gIoU", "cIoU", "gIoU_std"});
    auto add = [&rows](const std::string& name, const metrics::BucketReport& b) {
        rows.push_back({name, std::to_string(b.count), fixed(b.giou), fixed(b.ciou),
                        fixed(b.giou_std)});
    };
    add("All", report.all);
    if (report.small) {
        add("Small", *report.small);
    } else {
        rows.push_back({"Small", "-", "-", "-", "-"});
    }
    if (report.large) {
        add("Large", *report.large);
    } else {
        rows.push_back({"Large", "-", "-", "-", "-"});
    }
    return render_table(rows);
}

std::string render_caption_report_text(const CaptionEvalOutcome& outcome) {
    std::vector<std::vector<std::string>> rows;
    rows.push_back({"metric", "score"});
    rows.push_back({"BLEU-1", fixed(outcome.bleu[0])});
    rows.push_back({"BLEU-2", fixed(outcome.bleu[1])});
    rows.push_back({"BLEU-3", fixed(outcome.bleu[2])});
    rows.push_back({"BLEU-4", fixed(outcome.bleu[3])});
    rows.push_back({"ROUGE-L", fixed(outcome.rouge_l)});
    rows.push_back({"CIDEr", fixed(outcome.cider_x100, 2)});
    rows.push_back({"METEOR", "n/a"});
    rows.push_back({"SPICE", "n/a"});
    rows.push_back({"items", std::to_string(outcome.matched)});
    return render_table(rows);
}

Json vqa_report_to_json(const metrics::VqaReport& report) {
    Json categories = Json::object();
    for (const auto& [cat, r] : report.categories) {
        categories[metrics::to_string(cat)] = {
            {"total", r.total}, {"correct", r.correct}, {"accuracy", r.accuracy}};
    }
    return Json{
        {"categories", categories},
        {"overall",
         {{"total", report.overall.total},
          {"correct", report.overall.correct},
          {"accuracy", report.overall.accuracy}}},
    };
}

std::string render_vqa_report_text(const metrics::VqaReport& report) {
    std::vector<std::vector<std::string>> rows;
    rows.push_back({"category", "correct", "total", "accuracy"});
    const metrics::VqaCategory order[] = {
        metrics::VqaCategory::Count, metrics::VqaCategory::Presence,
        metrics::VqaCategory::Comparison, metrics::VqaCategory::Area};
    for (metrics::VqaCategory cat : order) {
        auto it = report.categories.find(cat);
        if (it == report.categories.end()) {
            rows.push_back({metrics::to_string(cat), "-", "-", "-"});
        } else {
            rows.push_back({metrics::to_string(cat), std::to_string(it->second.correct),
                            std::to_string(it->second.total),
                            fixed(it->second.accuracy * 100.0, 2) + "%"});
        }
    }
    rows.push_back({"overall", std::to_string(report.overall.correct),
                    std::to_string(report.overall.total),
                    fixed(report.overall.accuracy * 100.0, 2) + "%"});
    return render_table(rows);
}

}  // namespace rsseg::pipeline
