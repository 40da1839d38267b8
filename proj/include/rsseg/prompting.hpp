#pragma once

#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "rsseg/geodata.hpp"
#include "rsseg/rng.hpp"

namespace rsseg::prompting {

enum class Stage { Stage1, Stage2, Rephrase };

// Template bodies as text assets. Slots use {name}; conditional fragments use
// the inline { 'TEXT' if include_bbox else 'ALT'} form and are resolved at
// render time.
const std::string& template_body(Stage stage);

struct TemplateError : std::runtime_error {
    explicit TemplateError(const std::string& msg) : std::runtime_error(msg) {}
};

struct MalformedResponse : std::runtime_error {
    std::string raw;
    MalformedResponse(const std::string& msg, std::string raw_text)
        : std::runtime_error(msg), raw(std::move(raw_text)) {}
};

using SlotMap = std::map<std::string, std::string>;

// Substitutes every {slot} and resolves conditionals. Unknown slots and
// conditionals without an include_bbox value raise TemplateError.
std::string render_template(const std::string& body,
                            const SlotMap& slots,
                            std::optional<bool> include_bbox = std::nullopt);

// "Other Vehicle" -> "vehicle": drop the token 'Other' and keep the next word
// lowercased. Names without an 'Other' token pass through unchanged.
std::string strip_other(const std::string& class_name);

// Lexicographically sorted per-class counts, e.g. "3 Building, 1 Bus".
std::string classes_list_str(const std::vector<geodata::Detection>& peers);

// "[x, y, w, h]" with integer pixels.
std::string bbox_str(const geodata::BBox& bbox);

std::string render_stage1(const geodata::Detection& d,
                          const std::vector<geodata::Detection>& peers);

std::string render_stage2(const geodata::Detection& d,
                          const std::vector<geodata::Detection>& peers,
                          const std::string& characteristics,
                          bool include_bbox);

std::string render_rephrase(const std::string& principal, int variant_tag);

// One draw from the run's PRNG stream; true = the query should carry an
// explicit spatial reference.
bool decide_include_bbox(Rng& rng, double prob = 0.5);

// Extracts the "query" value from the first well-formed JSON object in raw,
// tolerating surrounding prose and code fences. Throws MalformedResponse when
// no object carries a non-empty query string.
std::string parse_query_response(const std::string& raw);

struct QueryRecord {
    std::string query_id;
    std::string detection_id;
    std::string chip_id;
    std::string text;
    int variant = 0;  // 0 = principal, 1-2 = rephrasings
    bool includes_spatial = false;
    std::string characteristics;  // stage-1 answer, not serialized
};

}  // namespace rsseg::prompting
