#include "rsseg/prompting.hpp"

#include <algorithm>
#include <cctype>

#include <json.hpp>

namespace rsseg::prompting {

namespace {

using Json = nlohmann::json;

bool is_slot_name(const std::string& s) {
    if (s.empty()) {
        return false;
    }
    if (!(std::isalpha(static_cast<unsigned char>(s[0])) || s[0] == '_')) {
        return false;
    }
    return std::all_of(s.begin(), s.end(), [](char c) {
        return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '.';
    });
}

// Parses the { 'TEXT' if <cond> else 'ALT'} form. Returns false when the
// brace content is not a conditional.
bool parse_conditional(const std::string& inner,
                       std::string& true_text,
                       std::string& false_text,
                       bool& negated) {
    std::size_t i = 0;
    while (i < inner.size() && inner[i] == ' ') {
        ++i;
    }
    if (i == 0 || i >= inner.size() || inner[i] != '\'') {
        return false;
    }
    const std::size_t t_begin = ++i;
    const std::size_t t_end = inner.find('\'', t_begin);
    if (t_end == std::string::npos) {
        return false;
    }
    true_text = inner.substr(t_begin, t_end - t_begin);

    std::size_t pos = t_end + 1;
    const std::string if_kw = " if ";
    if (inner.compare(pos, if_kw.size(), if_kw) != 0) {
        return false;
    }
    pos += if_kw.size();
    const std::string else_kw = " else ";
    const std::size_t else_pos = inner.find(else_kw, pos);
    if (else_pos == std::string::npos) {
        return false;
    }
    std::string cond = inner.substr(pos, else_pos - pos);
    if (cond == "include_bbox") {
        negated = false;
    } else if (cond == "not include_bbox") {
        negated = true;
    } else {
        return false;
    }

    pos = else_pos + else_kw.size();
    if (pos >= inner.size() || inner[pos] != '\'') {
        return false;
    }
    const std::size_t f_begin = pos + 1;
    const std::size_t f_end = inner.find('\'', f_begin);
    if (f_end == std::string::npos || f_end + 1 != inner.size()) {
        return false;
    }
    false_text = inner.substr(f_begin, f_end - f_begin);
    return true;
}

}  // namespace

std::string render_template(const std::string& body,
                            const SlotMap& slots,
                            std::optional<bool> include_bbox) {
    std::string out;
    out.reserve(body.size());
    std::size_t i = 0;
    while (i < body.size()) {
        if (body[i] != '{') {
            out.push_back(body[i]);
            ++i;
            continue;
        }
        // find the matching close brace
        int depth = 0;
        std::size_t j = i;
        for (; j < body.size(); ++j) {
            if (body[j] == '{') {
                ++depth;
            } else if (body[j] == '}') {
                --depth;
                if (depth == 0) {
                    break;
                }
            }
        }
        if (depth != 0) {
            throw TemplateError("unbalanced braces in template");
        }
        const std::string inner = body.substr(i + 1, j - i - 1);

        std::string true_text;
        std::string false_text;
        bool negated = false;
        if (parse_conditional(inner, true_text, false_text, negated)) {
            if (!include_bbox.has_value()) {
                throw TemplateError("template conditional needs an include_bbox value");
            }
            const bool take_true = negated ? !*include_bbox : *include_bbox;
            out += render_template(take_true ? true_text : false_text, slots, include_bbox);
        } else if (is_slot_name(inner)) {
            auto it = slots.find(inner);
            if (it == slots.end()) {
                throw TemplateError("unresolved slot '" + inner + "'");
            }
            out += it->second;
        } else {
            // literal braces (e.g. the JSON shape shown to the model)
            out.push_back('{');
            out += render_template(inner, slots, include_bbox);
            out.push_back('}');
        }
        i = j + 1;
    }
    return out;
}

std::string strip_other(const std::string& class_name) {
    std::vector<std::string> tokens;
    std::size_t i = 0;
    while (i < class_name.size()) {
        while (i < class_name.size() && std::isspace(static_cast<unsigned char>(class_name[i]))) {
            ++i;
        }
        std::size_t start = i;
        while (i < class_name.size() && !std::isspace(static_cast<unsigned char>(class_name[i]))) {
            ++i;
        }
        if (i > start) {
            tokens.push_back(class_name.substr(start, i - start));
        }
    }
    for (std::size_t t = 0; t < tokens.size(); ++t) {
        if (tokens[t] == "Other" && t + 1 < tokens.size()) {
            std::string word = tokens[t + 1];
            for (char& c : word) {
                c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
            }
            return word;
        }
    }
    return class_name;
}

std::string classes_list_str(const std::vector<geodata::Detection>& peers) {
    if (peers.empty()) {
        throw std::invalid_argument("no detections on chip: classes list would be empty");
    }
    std::map<std::string, int> counts;
    for (const geodata::Detection& p : peers) {
        ++counts[p.class_name];
    }
    std::string out;
    for (const auto& [name, count] : counts) {
        if (!out.empty()) {
            out += ", ";
        }
        out += std::to_string(count) + " " + name;
    }
    return out;
}

std::string bbox_str(const geodata::BBox& bbox) {
    return "[" + std::to_string(bbox.x) + ", " + std::to_string(bbox.y) + ", " +
           std::to_string(bbox.w) + ", " + std::to_string(bbox.h) + "]";
}

std::string render_stage1(const geodata::Detection& d,
                          const std::vector<geodata::Detection>& peers) {
    SlotMap slots{
        {"classes_list_str", classes_list_str(peers)},
        {"class_name", strip_other(d.class_name)},
        {"bbox", bbox_str(d.bbox)},
    };
    return render_template(template_body(Stage::Stage1), slots);
}

std::string render_stage2(const geodata::Detection& d,
                          const std::vector<geodata::Detection>& peers,
                          const std::string& characteristics,
                          bool include_bbox) {
    if (characteristics.empty()) {
        throw std::invalid_argument("characteristics must be non-empty");
    }
    SlotMap slots{
        {"classes_list_str", classes_list_str(peers)},
        {"class_name", strip_other(d.class_name)},
        {"bbox", bbox_str(d.bbox)},
        {"unique_characteristics.query", characteristics},
    };
    return render_template(template_body(Stage::Stage2), slots, include_bbox);
}

std::string render_rephrase(const std::string& principal, int variant_tag) {
    if (principal.empty()) {
        throw std::invalid_argument("principal query must be non-empty");
    }
    SlotMap slots{
        {"principal", principal},
        {"variant", std::to_string(variant_tag)},
    };
    return render_template(template_body(Stage::Rephrase), slots);
}

bool decide_include_bbox(Rng& rng, double prob) {
    return uniform01(rng) < prob;
}

std::string parse_query_response(const std::string& raw) {
    for (std::size_t i = 0; i < raw.size(); ++i) {
        if (raw[i] != '{') {
            continue;
        }
        // balanced-brace extraction, string-aware
        int depth = 0;
        bool in_string = false;
        bool escaped = false;
        std::size_t end = std::string::npos;
        for (std::size_t j = i; j < raw.size(); ++j) {
            const char c = raw[j];
            if (in_string) {
                if (escaped) {
                    escaped = false;
                } else if (c == '\\') {
                    escaped = true;
                } else if (c == '"') {
                    in_string = false;
                }
                continue;
            }
            if (c == '"') {
                in_string = true;
            } else if (c == '{') {
                ++depth;
            } else if (c == '}') {
                --depth;
                if (depth == 0) {
                    end = j;
                    break;
                }
            }
        }
        if (end == std::string::npos) {
            continue;
        }
        Json obj = Json::parse(raw.substr(i, end - i + 1), nullptr, false);
        if (obj.is_discarded() || !obj.is_object()) {
            continue;
        }
        if (!obj.contains("query") || !obj["query"].is_string()) {
            continue;
        }
        std::string query = obj["query"].get<std::string>();
        std::size_t begin = 0;
        std::size_t finish = query.size();
        while (begin < finish && std::isspace(static_cast<unsigned char>(query[begin]))) {
            ++begin;
        }
        while (finish > begin && std::isspace(static_cast<unsigned char>(query[finish - 1]))) {
            --finish;
        }
        query = query.substr(begin, finish - begin);
        if (query.empty()) {
            throw MalformedResponse("empty query value", raw);
        }
        return query;
    }
    throw MalformedResponse("no JSON object with a \"query\" string", raw);
}

}  // namespace rsseg::prompting
