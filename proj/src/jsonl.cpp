#include "rsseg/jsonl.hpp"

#include <fstream>
#include <sstream>

namespace rsseg {

JsonlFile read_jsonl(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot open " + path);
    }
    JsonlFile out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') {
            line.pop_back();
        }
        if (line.empty()) {
            continue;
        }
        Json j = Json::parse(line, nullptr, false);
        if (j.is_discarded()) {
            out.errors.push_back({lineno, "invalid JSON"});
            continue;
        }
        out.records.push_back(std::move(j));
    }
    return out;
}

void write_jsonl(const std::string& path, const std::vector<Json>& records) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw IoError("cannot write " + path);
    }
    for (const Json& r : records) {
        out << r.dump() << '\n';
    }
    if (!out) {
        throw IoError("write failed for " + path);
    }
}

Json read_json(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot open " + path);
    }
    Json j = Json::parse(in, nullptr, false);
    if (j.is_discarded()) {
        throw IoError("invalid JSON in " + path);
    }
    return j;
}

void write_json(const std::string& path, const Json& value) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw IoError("cannot write " + path);
    }
    out << value.dump(2) << '\n';
    if (!out) {
        throw IoError("write failed for " + path);
    }
}

std::string read_text_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot open " + path);
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_text_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw IoError("cannot write " + path);
    }
    out << content;
    if (!out) {
        throw IoError("write failed for " + path);
    }
}

}  // namespace rsseg
