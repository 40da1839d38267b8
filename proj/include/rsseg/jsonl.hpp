#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

namespace rsseg {

using Json = nlohmann::json;

// Thrown on open/read/write failures; the CLI maps it to exit code 2.
struct IoError : std::runtime_error {
    explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

struct JsonlError {
    std::size_t line = 0;  // 1-based
    std::string message;
};

struct JsonlFile {
    std::vector<Json> records;
    std::vector<JsonlError> errors;
};

// Reads a JSON-Lines file. Blank lines are skipped; unparsable lines are
// collected in `errors` rather than aborting the read.
JsonlFile read_jsonl(const std::string& path);

// Writes records one per line, '\n' separated, in binary mode so output is
// byte-identical across platforms.
void write_jsonl(const std::string& path, const std::vector<Json>& records);

Json read_json(const std::string& path);
void write_json(const std::string& path, const Json& value);

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& content);

}  // namespace rsseg
