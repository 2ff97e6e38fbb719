#pragma once

#include <filesystem>
#include <fstream>
#include <istream>
#include <string>

#include <json.hpp>

#include "forgecap/error.hpp"

namespace forgecap::json_util {

using nlohmann::ordered_json;

inline const ordered_json& required(const ordered_json& j, const char* key) {
  if (!j.is_object()) throw Error(Errc::Parse, "expected a JSON object");
  auto it = j.find(key);
  if (it == j.end()) throw Error(Errc::MissingField, key);
  return *it;
}

inline std::string required_string(const ordered_json& j, const char* key) {
  const auto& v = required(j, key);
  if (!v.is_string()) throw Error(Errc::Parse, std::string(key) + " must be a string");
  return v.get<std::string>();
}

inline double required_number(const ordered_json& j, const char* key) {
  const auto& v = required(j, key);
  if (!v.is_number()) throw Error(Errc::Parse, std::string(key) + " must be a number");
  return v.get<double>();
}

// Calls fn(json, line_no) for every non-blank line. JSON syntax errors become
// Parse errors naming the 1-based line.
template <typename Fn>
void for_each_jsonl(std::istream& in, Fn&& fn) {
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    try {
      fn(ordered_json::parse(line), line_no);
    } catch (const nlohmann::json::exception& e) {
      throw Error(Errc::Parse, "line " + std::to_string(line_no) + ": " + e.what());
    }
  }
}

inline ordered_json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::Io, "cannot open " + path.string());
  try {
    return ordered_json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::Parse, path.string() + ": " + e.what());
  }
}

// Pretty-printed with a trailing newline so artifacts diff cleanly.
inline void write_json_file(const std::filesystem::path& path, const ordered_json& j) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(Errc::Io, "cannot write " + path.string());
  out << j.dump(2) << '\n';
  if (!out) throw Error(Errc::Io, "write failed for " + path.string());
}

}  // namespace forgecap::json_util
