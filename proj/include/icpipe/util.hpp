// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace icpipe {

using json = nlohmann::ordered_json;

// --- hashing -------------------------------------------------------------

inline uint64_t fnv1a64(std::string_view s, uint64_t h = 1469598103934665603ULL) {
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

inline uint64_t fnv1a64_u64(uint64_t v, uint64_t h = 1469598103934665603ULL) {
  for (int i = 0; i < 8; ++i) {
    h ^= (v >> (i * 8)) & 0xFF;
    h *= 1099511628211ULL;
  }
  return h;
}

std::string hex64(uint64_t v);

// --- string helpers ------------------------------------------------------

std::string trim(std::string_view s);
std::vector<std::string> split_lines(std::string_view text);
bool starts_with(std::string_view s, std::string_view prefix);
std::string to_lower(std::string_view s);

// --- file io -------------------------------------------------------------

std::string read_file(const std::filesystem::path& p);
void write_file(const std::filesystem::path& p, std::string_view content);
void atomic_write_file(const std::filesystem::path& p, std::string_view content);

// JSON-lines: one object per line, UTF-8.
std::vector<json> read_jsonl(const std::filesystem::path& p);
void write_jsonl(const std::filesystem::path& p, const std::vector<json>& rows);
void append_jsonl(const std::filesystem::path& p, const json& row);

}  // namespace icpipe
