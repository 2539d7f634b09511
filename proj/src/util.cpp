// SPDX-License-Identifier: Apache-2.0
#include "icpipe/util.hpp"

#include <fstream>
#include <sstream>

#include "icpipe/error.hpp"

namespace icpipe {

const char* errc_name(Errc c) {
  switch (c) {
    case Errc::config_error: return "ConfigError";
    case Errc::input_missing: return "InputMissing";
    case Errc::budget_exceeded: return "BudgetExceeded";
    case Errc::remote_unavailable: return "RemoteUnavailable";
    case Errc::malformed_response: return "MalformedResponse";
    case Errc::backend_failure: return "BackendFailure";
    case Errc::unparseable_agent_output: return "UnparseableAgentOutput";
    case Errc::referee_indecisive: return "RefereeIndecisive";
    case Errc::empty_text: return "EmptyText";
    case Errc::empty_sources: return "EmptySources";
    case Errc::unbalanced_fence: return "UnbalancedFence";
    case Errc::no_paragraphs: return "NoParagraphs";
    case Errc::empty_field: return "EmptyField";
    case Errc::role_order_violation: return "RoleOrderViolation";
    case Errc::bad_fractions: return "BadFractions";
    case Errc::unknown_stage: return "UnknownStage";
    case Errc::dimension_mismatch: return "DimensionMismatch";
    case Errc::empty_index: return "EmptyIndex";
    case Errc::schema_violation: return "SchemaViolation";
    case Errc::out_of_range: return "OutOfRange";
    case Errc::unknown_item: return "UnknownItem";
    case Errc::internal: return "InternalError";
  }
  return "UnknownError";
}

std::string hex64(uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[i] = digits[v & 0xF];
    v >>= 4;
  }
  return out;
}

std::string trim(std::string_view s) {
  size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

std::vector<std::string> split_lines(std::string_view text) {
  std::vector<std::string> lines;
  size_t pos = 0;
  while (pos <= text.size()) {
    size_t nl = text.find('\n', pos);
    if (nl == std::string_view::npos) {
      lines.emplace_back(text.substr(pos));
      break;
    }
    lines.emplace_back(text.substr(pos, nl - pos));
    pos = nl + 1;
  }
  return lines;
}

bool starts_with(std::string_view s, std::string_view prefix) {
  return s.size() >= prefix.size() && s.substr(0, prefix.size()) == prefix;
}

std::string to_lower(std::string_view s) {
  std::string out(s);
  for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw PipelineError(Errc::input_missing, "cannot open " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& p, std::string_view content) {
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw PipelineError(Errc::input_missing, "cannot write " + p.string());
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
}

void atomic_write_file(const std::filesystem::path& p, std::string_view content) {
  std::filesystem::path tmp = p;
  tmp += ".tmp";
  write_file(tmp, content);
  std::filesystem::rename(tmp, p);
}

std::vector<json> read_jsonl(const std::filesystem::path& p) {
  std::vector<json> rows;
  std::string text = read_file(p);
  size_t lineno = 0;
  for (const auto& line : split_lines(text)) {
    ++lineno;
    if (trim(line).empty()) continue;
    json j = json::parse(line, nullptr, false);
    if (j.is_discarded()) {
      throw PipelineError(Errc::schema_violation,
                          p.string() + ":" + std::to_string(lineno) + ": invalid JSON");
    }
    rows.push_back(std::move(j));
  }
  return rows;
}

void write_jsonl(const std::filesystem::path& p, const std::vector<json>& rows) {
  std::string buf;
  for (const auto& r : rows) {
    buf += r.dump();
    buf += '\n';
  }
  atomic_write_file(p, buf);
}

void append_jsonl(const std::filesystem::path& p, const json& row) {
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary | std::ios::app);
  if (!out) throw PipelineError(Errc::input_missing, "cannot append " + p.string());
  std::string line = row.dump();
  line += '\n';
  out.write(line.data(), static_cast<std::streamsize>(line.size()));
}

}  // namespace icpipe
