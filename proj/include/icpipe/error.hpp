// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace icpipe {

// Error categories map onto process exit codes (see tools/main.cpp):
// config=2, input=3, budget=4, backend=5.
enum class Errc {
  config_error,
  input_missing,
  budget_exceeded,
  remote_unavailable,
  malformed_response,
  backend_failure,
  unparseable_agent_output,
  referee_indecisive,
  empty_text,
  empty_sources,
  unbalanced_fence,
  no_paragraphs,
  empty_field,
  role_order_violation,
  bad_fractions,
  unknown_stage,
  dimension_mismatch,
  empty_index,
  schema_violation,
  out_of_range,
  unknown_item,
  internal,
};

const char* errc_name(Errc c);

class PipelineError : public std::runtime_error {
 public:
  PipelineError(Errc code, const std::string& what)
      : std::runtime_error(std::string(errc_name(code)) + ": " + what), code_(code) {}

  Errc code() const { return code_; }

  int exit_code() const {
    switch (code_) {
      case Errc::config_error:
      case Errc::unknown_stage:
      case Errc::bad_fractions:
        return 2;
      case Errc::input_missing:
      case Errc::schema_violation:
        return 3;
      case Errc::budget_exceeded:
        return 4;
      case Errc::remote_unavailable:
      case Errc::malformed_response:
      case Errc::backend_failure:
        return 5;
      default:
        return 1;
    }
  }

 private:
  Errc code_;
};

}  // namespace icpipe
