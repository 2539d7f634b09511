// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "icpipe/util.hpp"

namespace icpipe {

enum class QaType { conceptual, logical, divergent };

const char* qa_type_name(QaType t);
QaType qa_type_from_name(const std::string& name);

struct EvidenceSpan {
  size_t offset = 0;
  size_t length = 0;
};

struct QAPair {
  std::string question;
  std::string answer;
  QaType qa_type = QaType::conceptual;
  std::string source_doc_id;
  std::string generator;  // A1 | A2 | regenerated
  int round = 0;
  std::vector<EvidenceSpan> evidence_spans;

  json to_json() const;
  static QAPair from_json(const json& j);
};

}  // namespace icpipe
