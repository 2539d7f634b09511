// SPDX-License-Identifier: Apache-2.0
#include "icpipe/qa.hpp"

#include "icpipe/error.hpp"

namespace icpipe {

const char* qa_type_name(QaType t) {
  switch (t) {
    case QaType::conceptual: return "conceptual";
    case QaType::logical: return "logical";
    case QaType::divergent: return "divergent";
  }
  return "?";
}

QaType qa_type_from_name(const std::string& name) {
  if (name == "conceptual") return QaType::conceptual;
  if (name == "logical") return QaType::logical;
  if (name == "divergent") return QaType::divergent;
  throw PipelineError(Errc::schema_violation, "unknown qa_type " + name);
}

json QAPair::to_json() const {
  json spans = json::array();
  for (const auto& s : evidence_spans) {
    spans.push_back(json{{"offset", s.offset}, {"length", s.length}});
  }
  return json{{"question", question},
              {"answer", answer},
              {"qa_type", qa_type_name(qa_type)},
              {"source_doc_id", source_doc_id},
              {"generator", generator},
              {"round", round},
              {"evidence_spans", spans}};
}

QAPair QAPair::from_json(const json& j) {
  QAPair p;
  p.question = j.at("question").get<std::string>();
  p.answer = j.at("answer").get<std::string>();
  p.qa_type = qa_type_from_name(j.value("qa_type", "conceptual"));
  p.source_doc_id = j.value("source_doc_id", "");
  p.generator = j.value("generator", "");
  p.round = j.value("round", 0);
  if (j.contains("evidence_spans")) {
    for (const auto& s : j["evidence_spans"]) {
      p.evidence_spans.push_back({s.at("offset").get<size_t>(), s.at("length").get<size_t>()});
    }
  }
  return p;
}

}  // namespace icpipe
