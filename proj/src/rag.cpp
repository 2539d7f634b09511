// SPDX-License-Identifier: Apache-2.0
#include "icpipe/rag.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <queue>
#include <set>

#include <httplib.h>

#include "icpipe/error.hpp"

namespace icpipe {

// --- chunks --------------------------------------------------------------

json Chunk::to_json() const {
  return json{{"doc_id", doc_id},
              {"seq", seq},
              {"text", text},
              {"offset", char_offset},
              {"length", char_length}};
}

Chunk Chunk::from_json(const json& j) {
  Chunk c;
  c.doc_id = j.at("doc_id").get<std::string>();
  c.seq = j.at("seq").get<size_t>();
  c.text = j.at("text").get<std::string>();
  c.char_offset = j.at("offset").get<size_t>();
  c.char_length = j.at("length").get<size_t>();
  return c;
}

std::vector<Chunk> chunk_document(const std::string& doc_id, const std::string& text,
                                  const ChunkingParams& params) {
  if (params.overlap_chars >= params.max_chars)
    throw PipelineError(Errc::config_error, "overlap must be smaller than max_chars");
  if (text.empty()) throw PipelineError(Errc::empty_text, "document " + doc_id + " is empty");
  std::vector<Chunk> chunks;
  size_t len = text.size();
  size_t pos = 0;
  size_t seq = 0;
  while (pos < len) {
    size_t end = std::min(pos + params.max_chars, len);
    if (end < len) {
      // prefer a paragraph boundary, as long as the chunk still advances
      size_t search_from = pos + params.overlap_chars + 1;
      size_t brk = text.rfind("\n\n", end - 1);
      if (brk != std::string::npos && brk + 2 > search_from && brk + 2 <= end) end = brk + 2;
    }
    Chunk c;
    c.doc_id = doc_id;
    c.seq = seq++;
    c.char_offset = pos;
    c.char_length = end - pos;
    c.text = text.substr(pos, end - pos);
    chunks.push_back(std::move(c));
    if (end == len) break;
    pos = end - params.overlap_chars;
  }
  return chunks;
}

// --- vector index --------------------------------------------------------

VectorIndex::VectorIndex(size_t dim, GraphParams params) : dim_(dim), params_(params) {
  if (dim_ < 2) throw PipelineError(Errc::config_error, "index dimension must be >= 2");
}

size_t VectorIndex::size() const {
  std::shared_lock lk(*mu_);
  return chunks_.size();
}

double VectorIndex::dot(const std::vector<float>& q, size_t i) const {
  const std::vector<float>& v = vectors_[i];
  double s = 0;
  for (size_t j = 0; j < dim_; ++j) s += static_cast<double>(q[j]) * v[j];
  return s;
}

void VectorIndex::add(Chunk chunk, std::vector<float> vector) {
  if (vector.size() != dim_)
    throw PipelineError(Errc::dimension_mismatch,
                        "vector has dimension " + std::to_string(vector.size()));
  double norm2 = 0;
  for (float x : vector) norm2 += static_cast<double>(x) * x;
  if (std::abs(norm2 - 1.0) > 1e-4)
    throw PipelineError(Errc::dimension_mismatch, "vector is not unit-length");

  std::unique_lock lk(*mu_);
  size_t id = chunks_.size();
  std::vector<size_t> nearest;
  if (id > 0) nearest = search_graph(vector, params_.neighbors);
  // the new vector must be in place before neighbor pruning can score it
  chunks_.push_back(std::move(chunk));
  vectors_.push_back(std::move(vector));
  adjacency_.emplace_back(nearest.begin(), nearest.end());
  for (size_t nb : nearest) {
    auto& list = adjacency_[nb];
    list.push_back(static_cast<uint32_t>(id));
    if (list.size() > 2 * params_.neighbors) {
      // prune to the closest M neighbors of nb
      std::sort(list.begin(), list.end(), [&](uint32_t a, uint32_t b) {
        return dot(vectors_[nb], a) > dot(vectors_[nb], b);
      });
      list.resize(params_.neighbors);
    }
  }
}

std::vector<size_t> VectorIndex::search_exact(const std::vector<float>& query, size_t k) const {
  std::vector<size_t> ids(chunks_.size());
  for (size_t i = 0; i < ids.size(); ++i) ids[i] = i;
  auto better = [&](size_t a, size_t b) {
    double sa = dot(query, a), sb = dot(query, b);
    if (sa != sb) return sa > sb;
    if (chunks_[a].doc_id != chunks_[b].doc_id) return chunks_[a].doc_id < chunks_[b].doc_id;
    return chunks_[a].seq < chunks_[b].seq;
  };
  if (k < ids.size()) {
    std::partial_sort(ids.begin(), ids.begin() + static_cast<long>(k), ids.end(), better);
    ids.resize(k);
  } else {
    std::sort(ids.begin(), ids.end(), better);
  }
  return ids;
}

std::vector<size_t> VectorIndex::search_graph(const std::vector<float>& query, size_t k) const {
  size_t n = chunks_.size();
  if (n == 0) return {};
  size_t beam = std::max(params_.search_beam, k);

  // best-first beam search from the first inserted point
  std::vector<char> visited(n, 0);
  using Scored = std::pair<double, size_t>;
  std::priority_queue<Scored> frontier;                       // max-heap by score
  std::priority_queue<Scored, std::vector<Scored>, std::greater<>> pool;  // min-heap, size <= beam

  size_t entry = 0;
  double es = dot(query, entry);
  visited[entry] = 1;
  frontier.emplace(es, entry);
  pool.emplace(es, entry);

  while (!frontier.empty()) {
    auto [score, node] = frontier.top();
    frontier.pop();
    if (pool.size() >= beam && score < pool.top().first) break;
    for (uint32_t nb : adjacency_[node]) {
      if (visited[nb]) continue;
      visited[nb] = 1;
      double s = dot(query, nb);
      if (pool.size() < beam || s > pool.top().first) {
        frontier.emplace(s, nb);
        pool.emplace(s, nb);
        if (pool.size() > beam) pool.pop();
      }
    }
  }

  std::vector<size_t> candidates;
  candidates.reserve(pool.size());
  while (!pool.empty()) {
    candidates.push_back(pool.top().second);
    pool.pop();
  }
  std::sort(candidates.begin(), candidates.end(), [&](size_t a, size_t b) {
    double sa = dot(query, a), sb = dot(query, b);
    if (sa != sb) return sa > sb;
    if (chunks_[a].doc_id != chunks_[b].doc_id) return chunks_[a].doc_id < chunks_[b].doc_id;
    return chunks_[a].seq < chunks_[b].seq;
  });
  if (candidates.size() > k) candidates.resize(k);
  return candidates;
}

std::vector<SearchHit> VectorIndex::search(const std::vector<float>& query, size_t k,
                                           SearchMode mode) const {
  if (query.size() != dim_)
    throw PipelineError(Errc::dimension_mismatch, "query dimension mismatch");
  if (k < 1) throw PipelineError(Errc::config_error, "k must be >= 1");
  std::shared_lock lk(*mu_);
  if (chunks_.empty()) throw PipelineError(Errc::empty_index, "index has no entries");
  if (mode == SearchMode::automatic) {
    mode = chunks_.size() < params_.exact_fallback_below ? SearchMode::exact
                                                         : SearchMode::approximate;
  }
  std::vector<size_t> ids = (mode == SearchMode::exact) ? search_exact(query, k)
                                                        : search_graph(query, k);
  std::vector<SearchHit> hits;
  hits.reserve(ids.size());
  for (size_t id : ids) hits.push_back({chunks_[id], dot(query, id)});
  return hits;
}

// --- persistence ---------------------------------------------------------

namespace {

template <typename T>
void put_raw(std::ofstream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get_raw(std::ifstream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw PipelineError(Errc::schema_violation, "truncated index file");
  return v;
}

}  // namespace

void VectorIndex::save(const std::filesystem::path& dir) const {
  std::shared_lock lk(*mu_);
  std::filesystem::create_directories(dir);

  {
    std::ofstream out(dir / "vectors.bin", std::ios::binary | std::ios::trunc);
    out.write("ICPV", 4);
    put_raw<uint32_t>(out, 1);
    put_raw<uint32_t>(out, static_cast<uint32_t>(dim_));
    put_raw<uint64_t>(out, chunks_.size());
    for (const auto& v : vectors_) {
      out.write(reinterpret_cast<const char*>(v.data()),
                static_cast<std::streamsize>(v.size() * sizeof(float)));
    }
  }
  {
    std::vector<json> rows;
    rows.reserve(chunks_.size());
    for (const auto& c : chunks_) rows.push_back(c.to_json());
    write_jsonl(dir / "chunks.jsonl", rows);
  }
  {
    std::ofstream out(dir / "graph.bin", std::ios::binary | std::ios::trunc);
    out.write("ICPG", 4);
    put_raw<uint32_t>(out, 1);
    put_raw<uint32_t>(out, static_cast<uint32_t>(params_.neighbors));
    put_raw<uint32_t>(out, static_cast<uint32_t>(params_.construction_beam));
    put_raw<uint32_t>(out, static_cast<uint32_t>(params_.search_beam));
    put_raw<uint64_t>(out, adjacency_.size());
    for (const auto& list : adjacency_) {
      put_raw<uint32_t>(out, static_cast<uint32_t>(list.size()));
      out.write(reinterpret_cast<const char*>(list.data()),
                static_cast<std::streamsize>(list.size() * sizeof(uint32_t)));
    }
  }
}

VectorIndex VectorIndex::load(const std::filesystem::path& dir) {
  std::ifstream vin(dir / "vectors.bin", std::ios::binary);
  if (!vin) throw PipelineError(Errc::input_missing, (dir / "vectors.bin").string());
  char magic[4];
  vin.read(magic, 4);
  if (std::memcmp(magic, "ICPV", 4) != 0)
    throw PipelineError(Errc::schema_violation, "bad vectors.bin magic");
  get_raw<uint32_t>(vin);  // version
  uint32_t dim = get_raw<uint32_t>(vin);
  uint64_t count = get_raw<uint64_t>(vin);

  std::ifstream gin(dir / "graph.bin", std::ios::binary);
  if (!gin) throw PipelineError(Errc::input_missing, (dir / "graph.bin").string());
  gin.read(magic, 4);
  if (std::memcmp(magic, "ICPG", 4) != 0)
    throw PipelineError(Errc::schema_violation, "bad graph.bin magic");
  get_raw<uint32_t>(gin);  // version
  GraphParams params;
  params.neighbors = get_raw<uint32_t>(gin);
  params.construction_beam = get_raw<uint32_t>(gin);
  params.search_beam = get_raw<uint32_t>(gin);
  uint64_t gcount = get_raw<uint64_t>(gin);
  if (gcount != count) throw PipelineError(Errc::schema_violation, "graph/vector count mismatch");

  VectorIndex index(dim, params);
  index.vectors_.reserve(count);
  for (uint64_t i = 0; i < count; ++i) {
    std::vector<float> v(dim);
    vin.read(reinterpret_cast<char*>(v.data()),
             static_cast<std::streamsize>(dim * sizeof(float)));
    if (!vin) throw PipelineError(Errc::schema_violation, "truncated vectors.bin");
    index.vectors_.push_back(std::move(v));
  }
  for (uint64_t i = 0; i < count; ++i) {
    uint32_t degree = get_raw<uint32_t>(gin);
    std::vector<uint32_t> list(degree);
    gin.read(reinterpret_cast<char*>(list.data()),
             static_cast<std::streamsize>(degree * sizeof(uint32_t)));
    if (!gin) throw PipelineError(Errc::schema_violation, "truncated graph.bin");
    index.adjacency_.push_back(std::move(list));
  }
  for (const auto& row : read_jsonl(dir / "chunks.jsonl")) {
    index.chunks_.push_back(Chunk::from_json(row));
  }
  if (index.chunks_.size() != count)
    throw PipelineError(Errc::schema_violation, "chunk/vector count mismatch");
  return index;
}

// --- ingest / answer -----------------------------------------------------

IngestReport ingest_chunks(VectorIndex& index, const std::vector<Chunk>& chunks,
                           EmbedBackend& embed) {
  IngestReport report;
  if (chunks.empty()) return report;
  if (embed.dimension() != index.dimension())
    throw PipelineError(Errc::dimension_mismatch, "embed backend dimension mismatch");
  std::vector<std::string> texts;
  texts.reserve(chunks.size());
  for (const auto& c : chunks) texts.push_back(c.text);
  auto vectors = embed.embed(texts);
  for (size_t i = 0; i < chunks.size(); ++i) {
    index.add(chunks[i], std::move(vectors[i]));
    report.chunks_added += 1;
  }
  return report;
}

std::string assemble_context(const std::string& question, const std::vector<SearchHit>& passages,
                             size_t char_budget) {
  std::vector<const SearchHit*> used;
  for (const auto& p : passages) used.push_back(&p);
  auto render = [&] {
    std::string prompt = "Use the following passages to answer the question.\n\n";
    for (size_t i = 0; i < used.size(); ++i) {
      prompt += "[" + std::to_string(i + 1) + "] " + used[i]->chunk.text + "\n\n";
    }
    prompt += "Question: " + question;
    return prompt;
  };
  std::string prompt = render();
  while (prompt.size() > char_budget && !used.empty()) {
    used.pop_back();  // lowest rank goes first
    prompt = render();
  }
  return prompt;
}

RagAnswer answer_with_context(const VectorIndex& index, const std::string& question,
                              EmbedBackend& embed, ChatBackend& chat, size_t k,
                              size_t context_char_budget) {
  auto qvec = embed.embed({question}).at(0);
  RagAnswer out;
  out.passages = index.search(qvec, k);
  std::string prompt = assemble_context(question, out.passages, context_char_budget);
  ChatRequest req;
  req.messages.push_back(
      {ChatRole::system, "Answer the question using only the provided passages."});
  req.messages.push_back({ChatRole::user, prompt});
  out.answer = chat.complete(req);
  return out;
}

// --- HTTP service --------------------------------------------------------

struct RagService::Impl {
  VectorIndex& index;
  EmbedBackend& embed;
  ChatBackend& chat;
  ChunkingParams chunking;
  httplib::Server server;
  std::thread thread;
  std::mutex write_mu;  // single writer for ingestion
};

RagService::RagService(VectorIndex& index, EmbedBackend& embed, ChatBackend& chat,
                       ChunkingParams chunking)
    : impl_(new Impl{index, embed, chat, chunking, {}, {}, {}}) {
  impl_->server.Get("/healthz", [](const httplib::Request&, httplib::Response& res) {
    res.set_content(R"({"status":"ok"})", "application/json");
  });
  impl_->server.Post("/ingest", [this](const httplib::Request& req, httplib::Response& res) {
    try {
      json body = json::parse(req.body);
      size_t added = 0;
      std::lock_guard<std::mutex> lk(impl_->write_mu);
      for (const auto& d : body.at("documents")) {
        auto chunks = chunk_document(d.at("id").get<std::string>(),
                                     d.at("text").get<std::string>(), impl_->chunking);
        added += ingest_chunks(impl_->index, chunks, impl_->embed).chunks_added;
      }
      res.set_content(json{{"chunks_added", added}}.dump(), "application/json");
    } catch (const std::exception& e) {
      res.status = 400;
      res.set_content(json{{"error", e.what()}}.dump(), "application/json");
    }
  });
  impl_->server.Post("/query", [this](const httplib::Request& req, httplib::Response& res) {
    try {
      json body = json::parse(req.body);
      size_t k = body.value("k", 3u);
      auto result = answer_with_context(impl_->index, body.at("question").get<std::string>(),
                                        impl_->embed, impl_->chat, k);
      json passages = json::array();
      for (const auto& hit : result.passages) {
        passages.push_back(json{{"doc_id", hit.chunk.doc_id},
                                {"seq", hit.chunk.seq},
                                {"text", hit.chunk.text},
                                {"score", hit.score}});
      }
      res.set_content(json{{"answer", result.answer}, {"passages", passages}}.dump(),
                      "application/json");
    } catch (const std::exception& e) {
      res.status = 400;
      res.set_content(json{{"error", e.what()}}.dump(), "application/json");
    }
  });
}

RagService::~RagService() { stop(); }

bool RagService::start(int port) {
  if (port == 0) {
    port = impl_->server.bind_to_any_port("127.0.0.1");
    if (port <= 0) return false;
  } else if (!impl_->server.bind_to_port("127.0.0.1", port)) {
    return false;
  }
  port_ = port;
  impl_->thread = std::thread([this] { impl_->server.listen_after_bind(); });
  impl_->server.wait_until_ready();
  return true;
}

void RagService::stop() {
  if (impl_ && impl_->thread.joinable()) {
    impl_->server.stop();
    impl_->thread.join();
  }
}

}  // namespace icpipe
