// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <memory>
#include <shared_mutex>
#include <string>
#include <thread>
#include <vector>

#include "icpipe/backends.hpp"
#include "icpipe/util.hpp"

namespace icpipe {

// --- chunks --------------------------------------------------------------

struct Chunk {
  std::string doc_id;
  size_t seq = 0;
  std::string text;
  size_t char_offset = 0;
  size_t char_length = 0;

  json to_json() const;
  static Chunk from_json(const json& j);
};

struct ChunkingParams {
  size_t max_chars = 1200;
  size_t overlap_chars = 200;
};

// Covers the document; consecutive chunks overlap by exactly
// overlap_chars, so stripping the overlap from every chunk after the
// first reconstructs the document byte for byte.
std::vector<Chunk> chunk_document(const std::string& doc_id, const std::string& text,
                                  const ChunkingParams& params = {});

// --- vector index --------------------------------------------------------

struct GraphParams {
  size_t neighbors = 16;          // M
  size_t construction_beam = 100;
  size_t search_beam = 64;
  size_t exact_fallback_below = 10000;  // automatic mode uses exact under this size
};

enum class SearchMode { exact, approximate, automatic };

struct SearchHit {
  Chunk chunk;
  double score;  // cosine
};

// Navigable small-world graph over unit vectors with an exact brute-force
// path that doubles as the correctness oracle. Concurrent readers, single
// writer.
class VectorIndex {
 public:
  explicit VectorIndex(size_t dim, GraphParams params = {});

  size_t dimension() const { return dim_; }
  size_t size() const;
  const GraphParams& params() const { return params_; }

  void add(Chunk chunk, std::vector<float> vector);

  std::vector<SearchHit> search(const std::vector<float>& query, size_t k,
                                SearchMode mode = SearchMode::automatic) const;

  void save(const std::filesystem::path& dir) const;
  static VectorIndex load(const std::filesystem::path& dir);

 private:
  std::vector<size_t> search_exact(const std::vector<float>& query, size_t k) const;
  std::vector<size_t> search_graph(const std::vector<float>& query, size_t k) const;
  double dot(const std::vector<float>& q, size_t i) const;

  size_t dim_;
  GraphParams params_;
  std::vector<Chunk> chunks_;
  std::vector<std::vector<float>> vectors_;
  std::vector<std::vector<uint32_t>> adjacency_;
  // behind a pointer so the index stays movable
  mutable std::unique_ptr<std::shared_mutex> mu_ = std::make_unique<std::shared_mutex>();
};

struct IngestReport {
  size_t chunks_added = 0;
};

IngestReport ingest_chunks(VectorIndex& index, const std::vector<Chunk>& chunks,
                           EmbedBackend& embed);

// --- answering -----------------------------------------------------------

// Numbered passages in rank order, then the question. Oversized prompts
// drop the lowest-ranked passages first.
std::string assemble_context(const std::string& question, const std::vector<SearchHit>& passages,
                             size_t char_budget = 6000);

struct RagAnswer {
  std::string answer;
  std::vector<SearchHit> passages;
};

RagAnswer answer_with_context(const VectorIndex& index, const std::string& question,
                              EmbedBackend& embed, ChatBackend& chat, size_t k = 3,
                              size_t context_char_budget = 6000);

// --- HTTP query service --------------------------------------------------

// POST /ingest {"documents":[{"id","text"}]} -> {"chunks_added"}
// POST /query  {"question","k"}              -> {"answer","passages":[...]}
// GET  /healthz
class RagService {
 public:
  RagService(VectorIndex& index, EmbedBackend& embed, ChatBackend& chat,
             ChunkingParams chunking = {});
  ~RagService();

  bool start(int port);   // binds and serves on a background thread
  void stop();
  int port() const { return port_; }

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
  int port_ = 0;
};

}  // namespace icpipe
