#pragma once

#include "specex/sparse.hpp"

#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

namespace specex {

struct TokenizerOptions {
  std::size_t min_token_length = 3;
  // Empty means the built-in English list.
  std::optional<std::filesystem::path> stopword_file;
};

struct Document {
  std::string id;
  std::size_t ingest_index = 0;
  std::vector<std::string> tokens;
  SparseVector vector;  // TF-IDF, L2-normalized
  std::optional<std::string> label;
};

// Corpus-wide counts. Immutable after construction except for the lazily
// filled co-occurrence cache, which is internally synchronized.
class CorpusStats {
 public:
  CorpusStats() = default;

  // Builds stats from per-document distinct term sets.
  static CorpusStats from_documents(const std::vector<std::vector<std::string>>& token_lists);

  // Builds stats from raw counts only (no postings; co-occurrence unavailable).
  static CorpusStats from_counts(std::size_t k, const std::map<std::string, std::size_t>& document_frequency);

  CorpusStats(const CorpusStats& other);
  CorpusStats& operator=(const CorpusStats& other);
  CorpusStats(CorpusStats&&) noexcept;
  CorpusStats& operator=(CorpusStats&&) noexcept;

  std::size_t k() const noexcept { return k_; }
  const std::vector<std::string>& vocabulary() const noexcept { return vocabulary_; }
  std::optional<TermId> term_id(std::string_view term) const;
  const std::string& term(TermId id) const { return vocabulary_.at(id); }
  std::size_t document_frequency(TermId id) const { return document_frequency_.at(id); }
  std::size_t document_frequency(std::string_view term) const;

  // Number of documents containing both terms. Computed on first request
  // from the postings lists and cached.
  std::size_t cooccurrence(TermId a, TermId b) const;

  // Snapshot of the cached pairs (for inspection and tests).
  std::map<std::pair<TermId, TermId>, std::size_t> cooccurrence_cache() const;

 private:
  std::size_t k_ = 0;
  std::vector<std::string> vocabulary_;  // sorted; TermId is the index
  std::vector<std::size_t> document_frequency_;
  std::vector<std::vector<std::uint32_t>> postings_;  // sorted document ordinals per term

  mutable std::mutex cache_mutex_;
  mutable std::map<std::pair<TermId, TermId>, std::size_t> cooccurrence_;
};

struct IngestWarning {
  std::string document;
  std::string message;
};

struct Corpus {
  std::string source;
  std::vector<Document> documents;
  CorpusStats stats;
  std::vector<IngestWarning> warnings;
  std::unordered_map<std::string, std::size_t> index_of;  // id -> ingest_index

  const Document& document(std::string_view id) const;
  std::size_t size() const noexcept { return documents.size(); }
};

std::vector<std::string> tokenize(std::string_view text, const TokenizerOptions& options = {});

// Raw term-count TF times ln(k / df), L2-normalized. Terms outside the
// vocabulary are ignored. Throws Error("degenerate_vector") when every
// weight is zero.
SparseVector vectorize(const std::vector<std::string>& tokens, const CorpusStats& stats);

// Reads a directory of .txt files (recursively, ordered by relative path) or a
// single .jsonl file. Documents with no tokens or a degenerate vector are
// skipped with a warning.
std::shared_ptr<const Corpus> ingest_corpus(const std::filesystem::path& source, const TokenizerOptions& options = {});

// In-memory variant used by fixtures: (id, text, label) triples in order.
struct RawDocument {
  std::string id;
  std::string text;
  std::optional<std::string> label;
};
std::shared_ptr<const Corpus> build_corpus(std::vector<RawDocument> raw, const TokenizerOptions& options = {},
                                           std::string source = "<memory>");

const std::vector<std::string>& builtin_stopwords();

}  // namespace specex
