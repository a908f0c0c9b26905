#include "specex/corpus.hpp"

#include "specex/error.hpp"

#include <json.hpp>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>
#include <unordered_set>

namespace specex {

namespace data {
extern const std::string_view stopwords_txt;
}

namespace fs = std::filesystem;

namespace {

std::vector<std::string> split_lines(std::string_view text) {
  std::vector<std::string> out;
  std::string line;
  std::istringstream in{std::string(text)};
  while (std::getline(in, line)) {
    while (!line.empty() && (line.back() == '\r' || line.back() == ' ' || line.back() == '\t')) line.pop_back();
    if (!line.empty()) out.push_back(line);
  }
  return out;
}

std::unordered_set<std::string> load_stopwords(const TokenizerOptions& options) {
  if (!options.stopword_file) {
    const auto& words = builtin_stopwords();
    return {words.begin(), words.end()};
  }
  std::ifstream in(*options.stopword_file);
  if (!in) throw Error("missing_path", "cannot read stopword file " + options.stopword_file->string());
  std::stringstream buf;
  buf << in.rdbuf();
  auto words = split_lines(buf.str());
  return {words.begin(), words.end()};
}

std::vector<std::string> tokenize_with(std::string_view text, std::size_t min_len,
                                       const std::unordered_set<std::string>& stop) {
  std::vector<std::string> tokens;
  std::string current;
  auto flush = [&] {
    if (current.size() >= min_len && !stop.contains(current)) tokens.push_back(current);
    current.clear();
  };
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (c < 0x80 && std::isalnum(c)) {
      current.push_back(static_cast<char>(std::tolower(c)));
    } else {
      flush();
    }
  }
  flush();
  return tokens;
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw Error("unreadable", "cannot read " + p.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

std::vector<RawDocument> read_directory(const fs::path& dir) {
  std::vector<fs::path> files;
  for (const auto& entry : fs::recursive_directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".txt") files.push_back(entry.path());
  }
  std::vector<std::pair<std::string, fs::path>> keyed;
  keyed.reserve(files.size());
  for (const auto& f : files) keyed.emplace_back(fs::relative(f, dir).generic_string(), f);
  std::sort(keyed.begin(), keyed.end());

  std::vector<RawDocument> raw;
  for (const auto& [rel, path] : keyed) {
    RawDocument d;
    d.id = rel.substr(0, rel.size() - 4);
    d.text = read_file(path);
    const auto parent = fs::path(rel).parent_path();
    if (!parent.empty()) d.label = parent.generic_string();
    raw.push_back(std::move(d));
  }
  return raw;
}

std::vector<RawDocument> read_jsonl(const fs::path& file) {
  std::ifstream in(file);
  if (!in) throw Error("unreadable", "cannot read " + file.string());
  std::vector<RawDocument> raw;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw Error("bad_jsonl", file.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
    if (!j.is_object() || !j.contains("id") || !j.contains("text") || !j["id"].is_string() || !j["text"].is_string()) {
      throw Error("bad_jsonl", file.string() + ":" + std::to_string(lineno) + ": expected {id, text}");
    }
    RawDocument d{j["id"].get<std::string>(), j["text"].get<std::string>(), std::nullopt};
    if (j.contains("label") && j["label"].is_string()) d.label = j["label"].get<std::string>();
    raw.push_back(std::move(d));
  }
  return raw;
}

}  // namespace

const std::vector<std::string>& builtin_stopwords() {
  static const std::vector<std::string> words = split_lines(data::stopwords_txt);
  return words;
}

std::vector<std::string> tokenize(std::string_view text, const TokenizerOptions& options) {
  return tokenize_with(text, options.min_token_length, load_stopwords(options));
}

// --- CorpusStats ------------------------------------------------------------

CorpusStats CorpusStats::from_documents(const std::vector<std::vector<std::string>>& token_lists) {
  CorpusStats s;
  s.k_ = token_lists.size();
  std::set<std::string> vocab;
  for (const auto& tokens : token_lists) vocab.insert(tokens.begin(), tokens.end());
  s.vocabulary_.assign(vocab.begin(), vocab.end());
  s.document_frequency_.assign(s.vocabulary_.size(), 0);
  s.postings_.assign(s.vocabulary_.size(), {});
  for (std::uint32_t d = 0; d < token_lists.size(); ++d) {
    std::set<std::string> distinct(token_lists[d].begin(), token_lists[d].end());
    for (const auto& t : distinct) {
      const auto id = *s.term_id(t);
      ++s.document_frequency_[id];
      s.postings_[id].push_back(d);
    }
  }
  return s;
}

CorpusStats CorpusStats::from_counts(std::size_t k, const std::map<std::string, std::size_t>& document_frequency) {
  CorpusStats s;
  s.k_ = k;
  for (const auto& [term, df] : document_frequency) {
    s.vocabulary_.push_back(term);
    s.document_frequency_.push_back(df);
  }
  return s;
}

CorpusStats::CorpusStats(const CorpusStats& other)
    : k_(other.k_),
      vocabulary_(other.vocabulary_),
      document_frequency_(other.document_frequency_),
      postings_(other.postings_) {
  std::lock_guard lock(other.cache_mutex_);
  cooccurrence_ = other.cooccurrence_;
}

CorpusStats& CorpusStats::operator=(const CorpusStats& other) {
  if (this == &other) return *this;
  CorpusStats copy(other);
  *this = std::move(copy);
  return *this;
}

CorpusStats::CorpusStats(CorpusStats&& other) noexcept
    : k_(other.k_),
      vocabulary_(std::move(other.vocabulary_)),
      document_frequency_(std::move(other.document_frequency_)),
      postings_(std::move(other.postings_)),
      cooccurrence_(std::move(other.cooccurrence_)) {}

CorpusStats& CorpusStats::operator=(CorpusStats&& other) noexcept {
  k_ = other.k_;
  vocabulary_ = std::move(other.vocabulary_);
  document_frequency_ = std::move(other.document_frequency_);
  postings_ = std::move(other.postings_);
  cooccurrence_ = std::move(other.cooccurrence_);
  return *this;
}

std::optional<TermId> CorpusStats::term_id(std::string_view term) const {
  auto it = std::lower_bound(vocabulary_.begin(), vocabulary_.end(), term);
  if (it == vocabulary_.end() || *it != term) return std::nullopt;
  return static_cast<TermId>(it - vocabulary_.begin());
}

std::size_t CorpusStats::document_frequency(std::string_view term) const {
  auto id = term_id(term);
  return id ? document_frequency_[*id] : 0;
}

std::size_t CorpusStats::cooccurrence(TermId a, TermId b) const {
  if (a > b) std::swap(a, b);
  if (a == b) return document_frequency_.at(a);
  if (postings_.empty()) throw Error("no_postings", "co-occurrence requires stats built from documents");
  {
    std::lock_guard lock(cache_mutex_);
    if (auto it = cooccurrence_.find({a, b}); it != cooccurrence_.end()) return it->second;
  }
  const auto& pa = postings_.at(a);
  const auto& pb = postings_.at(b);
  std::size_t count = 0;
  auto ia = pa.begin();
  auto ib = pb.begin();
  while (ia != pa.end() && ib != pb.end()) {
    if (*ia < *ib) {
      ++ia;
    } else if (*ib < *ia) {
      ++ib;
    } else {
      ++count;
      ++ia;
      ++ib;
    }
  }
  std::lock_guard lock(cache_mutex_);
  cooccurrence_.emplace(std::pair{a, b}, count);
  return count;
}

std::map<std::pair<TermId, TermId>, std::size_t> CorpusStats::cooccurrence_cache() const {
  std::lock_guard lock(cache_mutex_);
  return cooccurrence_;
}

// --- vectorize / ingest -----------------------------------------------------

SparseVector vectorize(const std::vector<std::string>& tokens, const CorpusStats& stats) {
  std::map<TermId, std::size_t> tf;
  for (const auto& t : tokens) {
    if (auto id = stats.term_id(t)) ++tf[*id];
  }
  SparseVector v;
  const double k = static_cast<double>(stats.k());
  for (const auto& [id, count] : tf) {
    const double df = static_cast<double>(stats.document_frequency(id));
    const double w = static_cast<double>(count) * std::log(k / df);
    if (w > 0.0) v.entries.push_back({id, w});
  }
  if (v.entries.empty()) throw Error("degenerate_vector", "degenerate vector");
  return normalized(std::move(v));
}

const Document& Corpus::document(std::string_view id) const {
  auto it = index_of.find(std::string(id));
  if (it == index_of.end()) throw Error("unknown_document", "unknown document " + std::string(id));
  return documents[it->second];
}

std::shared_ptr<const Corpus> build_corpus(std::vector<RawDocument> raw, const TokenizerOptions& options,
                                           std::string source) {
  const auto stop = load_stopwords(options);
  auto corpus = std::make_shared<Corpus>();
  corpus->source = std::move(source);

  struct Pending {
    RawDocument raw;
    std::vector<std::string> tokens;
  };
  std::vector<Pending> pending;
  std::unordered_set<std::string> seen;
  for (auto& r : raw) {
    if (!seen.insert(r.id).second) throw Error("duplicate_document", "duplicate document id " + r.id);
    auto tokens = tokenize_with(r.text, options.min_token_length, stop);
    if (tokens.empty()) {
      corpus->warnings.push_back({r.id, "no tokens after stopword removal; skipped"});
      continue;
    }
    pending.push_back({std::move(r), std::move(tokens)});
  }

  // Dropping a degenerate document changes k and df, which can make another
  // document degenerate, so iterate until the stream is stable.
  for (;;) {
    if (pending.empty()) throw Error("empty_corpus", "corpus " + corpus->source + " contains no usable documents");
    std::vector<std::vector<std::string>> lists;
    lists.reserve(pending.size());
    for (const auto& p : pending) lists.push_back(p.tokens);
    CorpusStats stats = CorpusStats::from_documents(lists);

    std::vector<Document> docs;
    std::vector<Pending> kept;
    bool dropped = false;
    for (auto& p : pending) {
      try {
        Document d;
        d.vector = vectorize(p.tokens, stats);
        d.id = p.raw.id;
        d.tokens = p.tokens;
        d.label = p.raw.label;
        docs.push_back(std::move(d));
        kept.push_back(std::move(p));
      } catch (const Error&) {
        corpus->warnings.push_back({p.raw.id, "degenerate vector (every term occurs in every document); skipped"});
        dropped = true;
      }
    }
    if (!dropped) {
      for (std::size_t i = 0; i < docs.size(); ++i) {
        docs[i].ingest_index = i;
        corpus->index_of.emplace(docs[i].id, i);
      }
      corpus->documents = std::move(docs);
      corpus->stats = std::move(stats);
      return corpus;
    }
    pending = std::move(kept);
  }
}

std::shared_ptr<const Corpus> ingest_corpus(const fs::path& source, const TokenizerOptions& options) {
  if (!fs::exists(source)) throw Error("missing_path", "corpus path does not exist: " + source.string());
  std::vector<RawDocument> raw;
  if (fs::is_directory(source)) {
    raw = read_directory(source);
  } else if (source.extension() == ".jsonl") {
    raw = read_jsonl(source);
  } else {
    throw Error("bad_source", "expected a directory of .txt files or a .jsonl file: " + source.string());
  }
  if (raw.empty()) throw Error("empty_corpus", "no documents found in " + source.string());
  return build_corpus(std::move(raw), options, source.string());
}

}  // namespace specex
