#pragma once

// Shared builders for tests: tiny corpora, hand-shaped trees, random states.

#include "specex/corpus.hpp"
#include "specex/error.hpp"
#include "specex/ihtm.hpp"
#include "specex/strategies.hpp"
#include "specex/synth.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include <unistd.h>

namespace fixtures {

using namespace specex;

inline std::shared_ptr<const Corpus> corpus_of(const std::vector<std::pair<std::string, std::string>>& docs) {
  std::vector<RawDocument> raw;
  for (const auto& [id, text] : docs) raw.push_back({id, text, std::nullopt});
  return build_corpus(std::move(raw));
}

inline ModelState insert_all(std::shared_ptr<const Corpus> corpus, InsertParams params = {}) {
  ModelState s(std::move(corpus));
  while (!s.buffer().empty()) s = insert_next(std::move(s), params);
  return s;
}

// A pool of short words; documents draw a handful so overlaps are frequent.
inline const std::vector<std::string>& word_pool() {
  static const std::vector<std::string> words = {"alpha", "bravo",  "charlie", "delta", "echo",  "foxtrot",
                                                 "golf",  "hotel",  "india",   "juliet", "kilo", "lima",
                                                 "mike",  "novem",  "oscar",   "papa",  "quebec", "romeo"};
  return words;
}

// Random corpus of `docs` documents over the first `vocab` pool words. Every
// document carries a unique filler word so no vector is degenerate.
inline std::shared_ptr<const Corpus> random_corpus(std::mt19937_64& rng, std::size_t docs, std::size_t vocab) {
  std::vector<RawDocument> raw;
  const auto& pool = word_pool();
  vocab = std::min(vocab, pool.size());
  for (std::size_t d = 0; d < docs; ++d) {
    std::string text = "uniq" + std::string(1, static_cast<char>('a' + d % 26)) + std::to_string(d);
    const std::size_t n = 2 + rng() % 5;
    for (std::size_t i = 0; i < n; ++i) text += " " + pool[rng() % vocab];
    raw.push_back({"d" + std::to_string(d), text, std::nullopt});
  }
  return build_corpus(std::move(raw));
}

// Inserts a random prefix of the corpus with a random threshold and depth,
// then optionally applies a few random strategies.
inline ModelState random_state(std::mt19937_64& rng, std::shared_ptr<const Corpus> corpus, std::size_t strategy_steps) {
  InsertParams params;
  params.theta_new = std::uniform_real_distribution<double>(0.05, 0.7)(rng);
  params.max_depth = 1 + rng() % 3;
  ModelState s(corpus);
  const std::size_t inserts = 1 + rng() % corpus->size();
  for (std::size_t i = 0; i < inserts; ++i) s = insert_next(std::move(s), params);
  static const StrategyRegistry registry;
  const auto ids = registry.descriptors();
  for (std::size_t i = 0; i < strategy_steps; ++i) {
    const auto& d = ids[rng() % ids.size()];
    s = registry.apply(s, d.strategy_id, {}, rng(), params).state;
  }
  return s;
}

// Builds a tree by hand: each (doc, parent) pair attaches a document, with
// topics created in the order they are first named.
inline ModelState hand_tree(std::shared_ptr<const Corpus> corpus, const std::vector<std::pair<std::string, std::string>>& topics,
                     const std::vector<std::pair<std::string, std::string>>& leaves) {
  ModelState s(corpus);
  std::map<std::string, std::string> ids = {{"root", s.root_id()}};
  std::size_t created = 0;
  for (const auto& [name, parent] : topics) ids[name] = s.add_topic(ids.at(parent), created++);
  for (const auto& [doc, parent] : leaves) {
    const auto idx = corpus->index_of.at(doc);
    s.take_from_buffer(idx);
    s.attach_leaf(idx, ids.at(parent));
  }
  s.recompute_all_centroids();
  s.validate();
  return s;
}

inline std::vector<std::string> doc_multiset(const ModelState& s) {
  std::vector<std::string> out;
  for (const auto& l : s.leaf_ids()) out.push_back(*s.node(l).doc_id);
  std::sort(out.begin(), out.end());
  return out;
}

inline std::filesystem::path temp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("specex-test-" + name + "-" + std::to_string(::getpid()));
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

inline void write_file(const std::filesystem::path& p, const std::string& text) {
  std::filesystem::create_directories(p.parent_path());
  std::ofstream(p) << text;
}

// The 280-document labelled corpus used for end-to-end runs, written once per process.
inline std::filesystem::path desk_corpus() {
  static const std::filesystem::path path = [] {
    auto dir = std::filesystem::temp_directory_path() / ("specex-test-desk-" + std::to_string(::getpid()));
    std::filesystem::create_directories(dir);
    auto p = dir / "desk.jsonl";
    write_jsonl(p, synthesize_corpus());
    return p;
  }();
  return path;
}

}  // namespace fixtures

namespace fixtures {

// Error code thrown by fn, or "" when it returns normally.
template <typename Fn>
std::string error_code(Fn&& fn) {
  try {
    fn();
  } catch (const specex::Error& e) {
    return e.code();
  }
  return "";
}

}  // namespace fixtures
