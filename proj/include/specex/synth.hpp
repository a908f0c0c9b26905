#pragma once

// Deterministic labelled corpora with a known topical structure: each group
// draws from its own Zipf-weighted vocabulary plus a shared background one.

#include "specex/corpus.hpp"

#include <cstdint>
#include <filesystem>
#include <vector>

namespace specex {

struct SynthOptions {
  std::size_t groups = 7;
  std::size_t docs_per_group = 40;
  std::size_t group_vocabulary = 40;
  std::size_t shared_vocabulary = 150;
  std::size_t min_tokens = 40;
  std::size_t max_tokens = 90;
  double topical_share = 0.55;  // probability a token comes from the group vocabulary
  std::uint64_t seed = 7;
};

// Documents in a seeded shuffled order; ids are "<label>/<nnnn>".
std::vector<RawDocument> synthesize_corpus(const SynthOptions& options = {});

void write_jsonl(const std::filesystem::path& path, const std::vector<RawDocument>& docs);

}  // namespace specex
