#include "specex/synth.hpp"

#include "specex/error.hpp"
#include "specex/hash.hpp"

#include <algorithm>
#include <array>
#include <fstream>
#include <random>
#include <set>

#include <json.hpp>

namespace specex {

namespace {

constexpr std::array<const char*, 7> kLabels = {"comp.graphics",   "rec.autos",         "sci.space",
                                                "sci.med",         "rec.sport.hockey",  "talk.politics.guns",
                                                "soc.religion.christian"};

// Pronounceable, unique, never a stopword (all stopwords are real English words
// and these end in a consonant cluster no stopword uses).
std::vector<std::string> make_words(std::size_t count, std::mt19937_64& rng, std::set<std::string>& used) {
  static constexpr std::string_view onset = "bdfgklmnprstvz";
  static constexpr std::string_view vowel = "aeiou";
  static constexpr std::array<std::string_view, 6> coda = {"x", "rk", "nt", "sk", "lv", "mp"};
  const auto& stop = builtin_stopwords();
  std::vector<std::string> out;
  while (out.size() < count) {
    std::string w;
    const std::size_t syllables = 2 + rng() % 2;
    for (std::size_t s = 0; s < syllables; ++s) {
      w += onset[rng() % onset.size()];
      w += vowel[rng() % vowel.size()];
    }
    w += coda[rng() % coda.size()];
    if (std::find(stop.begin(), stop.end(), w) != stop.end()) continue;
    if (used.insert(w).second) out.push_back(std::move(w));
  }
  return out;
}

}  // namespace

std::vector<RawDocument> synthesize_corpus(const SynthOptions& o) {
  if (o.groups == 0 || o.groups > kLabels.size()) throw Error("invalid_config", "groups must lie in 1..7");
  if (o.min_tokens == 0 || o.max_tokens < o.min_tokens) throw Error("invalid_config", "bad token range");
  std::mt19937_64 rng(mix_seed(o.seed));
  std::set<std::string> used;
  const auto shared = make_words(o.shared_vocabulary, rng, used);
  std::vector<std::vector<std::string>> vocab;
  for (std::size_t g = 0; g < o.groups; ++g) vocab.push_back(make_words(o.group_vocabulary, rng, used));

  std::vector<double> zipf(o.group_vocabulary);
  for (std::size_t r = 0; r < zipf.size(); ++r) zipf[r] = 1.0 / static_cast<double>(r + 1);
  std::discrete_distribution<std::size_t> pick_topical(zipf.begin(), zipf.end());
  std::uniform_int_distribution<std::size_t> pick_shared(0, o.shared_vocabulary - 1);
  std::uniform_int_distribution<std::size_t> length(o.min_tokens, o.max_tokens);
  std::bernoulli_distribution topical(o.topical_share);

  std::vector<RawDocument> docs;
  for (std::size_t g = 0; g < o.groups; ++g) {
    for (std::size_t i = 0; i < o.docs_per_group; ++i) {
      RawDocument d;
      char id[16];
      std::snprintf(id, sizeof id, "%04zu", i);
      d.id = std::string(kLabels[g]) + "/" + id;
      d.label = kLabels[g];
      const auto n = length(rng);
      for (std::size_t t = 0; t < n; ++t) {
        if (!d.text.empty()) d.text += ' ';
        d.text += topical(rng) ? vocab[g][pick_topical(rng)] : shared[pick_shared(rng)];
      }
      docs.push_back(std::move(d));
    }
  }
  std::shuffle(docs.begin(), docs.end(), rng);
  return docs;
}

void write_jsonl(const std::filesystem::path& path, const std::vector<RawDocument>& docs) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("io_error", "cannot write " + path.string());
  for (const auto& d : docs) {
    nlohmann::json j = {{"id", d.id}, {"text", d.text}};
    if (d.label) j["label"] = *d.label;
    out << j.dump() << '\n';
  }
}

}  // namespace specex
