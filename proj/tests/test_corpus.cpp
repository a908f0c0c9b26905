#include "fixtures.hpp"

#include "specex/corpus.hpp"
#include "specex/error.hpp"
#include "specex/sparse.hpp"

#include <doctest.h>

#include <cmath>

using namespace specex;
using fixtures::error_code;

TEST_CASE("tokenizer lowercases, splits on punctuation and drops short words and stopwords") {
  const auto t = tokenize("The QUICK brown-fox; an ox jumps over the lazy dog's kennel 42 and 2024");
  const std::vector<std::string> want = {"quick", "brown", "fox", "jumps", "lazy", "dog", "kennel", "2024"};
  CHECK(t == want);
}

TEST_CASE("stopword list ships sorted and without duplicates") {
  const auto& s = builtin_stopwords();
  CHECK(s.size() > 100);
  CHECK(std::is_sorted(s.begin(), s.end()));
  CHECK(std::adjacent_find(s.begin(), s.end()) == s.end());
}

TEST_CASE("custom stopword file replaces the built-in list") {
  const auto dir = fixtures::temp_dir("stopfile");
  fixtures::write_file(dir / "stop.txt", "quick\nfox\n");
  TokenizerOptions o;
  o.stopword_file = dir / "stop.txt";
  CHECK(tokenize("the quick brown fox", o) == std::vector<std::string>{"the", "brown"});
}

TEST_CASE("directory ingestion keeps filename order and assigns ingest indices") {
  const auto dir = fixtures::temp_dir("ingest3");
  fixtures::write_file(dir / "b.txt", "orbital rocket launch");
  fixtures::write_file(dir / "a.txt", "engine piston cylinder");
  fixtures::write_file(dir / "c.txt", "hockey puck goalie");
  const auto c = ingest_corpus(dir);
  REQUIRE(c->size() == 3);
  CHECK(c->documents[0].id == "a");
  CHECK(c->documents[1].id == "b");
  CHECK(c->documents[2].id == "c");
  for (std::size_t i = 0; i < 3; ++i) CHECK(c->documents[i].ingest_index == i);
  CHECK(c->stats.k() == 3);
}

TEST_CASE("labels come from the parent directory") {
  const auto dir = fixtures::temp_dir("labels");
  fixtures::write_file(dir / "sci.space" / "1.txt", "orbital rocket launch");
  fixtures::write_file(dir / "rec.autos" / "1.txt", "engine piston cylinder");
  const auto c = ingest_corpus(dir);
  REQUIRE(c->size() == 2);
  CHECK(c->document("rec.autos/1").label == "rec.autos");
  CHECK(c->document("sci.space/1").label == "sci.space");
}

TEST_CASE("a stopword-only document is skipped with a warning") {
  const auto dir = fixtures::temp_dir("stoponly");
  fixtures::write_file(dir / "a.txt", "orbital rocket launch");
  fixtures::write_file(dir / "b.txt", "the and of which would");
  fixtures::write_file(dir / "c.txt", "engine piston cylinder");
  const auto c = ingest_corpus(dir);
  CHECK(c->size() == 2);
  REQUIRE(c->warnings.size() == 1);
  CHECK(c->warnings[0].document == "b");
  CHECK(c->documents[1].id == "c");
  CHECK(c->documents[1].ingest_index == 1);
}

TEST_CASE("ingestion errors") {
  CHECK(error_code([] { ingest_corpus("/nonexistent/specex/path"); }) == "missing_path");
  const auto empty = fixtures::temp_dir("emptydir");
  CHECK(error_code([&] { ingest_corpus(empty); }) == "empty_corpus");
  const auto dir = fixtures::temp_dir("badjsonl");
  fixtures::write_file(dir / "c.jsonl", "{\"id\": \"a\", \"text\": \"rocket orbit\"}\nnot json\n");
  CHECK(error_code([&] { ingest_corpus(dir / "c.jsonl"); }) == "bad_jsonl");
  CHECK(error_code([] {
          build_corpus({{"x", "rocket orbit", std::nullopt}, {"x", "engine piston", std::nullopt}});
        }) != "");
}

TEST_CASE("JSON-lines ingestion keeps file order and labels") {
  const auto dir = fixtures::temp_dir("jsonl");
  fixtures::write_file(dir / "c.jsonl",
                       "{\"id\": \"z\", \"text\": \"rocket orbit\", \"label\": \"space\"}\n"
                       "{\"id\": \"a\", \"text\": \"engine piston\"}\n");
  const auto c = ingest_corpus(dir / "c.jsonl");
  REQUIRE(c->size() == 2);
  CHECK(c->documents[0].id == "z");
  CHECK(c->documents[0].label == "space");
  CHECK_FALSE(c->documents[1].label.has_value());
}

TEST_CASE("tf-idf weights match hand arithmetic") {
  // k = 4, df(a) = 2, df(b) = 1; tokens {a, a, b}: raw weights 2 ln 2 and 1 ln 4.
  const auto stats = CorpusStats::from_counts(4, {{"a", 2}, {"b", 1}, {"c", 4}});
  const auto v = vectorize({"a", "a", "b"}, stats);
  const double wa = 2.0 * std::log(2.0);
  const double wb = 1.0 * std::log(4.0);
  const double norm = std::sqrt(wa * wa + wb * wb);
  CHECK(v.weight(*stats.term_id("a")) == doctest::Approx(wa / norm).epsilon(1e-12));
  CHECK(v.weight(*stats.term_id("b")) == doctest::Approx(wb / norm).epsilon(1e-12));
  CHECK(l2_norm(v) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("a universal term gets zero weight and alone is degenerate") {
  const auto stats = CorpusStats::from_counts(4, {{"a", 4}, {"b", 1}});
  CHECK(error_code([&] { vectorize({"a"}, stats); }) == "degenerate_vector");
  const auto v = vectorize({"a", "b"}, stats);
  CHECK(v.weight(*stats.term_id("a")) == 0.0);
  CHECK(v.weight(*stats.term_id("b")) == doctest::Approx(1.0));
}

TEST_CASE("identical token lists give identical vectors") {
  const auto c = fixtures::corpus_of({{"a", "rocket orbit launch"}, {"b", "rocket orbit launch"}, {"c", "engine piston"}});
  const auto& va = c->document("a").vector;
  const auto& vb = c->document("b").vector;
  REQUIRE(va.entries.size() == vb.entries.size());
  for (std::size_t i = 0; i < va.entries.size(); ++i) {
    CHECK(va.entries[i].term == vb.entries[i].term);
    CHECK(va.entries[i].weight == vb.entries[i].weight);
  }
}

TEST_CASE("self cosine is one and token-disjoint cosine is zero") {
  const auto c = fixtures::corpus_of({{"a", "rocket orbit launch"}, {"b", "engine piston cylinder"}, {"c", "rocket engine"}});
  for (const auto& d : c->documents) {
    CHECK(std::abs(cosine(d.vector, d.vector) - 1.0) < 1e-9);
    CHECK(std::abs(l2_norm(d.vector) - 1.0) < 1e-9);
  }
  CHECK(cosine(c->document("a").vector, c->document("b").vector) == 0.0);
  CHECK(cosine(c->document("a").vector, c->document("c").vector) > 0.0);
}

TEST_CASE("ingestion is deterministic") {
  const auto dir = fixtures::temp_dir("determinism");
  fixtures::write_file(dir / "a.txt", "orbital rocket launch rocket");
  fixtures::write_file(dir / "b.txt", "engine piston rocket");
  const auto c1 = ingest_corpus(dir);
  const auto c2 = ingest_corpus(dir);
  REQUIRE(c1->size() == c2->size());
  CHECK(c1->stats.vocabulary() == c2->stats.vocabulary());
  for (std::size_t i = 0; i < c1->size(); ++i) {
    CHECK(c1->documents[i].tokens == c2->documents[i].tokens);
    CHECK(c1->documents[i].vector.entries.size() == c2->documents[i].vector.entries.size());
  }
}

TEST_CASE("co-occurrence counts agree with a direct scan and respect df bounds") {
  std::mt19937_64 rng(11);
  const auto c = fixtures::random_corpus(rng, 12, 8);
  const auto& st = c->stats;
  for (TermId a = 0; a < st.vocabulary().size(); ++a) {
    CHECK(st.document_frequency(a) <= st.k());
    for (TermId b = 0; b < st.vocabulary().size(); ++b) {
      std::size_t both = 0;
      for (const auto& d : c->documents) {
        const auto has = [&](TermId t) {
          return std::find(d.tokens.begin(), d.tokens.end(), st.term(t)) != d.tokens.end();
        };
        if (has(a) && has(b)) ++both;
      }
      CHECK(st.cooccurrence(a, b) == both);
      CHECK(st.cooccurrence(a, b) <= std::min(st.document_frequency(a), st.document_frequency(b)));
    }
  }
}

TEST_CASE("the synthetic desk corpus has 280 labelled documents") {
  const auto c = ingest_corpus(fixtures::desk_corpus());
  CHECK(c->size() == 280);
  CHECK(c->warnings.empty());
  std::map<std::string, int> per_label;
  for (const auto& d : c->documents) ++per_label[d.label.value_or("")];
  CHECK(per_label.size() == 7);
  for (const auto& [label, n] : per_label) CHECK(n == 40);
}
