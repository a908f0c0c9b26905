#include "fixtures.hpp"

#include "specex/hash.hpp"
#include "specex/ihtm.hpp"

#include <doctest.h>

#include <cmath>
#include <set>

using namespace specex;
using fixtures::error_code;

namespace {

// Test-side centroid: plain sum of descendant leaf vectors, then unit length.
std::map<TermId, double> oracle_centroid(const ModelState& s, const std::string& node) {
  std::map<TermId, double> sum;
  for (const auto& doc : s.descendant_doc_ids(node))
    for (const auto& e : s.corpus().document(doc).vector.entries) sum[e.term] += e.weight;
  double norm = 0.0;
  for (const auto& [t, w] : sum) norm += w * w;
  norm = std::sqrt(norm);
  for (auto& [t, w] : sum) w /= norm;
  return sum;
}

double max_centroid_error(const ModelState& s) {
  double worst = 0.0;
  std::vector<std::string> inner = s.topic_ids();
  inner.push_back(s.root_id());
  for (const auto& id : inner) {
    if (s.descendant_doc_ids(id).empty()) continue;
    const auto want = oracle_centroid(s, id);
    const auto& got = s.node(id).centroid;
    for (const auto& [t, w] : want) worst = std::max(worst, std::abs(got.weight(t) - w));
    for (const auto& e : got.entries)
      if (!want.count(e.term)) worst = std::max(worst, std::abs(e.weight));
  }
  return worst;
}

}  // namespace

TEST_CASE("sha256 matches the published test vectors") {
  CHECK(sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  CHECK(sha256_hex("") == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
}

TEST_CASE("an empty model has only the root and a full buffer") {
  const auto c = fixtures::corpus_of({{"a", "rocket orbit"}, {"b", "engine piston"}});
  ModelState s(c);
  CHECK(s.nodes().size() == 1);
  CHECK(s.buffer().size() == 2);
  CHECK(s.insert_cursor() == 0);
  CHECK(s.leaf_count() == 0);
  s.validate();
}

TEST_CASE("two token-disjoint documents open two topics under the root") {
  const auto c = fixtures::corpus_of({{"a", "rocket orbit launch"}, {"b", "engine piston cylinder"}});
  const auto s = fixtures::insert_all(c);
  CHECK(s.topic_ids().size() == 2);
  CHECK(s.leaf_count() == 2);
  CHECK(s.node(*s.leaf_of("a")).parent != s.node(*s.leaf_of("b")).parent);
  CHECK(s.insert_cursor() == 2);
  CHECK(s.buffer().empty());
  s.validate();
}

TEST_CASE("an identical document descends into the first one's topic") {
  const auto c = fixtures::corpus_of(
      {{"a", "rocket orbit launch"}, {"b", "rocket orbit launch"}, {"c", "engine piston cylinder"}});
  const auto s = fixtures::insert_all(c);
  const auto ta = s.node(*s.leaf_of("a")).parent;
  const auto tb = s.node(*s.leaf_of("b")).parent;
  CHECK(s.node(ta).parent == s.root_id());
  CHECK(s.node(tb).parent == ta);
  const auto tc = s.node(*s.leaf_of("c")).parent;
  CHECK(s.node(tc).parent == s.root_id());
  CHECK(tc != ta);

  InsertParams shallow;
  shallow.max_depth = 1;
  const auto flat = fixtures::insert_all(c, shallow);
  CHECK(flat.node(*flat.leaf_of("a")).parent == flat.node(*flat.leaf_of("b")).parent);
}

TEST_CASE("threshold extremes: above one never descends, zero always descends") {
  std::mt19937_64 rng(3);
  const auto c = fixtures::random_corpus(rng, 15, 10);
  InsertParams never;
  never.theta_new = 1.5;
  const auto flat = fixtures::insert_all(c, never);
  CHECK(flat.topic_ids().size() == 15);
  for (const auto& t : flat.topic_ids()) CHECK(flat.node(t).parent == flat.root_id());

  InsertParams always;
  always.theta_new = 0.0;
  always.max_depth = 1;
  const auto one = fixtures::insert_all(c, always);
  CHECK(one.topic_ids().size() == 1);
  CHECK(one.leaf_count() == 15);
}

TEST_CASE("leaf depth never exceeds max_depth + 1") {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    const auto c = fixtures::random_corpus(rng, 20, 6);
    InsertParams p;
    p.theta_new = std::uniform_real_distribution<double>(0.0, 0.5)(rng);
    p.max_depth = 1 + rng() % 4;
    const auto s = fixtures::insert_all(c, p);
    CHECK(s.max_leaf_depth() <= p.max_depth + 1);
    s.validate();
  }
}

TEST_CASE("centroids equal the normalized sum of descendant leaves") {
  std::mt19937_64 rng(17);
  for (int trial = 0; trial < 100; ++trial) {
    const auto c = fixtures::random_corpus(rng, 4 + rng() % 20, 4 + rng() % 14);
    const auto s = fixtures::random_state(rng, c, rng() % 4);
    CHECK(max_centroid_error(s) < 1e-9);
  }
}

TEST_CASE("a topic over a single leaf has that leaf's vector as centroid") {
  const auto c = fixtures::corpus_of({{"a", "rocket orbit launch"}, {"b", "engine piston cylinder"}});
  const auto s = fixtures::insert_all(c);
  const auto parent = s.node(*s.leaf_of("a")).parent;
  const auto& want = c->document("a").vector;
  const auto& got = s.node(parent).centroid;
  REQUIRE(got.entries.size() == want.entries.size());
  for (std::size_t i = 0; i < want.entries.size(); ++i)
    CHECK(got.entries[i].weight == doctest::Approx(want.entries[i].weight).epsilon(1e-12));
}

TEST_CASE("insertion is deterministic and the digest tracks content") {
  const auto c = ingest_corpus(fixtures::desk_corpus());
  const auto a = fixtures::insert_all(c);
  const auto b = fixtures::insert_all(c);
  CHECK(a.leaf_count() == 280);
  CHECK(a.digest() == b.digest());
  CHECK(a.digest().size() == 64);

  ModelState partial(c);
  for (int i = 0; i < 10; ++i) partial = insert_next(std::move(partial));
  const auto before = partial.digest();
  const ModelState copy = partial;
  CHECK(copy.digest() == before);
  const auto after = insert_next(partial);
  CHECK(after.digest() != before);
  CHECK(after.insert_cursor() == 11);
}

TEST_CASE("JSON round trip preserves the digest") {
  std::mt19937_64 rng(23);
  for (int trial = 0; trial < 50; ++trial) {
    const auto c = fixtures::random_corpus(rng, 3 + rng() % 15, 10);
    const auto s = fixtures::random_state(rng, c, rng() % 3);
    const auto j = s.to_json();
    const auto back = ModelState::from_json(nlohmann::json::parse(j.dump()), c);
    CHECK(back.digest() == s.digest());
    CHECK(back.insert_cursor() == s.insert_cursor());
    CHECK(back.buffer() == s.buffer());
  }
}

TEST_CASE("insert_next on an exhausted buffer is a no-op") {
  const auto c = fixtures::corpus_of({{"a", "rocket orbit"}, {"b", "engine piston"}});
  const auto s = fixtures::insert_all(c);
  const auto again = insert_next(s);
  CHECK(again.digest() == s.digest());
  CHECK(again.insert_cursor() == s.insert_cursor());
}

TEST_CASE("validate rejects a stale centroid") {
  const auto c = fixtures::corpus_of({{"a", "rocket orbit launch"}, {"b", "engine piston cylinder"}, {"c", "rocket engine"}});
  auto s = fixtures::insert_all(c);
  s.validate();
  const auto leaf = *s.leaf_of("a");
  const auto other = s.node(*s.leaf_of("b")).parent;
  if (s.node(leaf).parent != other) {
    s.move_node(leaf, other);
    CHECK(error_code([&] { s.validate(); }) == "invalid_state");
    s.recompute_all_centroids();
    s.remove_empty_topics();
    s.recompute_all_centroids();
    s.validate();
  }
}

TEST_CASE("every document appears in exactly one place") {
  std::mt19937_64 rng(31);
  for (int trial = 0; trial < 100; ++trial) {
    const auto c = fixtures::random_corpus(rng, 5 + rng() % 15, 12);
    const auto s = fixtures::random_state(rng, c, rng() % 3);
    std::set<std::size_t> seen;
    for (const auto& l : s.leaf_ids()) seen.insert(c->index_of.at(*s.node(l).doc_id));
    for (auto b : s.buffer()) CHECK(seen.insert(b).second);
    CHECK(seen.size() == c->size());
  }
}
