#include "fixtures.hpp"

#include "specex/quality.hpp"
#include "specex/strategies.hpp"

#include <doctest.h>

#include <set>

using namespace specex;
using fixtures::error_code;

using fixtures::hand_tree;

TEST_CASE("the catalog holds seven strategies with distinct ids") {
  const auto& all = list_strategies();
  CHECK(all.size() == 7);
  std::set<std::string> ids;
  int identities = 0;
  for (const auto& d : all) {
    ids.insert(d.strategy_id);
    identities += d.category == StrategyCategory::identity;
  }
  CHECK(ids.size() == 7);
  CHECK(identities == 1);
  std::set<StrategyCategory> categories;
  for (const auto& d : all) categories.insert(d.category);
  CHECK(categories.size() == 7);
}

TEST_CASE("unknown strategies and duplicate registration are rejected") {
  const auto c = fixtures::corpus_of({{"a", "rocket orbit"}, {"b", "engine piston"}});
  const auto s = fixtures::insert_all(c);
  CHECK(error_code([&] { apply_strategy(s, "no_such_strategy"); }) == "unknown_strategy");
  StrategyRegistry r;
  CHECK(error_code([&] {
          r.register_strategy({"identity", "again", {}, StrategyCategory::extension}, strategies::identity);
        }) == "duplicate_strategy");
  r.register_strategy({"custom", "custom", {}, StrategyCategory::extension}, strategies::identity);
  CHECK(r.contains("custom"));
  CHECK(r.descriptors().size() == 8);
}

TEST_CASE("merging two sibling topics with identical centroids") {
  const auto c = fixtures::corpus_of(
      {{"a", "rocket orbit launch"}, {"b", "rocket orbit launch"}, {"c", "engine piston cylinder"}});
  const auto s = hand_tree(c, {{"t1", "root"}, {"t2", "root"}, {"t3", "root"}}, {{"a", "t1"}, {"b", "t2"}, {"c", "t3"}});
  CHECK(s.topic_ids().size() == 3);
  const auto r = apply_strategy(s, "merge_similar_siblings");
  CHECK(r.applied);
  CHECK(r.state.topic_ids().size() == 2);
  CHECK(fixtures::doc_multiset(r.state) == fixtures::doc_multiset(s));
  CHECK(r.state.node(*r.state.leaf_of("a")).parent == r.state.node(*r.state.leaf_of("b")).parent);
  r.state.validate();
}

TEST_CASE("compacting a root-t1-t2-leaf chain leaves depth one") {
  const auto c = fixtures::corpus_of({{"a", "rocket orbit launch"}, {"b", "engine piston"}});
  const auto s = hand_tree(c, {{"t1", "root"}, {"t2", "t1"}}, {{"a", "t2"}});
  CHECK(s.max_leaf_depth() == 3);
  const auto r = apply_strategy(s, "compact_chains");
  CHECK(r.applied);
  CHECK(r.state.max_leaf_depth() == 1);
  CHECK(r.state.leaf_of("a").has_value());
  CHECK(r.state.node(*r.state.leaf_of("a")).parent == r.state.root_id());
  r.state.validate();
}

TEST_CASE("the identity strategy changes nothing") {
  std::mt19937_64 rng(71);
  const auto c = fixtures::random_corpus(rng, 12, 10);
  const auto s = fixtures::random_state(rng, c, 0);
  const auto r = apply_strategy(s, "identity");
  CHECK_FALSE(r.applied);
  CHECK(r.state.digest() == s.digest());
}

TEST_CASE("a strategy with nothing to do reports applied = false and leaves the state alone") {
  const auto c = fixtures::corpus_of({{"a", "rocket orbit launch"}, {"b", "engine piston cylinder"}});
  const auto s = hand_tree(c, {{"t1", "root"}, {"t2", "root"}}, {{"a", "t1"}, {"b", "t2"}});
  const auto merged = apply_strategy(s, "merge_similar_siblings");
  CHECK_FALSE(merged.applied);
  CHECK(merged.state.digest() == s.digest());
  const auto compact = apply_strategy(s, "compact_chains");
  if (!compact.applied) CHECK(compact.state.digest() == s.digest());
}

TEST_CASE("reassign moves the worst-fitting leaf to its best topic") {
  const auto c = fixtures::corpus_of({{"a", "rocket orbit launch"},
                                      {"b", "rocket orbit shuttle"},
                                      {"c", "engine piston cylinder"},
                                      {"d", "engine piston sedan"},
                                      {"x", "rocket orbit launch shuttle"}});
  const auto s = hand_tree(c, {{"space", "root"}, {"cars", "root"}},
                           {{"a", "space"}, {"b", "space"}, {"c", "cars"}, {"d", "cars"}, {"x", "cars"}});
  const auto r = apply_strategy(s, "reassign_misfit_document");
  CHECK(r.applied);
  CHECK(r.state.node(*r.state.leaf_of("x")).parent == r.state.node(*r.state.leaf_of("a")).parent);
  r.state.validate();
}

TEST_CASE("rebalance dissolves singleton topics") {
  const auto c = fixtures::corpus_of({{"a", "rocket orbit launch"},
                                      {"b", "rocket orbit shuttle"},
                                      {"c", "engine piston cylinder"},
                                      {"d", "engine piston sedan"},
                                      {"x", "rocket orbit nasa"}});
  const auto s = hand_tree(c, {{"space", "root"}, {"cars", "root"}, {"lonely", "root"}},
                           {{"a", "space"}, {"b", "space"}, {"c", "cars"}, {"d", "cars"}, {"x", "lonely"}});
  const auto r = apply_strategy(s, "rebalance_small_topics");
  CHECK(r.applied);
  CHECK(r.state.topic_ids().size() == 2);
  CHECK(fixtures::doc_multiset(r.state) == fixtures::doc_multiset(s));
  r.state.validate();
}

TEST_CASE("split produces two children out of a mixed topic") {
  const auto c = fixtures::corpus_of({{"a", "rocket orbit launch"},
                                      {"b", "rocket orbit shuttle"},
                                      {"c", "engine piston cylinder"},
                                      {"d", "engine piston sedan"}});
  const auto s = hand_tree(c, {{"mixed", "root"}}, {{"a", "mixed"}, {"b", "mixed"}, {"c", "mixed"}, {"d", "mixed"}});
  const auto r = apply_strategy(s, "split_incoherent_topic", {}, 9);
  CHECK(r.applied);
  CHECK(r.state.topic_ids().size() > s.topic_ids().size());
  CHECK(fixtures::doc_multiset(r.state) == fixtures::doc_multiset(s));
  r.state.validate();
}

TEST_CASE("parameter overrides are honoured") {
  const auto c = fixtures::corpus_of(
      {{"a", "rocket orbit launch"}, {"b", "rocket orbit shuttle"}, {"c", "engine piston cylinder"}});
  const auto s = hand_tree(c, {{"t1", "root"}, {"t2", "root"}, {"t3", "root"}}, {{"a", "t1"}, {"b", "t2"}, {"c", "t3"}});
  CHECK_FALSE(apply_strategy(s, "merge_similar_siblings", {{"tau_merge", 0.99}}).applied);
  CHECK(apply_strategy(s, "merge_similar_siblings", {{"tau_merge", 0.1}}).applied);
}

TEST_CASE("every strategy keeps the state valid, conserves documents and is deterministic") {
  std::mt19937_64 rng(73);
  const auto& all = list_strategies();
  std::size_t cases = 0;
  while (cases < 1000) {
    const auto c = fixtures::random_corpus(rng, 2 + rng() % 24, 3 + rng() % 16);
    const auto s = fixtures::random_state(rng, c, rng() % 3);
    const auto& d = all[cases % all.size()];
    const std::uint64_t seed = rng();
    const auto r1 = apply_strategy(s, d.strategy_id, {}, seed);
    const auto r2 = apply_strategy(s, d.strategy_id, {}, seed);
    CHECK_NOTHROW(r1.state.validate());
    CHECK(fixtures::doc_multiset(r1.state) == fixtures::doc_multiset(s));
    CHECK(r1.state.buffer() == s.buffer());
    CHECK(r1.state.digest() == r2.state.digest());
    CHECK(r1.applied == r2.applied);
    if (!r1.applied) CHECK(r1.state.digest() == s.digest());
    ++cases;
  }
}

TEST_CASE("compact_chains and merge_similar_siblings are idempotent") {
  std::mt19937_64 rng(79);
  for (int trial = 0; trial < 500; ++trial) {
    const auto c = fixtures::random_corpus(rng, 2 + rng() % 24, 3 + rng() % 16);
    const auto s = fixtures::random_state(rng, c, rng() % 3);
    for (const auto* id : {"compact_chains", "merge_similar_siblings"}) {
      const auto once = apply_strategy(s, id).state;
      const auto twice = apply_strategy(once, id);
      CHECK(twice.state.digest() == once.digest());
      CHECK_FALSE(twice.applied);
    }
  }
}

TEST_CASE("move_leaf repairs centroids and drops emptied topics") {
  const auto c = fixtures::corpus_of({{"a", "rocket orbit launch"}, {"b", "engine piston cylinder"}});
  const auto s = hand_tree(c, {{"t1", "root"}, {"t2", "root"}}, {{"a", "t1"}, {"b", "t2"}});
  const auto target = s.node(*s.leaf_of("b")).parent;
  const auto moved = strategies::move_leaf(s, "a", target);
  moved.validate();
  CHECK(moved.topic_ids().size() == 1);
  CHECK(moved.node(*moved.leaf_of("a")).parent == target);
}

TEST_CASE("cancellation tokens stop work once expired") {
  std::stop_source src;
  CancelToken live(src.get_token(), CancelToken::Clock::now() + std::chrono::hours(1));
  CHECK_NOTHROW(live.check());
  src.request_stop();
  CHECK_THROWS_AS(live.check(), Cancelled);
  CancelToken late(std::stop_token{}, CancelToken::Clock::now() - std::chrono::milliseconds(1));
  CHECK(late.expired());
  CHECK_THROWS_AS(late.check(), Cancelled);
}
