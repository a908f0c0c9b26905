#include "specex/strategies.hpp"

#include "specex/error.hpp"
#include "specex/hash.hpp"
#include "specex/quality.hpp"

#include <algorithm>
#include <array>
#include <limits>
#include <random>

namespace specex {

std::string_view to_string(StrategyCategory c) noexcept {
  switch (c) {
    case StrategyCategory::merge:
      return "merge";
    case StrategyCategory::split:
      return "split";
    case StrategyCategory::outlier:
      return "outlier";
    case StrategyCategory::compact:
      return "compact";
    case StrategyCategory::reassign:
      return "reassign";
    case StrategyCategory::rebalance:
      return "rebalance";
    case StrategyCategory::identity:
      return "identity";
    case StrategyCategory::extension:
      return "extension";
  }
  return "identity";
}

void CancelToken::check() const {
  if (stop_.stop_requested()) throw Cancelled("stop requested");
  if (Clock::now() > deadline_) throw Cancelled("budget exceeded");
}

bool CancelToken::expired() const { return stop_.stop_requested() || Clock::now() > deadline_; }

namespace {

double param(const StrategyContext& ctx, std::string_view name) {
  auto it = ctx.params.find(name);
  if (it == ctx.params.end()) throw Error("invalid_params", "missing strategy parameter " + std::string(name));
  return it->second;
}

StrategyResult unchanged(const ModelState& state, std::string detail) { return {state, false, std::move(detail)}; }

StrategyResult finish(ModelState state, std::string detail) {
  state.remove_empty_topics();
  state.recompute_all_centroids();
  state.bump_version();
  return {std::move(state), true, std::move(detail)};
}

std::size_t doc_index(const ModelState& s, const std::string& leaf) {
  return s.corpus().index_of.at(*s.node(leaf).doc_id);
}

double fit(const ModelState& s, const std::string& leaf) {
  return dot(s.leaf_vector(leaf), s.node(s.node(leaf).parent).centroid);
}

// Leaves whose parent is a topic, ordered by ingest index.
std::vector<std::string> topic_leaves(const ModelState& s) {
  std::vector<std::string> out;
  for (const auto& id : s.leaf_ids()) {
    if (s.node(s.node(id).parent).kind == NodeKind::topic) out.push_back(id);
  }
  std::sort(out.begin(), out.end(),
            [&](const std::string& a, const std::string& b) { return doc_index(s, a) < doc_index(s, b); });
  return out;
}

bool earlier(const TopicNode& a, const TopicNode& b) {
  return a.created_at != b.created_at ? a.created_at < b.created_at : a.node_id < b.node_id;
}

}  // namespace

namespace strategies {

ModelState move_leaf(ModelState state, std::string_view doc_id, std::string_view target_topic) {
  if (state.node(target_topic).kind == NodeKind::doc_leaf) {
    throw Error("invalid_argument", "move target must be a topic or the root");
  }
  const auto index = state.corpus().index_of.at(std::string(doc_id));
  state.detach_leaf(doc_id);
  state.attach_leaf(index, target_topic);
  state.remove_empty_topics();
  state.recompute_all_centroids();
  state.bump_version();
  return state;
}

StrategyResult merge_similar_siblings(const ModelState& state, const StrategyContext& ctx) {
  const double tau = param(ctx, "tau_merge");
  ModelState s = state;
  std::size_t merges = 0;
  for (;;) {
    ctx.cancel.check();
    const TopicNode* keep = nullptr;
    const TopicNode* drop = nullptr;
    double best = -std::numeric_limits<double>::infinity();
    for (const auto& [id, n] : s.nodes()) {
      if (n.kind == NodeKind::doc_leaf) continue;
      std::vector<const TopicNode*> kids;
      for (const auto& c : n.children) {
        if (s.node(c).kind == NodeKind::topic) kids.push_back(&s.node(c));
      }
      for (std::size_t i = 0; i < kids.size(); ++i) {
        for (std::size_t j = i + 1; j < kids.size(); ++j) {
          const double sim = dot(kids[i]->centroid, kids[j]->centroid);
          // pairs are scanned in id order, so strict '>' keeps the first on ties
          if (sim >= tau && sim > best) {
            best = sim;
            keep = earlier(*kids[i], *kids[j]) ? kids[i] : kids[j];
            drop = keep == kids[i] ? kids[j] : kids[i];
          }
        }
      }
    }
    if (!keep) break;
    const std::string keep_id = keep->node_id;
    const std::string drop_id = drop->node_id;
    for (const auto& c : std::vector<std::string>(s.node(drop_id).children)) s.move_node(c, keep_id);
    s.splice_out(drop_id);
    s.recompute_centroids(keep_id);
    ++merges;
  }
  if (merges == 0) return unchanged(state, "no sibling pair above tau_merge");
  return finish(std::move(s), std::to_string(merges) + " merge(s)");
}

StrategyResult split_incoherent_topic(const ModelState& state, const StrategyContext& ctx) {
  const auto iterations = static_cast<int>(param(ctx, "iterations"));
  const auto& stats = state.corpus().stats;

  std::vector<std::pair<double, std::string>> candidates;
  for (const auto& t : state.topic_ids()) {
    if (state.direct_leaves(t).size() >= 2) candidates.emplace_back(topic_coherence(state, t, stats), t);
  }
  std::sort(candidates.begin(), candidates.end());

  std::mt19937_64 rng(mix_seed(ctx.seed));
  for (const auto& [coherence, topic] : candidates) {
    ctx.cancel.check();
    const auto leaves = state.direct_leaves(topic);
    std::vector<const SparseVector*> vecs;
    for (const auto& l : leaves) vecs.push_back(&state.leaf_vector(l));

    // Seeded first center, second center is the leaf least similar to it.
    const std::size_t first = static_cast<std::size_t>(rng() % leaves.size());
    std::size_t second = first;
    double lowest = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < leaves.size(); ++i) {
      const double sim = dot(*vecs[i], *vecs[first]);
      if (i != first && sim < lowest) {
        lowest = sim;
        second = i;
      }
    }
    std::array<SparseVector, 2> centers{*vecs[first], *vecs[second]};
    std::vector<int> assign(leaves.size(), 0);
    const auto vocab = state.corpus().stats.vocabulary().size();
    for (int it = 0; it < iterations; ++it) {
      for (std::size_t i = 0; i < leaves.size(); ++i) {
        assign[i] = dot(*vecs[i], centers[1]) > dot(*vecs[i], centers[0]) ? 1 : 0;
      }
      for (int c = 0; c < 2; ++c) {
        std::vector<const SparseVector*> members;
        for (std::size_t i = 0; i < leaves.size(); ++i) {
          if (assign[i] == c) members.push_back(vecs[i]);
        }
        if (!members.empty()) centers[c] = normalized(sum_vectors(members, vocab));
      }
    }
    const auto moved = std::count(assign.begin(), assign.end(), 1);
    if (moved == 0 || moved == static_cast<long>(leaves.size())) continue;

    ModelState s = state;
    const auto parent = s.node(topic).parent;
    const auto sibling = s.add_topic(parent, s.insert_cursor());
    for (std::size_t i = 0; i < leaves.size(); ++i) {
      if (assign[i] == 1) s.move_node(leaves[i], sibling);
    }
    return finish(std::move(s), "split " + topic + " (" + std::to_string(leaves.size() - moved) + "/" +
                                    std::to_string(moved) + ")");
  }
  return unchanged(state, "no splittable topic");
}

StrategyResult remove_outlier_documents(const ModelState& state, const StrategyContext& ctx) {
  const double tau = param(ctx, "tau_out");
  std::vector<std::size_t> outliers;
  for (const auto& leaf : topic_leaves(state)) {
    if (fit(state, leaf) < tau) outliers.push_back(doc_index(state, leaf));
  }
  if (outliers.empty()) return unchanged(state, "no outliers below tau_out");

  ModelState s = state;
  for (auto i : outliers) s.detach_leaf(s.corpus().documents[i].id);
  s.remove_empty_topics();
  s.recompute_all_centroids();
  for (auto i : outliers) {
    ctx.cancel.check();
    const auto parent = place_document(s, i, ctx.insert);
    s.recompute_centroids(parent);
  }
  return finish(std::move(s), std::to_string(outliers.size()) + " outlier(s) reinserted");
}

StrategyResult compact_chains(const ModelState& state, const StrategyContext& ctx) {
  ModelState s = state;
  std::size_t spliced = 0;
  for (;;) {
    ctx.cancel.check();
    std::optional<std::string> target;
    for (const auto& [id, n] : s.nodes()) {
      if (n.kind == NodeKind::topic && n.children.size() == 1) {
        target = id;
        break;
      }
    }
    if (!target) break;
    s.splice_out(*target);
    ++spliced;
  }
  if (spliced == 0) return unchanged(state, "no single-child topics");
  return finish(std::move(s), std::to_string(spliced) + " topic(s) spliced");
}

StrategyResult reassign_misfit_document(const ModelState& state, const StrategyContext& ctx) {
  ctx.cancel.check();
  const auto leaves = topic_leaves(state);
  if (leaves.empty()) return unchanged(state, "no leaves under topics");
  std::string worst;
  double worst_fit = std::numeric_limits<double>::infinity();
  for (const auto& l : leaves) {
    const double f = fit(state, l);
    if (f < worst_fit) {
      worst_fit = f;
      worst = l;
    }
  }
  const auto& current = state.node(worst).parent;
  const TopicNode* best = nullptr;
  double best_sim = -std::numeric_limits<double>::infinity();
  for (const auto& t : state.topic_ids()) {
    if (t == current) continue;
    const auto& n = state.node(t);
    const double sim = dot(state.leaf_vector(worst), n.centroid);
    if (!best || sim > best_sim || (sim == best_sim && earlier(n, *best))) {
      best = &n;
      best_sim = sim;
    }
  }
  if (!best || best_sim <= worst_fit) return unchanged(state, "worst-fitting leaf already in its best topic");
  auto doc = *state.node(worst).doc_id;
  auto target = best->node_id;
  ModelState s = strategies::move_leaf(state, doc, target);
  return {std::move(s), true, "moved " + doc + " from " + current + " to " + target};
}

StrategyResult rebalance_small_topics(const ModelState& state, const StrategyContext& ctx) {
  const double min_size = param(ctx, "min_size");
  std::vector<std::string> small;
  std::vector<std::string> keep;
  for (const auto& t : state.topic_ids()) {
    (static_cast<double>(state.descendant_doc_ids(t).size()) < min_size ? small : keep).push_back(t);
  }
  if (small.empty()) return unchanged(state, "no topic below min_size");
  if (keep.empty()) return unchanged(state, "no topic large enough to absorb small ones");

  ModelState s = state;
  std::vector<std::size_t> orphans;
  for (const auto& t : small) {
    for (const auto& d : s.descendant_doc_ids(t)) orphans.push_back(s.corpus().index_of.at(d));
  }
  std::sort(orphans.begin(), orphans.end());
  orphans.erase(std::unique(orphans.begin(), orphans.end()), orphans.end());
  for (auto i : orphans) s.detach_leaf(s.corpus().documents[i].id);
  s.remove_empty_topics();
  s.recompute_all_centroids();

  for (auto i : orphans) {
    ctx.cancel.check();
    const auto& v = s.corpus().documents[i].vector;
    const TopicNode* best = nullptr;
    double best_sim = -std::numeric_limits<double>::infinity();
    for (const auto& t : s.topic_ids()) {
      const auto& n = s.node(t);
      const double sim = dot(v, n.centroid);
      if (!best || sim > best_sim || (sim == best_sim && earlier(n, *best))) {
        best = &n;
        best_sim = sim;
      }
    }
    const auto target = best->node_id;
    s.attach_leaf(i, target);
    s.recompute_centroids(target);
  }
  return finish(std::move(s), std::to_string(small.size()) + " small topic(s) dissolved");
}

StrategyResult identity(const ModelState& state, const StrategyContext&) { return unchanged(state, "identity"); }

}  // namespace strategies

const std::vector<StrategyDescriptor>& list_strategies() {
  static const std::vector<StrategyDescriptor> catalog = {
      {"merge_similar_siblings", "Merge similar sibling topics", {{"tau_merge", 0.6}}, StrategyCategory::merge},
      {"split_incoherent_topic", "Split least coherent topic", {{"iterations", 10}}, StrategyCategory::split},
      {"remove_outlier_documents", "Reinsert outlier documents", {{"tau_out", 0.15}}, StrategyCategory::outlier},
      {"compact_chains", "Compact single-child chains", {}, StrategyCategory::compact},
      {"reassign_misfit_document", "Reassign worst-fitting document", {}, StrategyCategory::reassign},
      {"rebalance_small_topics", "Dissolve small topics", {{"min_size", 2}}, StrategyCategory::rebalance},
      {"identity", "No change (forecast only)", {}, StrategyCategory::identity},
  };
  return catalog;
}

StrategyRegistry::StrategyRegistry() {
  const std::map<std::string, StrategyFn> fns = {
      {"merge_similar_siblings", strategies::merge_similar_siblings},
      {"split_incoherent_topic", strategies::split_incoherent_topic},
      {"remove_outlier_documents", strategies::remove_outlier_documents},
      {"compact_chains", strategies::compact_chains},
      {"reassign_misfit_document", strategies::reassign_misfit_document},
      {"rebalance_small_topics", strategies::rebalance_small_topics},
      {"identity", strategies::identity},
  };
  for (const auto& d : list_strategies()) register_strategy(d, fns.at(d.strategy_id));
}

void StrategyRegistry::register_strategy(StrategyDescriptor descriptor, StrategyFn fn) {
  if (entries_.contains(descriptor.strategy_id)) {
    throw Error("duplicate_strategy", "strategy already registered: " + descriptor.strategy_id);
  }
  auto id = descriptor.strategy_id;
  entries_.emplace(id, std::pair{std::move(descriptor), std::move(fn)});
  order_.push_back(std::move(id));
}

bool StrategyRegistry::contains(std::string_view id) const { return entries_.find(id) != entries_.end(); }

const StrategyDescriptor& StrategyRegistry::descriptor(std::string_view id) const {
  auto it = entries_.find(id);
  if (it == entries_.end()) throw Error("unknown_strategy", "unknown strategy " + std::string(id));
  return it->second.first;
}

std::vector<StrategyDescriptor> StrategyRegistry::descriptors() const {
  std::vector<StrategyDescriptor> out;
  for (const auto& id : order_) out.push_back(entries_.find(id)->second.first);
  return out;
}

StrategyResult StrategyRegistry::apply(const ModelState& state, std::string_view strategy_id,
                                       const StrategyParams& overrides, std::uint64_t seed, const InsertParams& insert,
                                       CancelToken cancel) const {
  auto it = entries_.find(strategy_id);
  if (it == entries_.end()) throw Error("unknown_strategy", "unknown strategy " + std::string(strategy_id));
  StrategyContext ctx;
  ctx.params = it->second.first.parameters;
  for (const auto& [k, v] : overrides) ctx.params[k] = v;
  ctx.seed = seed;
  ctx.insert = insert;
  ctx.cancel = std::move(cancel);
  return it->second.second(state, ctx);
}

StrategyResult apply_strategy(const ModelState& state, std::string_view strategy_id, const StrategyParams& params,
                              std::uint64_t seed, const InsertParams& insert) {
  static const StrategyRegistry registry;
  return registry.apply(state, strategy_id, params, seed, insert);
}

}  // namespace specex
