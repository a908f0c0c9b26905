#pragma once

// Merged origin/candidate tree with per-node change annotations.
//
// Leaves match by doc_id. Topics match greedily on the Jaccard index of
// their descendant document sets: pairs at or above tau_match are taken in
// descending Jaccard order (ties by smaller origin id, then candidate id),
// each topic at most once. Roots always match.

#include "specex/ihtm.hpp"

#include <json.hpp>

#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace specex {

enum class ChangeKind { unchanged, added, removed, moved, modified };
std::string_view to_string(ChangeKind c) noexcept;
ChangeKind change_kind_from_string(std::string_view s);

struct DeltaNode {
  std::optional<std::string> origin_id;
  std::optional<std::string> candidate_id;
  NodeKind kind = NodeKind::topic;
  std::optional<std::string> doc_id;
  ChangeKind change = ChangeKind::unchanged;
  bool membership_changed = false;        // direct leaf set differs (matched inner nodes)
  std::optional<std::string> moved_from;  // origin parent id, for moved nodes
  std::vector<std::size_t> children;      // indices into DeltaTree::nodes
};

struct MatchPair {
  std::string origin;
  std::string candidate;
  double jaccard = 0.0;
};

struct DeltaSummary {
  std::size_t unchanged = 0;
  std::size_t added = 0;
  std::size_t removed = 0;
  std::size_t moved = 0;
  std::size_t modified = 0;

  std::size_t changes() const noexcept { return added + removed + moved + modified; }
  friend bool operator==(const DeltaSummary&, const DeltaSummary&) = default;
};

struct DeltaTree {
  std::vector<DeltaNode> nodes;
  std::size_t root = 0;
  DeltaSummary summary;
  std::vector<MatchPair> match_pairs;

  nlohmann::json to_json() const;
  static DeltaTree from_json(const nlohmann::json& j);
};

using LeafSets = std::map<std::string, std::set<std::string>>;

// Descendant doc_id sets of every topic (root excluded).
LeafSets topic_leaf_sets(const ModelState& state);
double jaccard(const std::set<std::string>& a, const std::set<std::string>& b);
std::vector<MatchPair> greedy_topic_matching(const LeafSets& origin, const LeafSets& candidate, double tau_match);
double matching_score(const std::vector<MatchPair>& pairs);

DeltaTree diff(const ModelState& origin, const ModelState& candidate, double tau_match = 0.5);

// Counts per change class, recomputed from the annotations.
DeltaSummary summarize(const DeltaTree& delta);

// Structural checks used by tests; returns human-readable violations.
std::vector<std::string> check_delta(const DeltaTree& delta, const ModelState& origin, const ModelState& candidate);

}  // namespace specex
