#include "specex/delta.hpp"

#include "specex/error.hpp"

#include <algorithm>
#include <functional>

namespace specex {

std::string_view to_string(ChangeKind c) noexcept {
  switch (c) {
    case ChangeKind::unchanged:
      return "unchanged";
    case ChangeKind::added:
      return "added";
    case ChangeKind::removed:
      return "removed";
    case ChangeKind::moved:
      return "moved";
    case ChangeKind::modified:
      return "modified";
  }
  return "unchanged";
}

ChangeKind change_kind_from_string(std::string_view s) {
  for (auto c : {ChangeKind::unchanged, ChangeKind::added, ChangeKind::removed, ChangeKind::moved,
                 ChangeKind::modified}) {
    if (to_string(c) == s) return c;
  }
  throw Error("bad_schema", "unknown change kind " + std::string(s));
}

LeafSets topic_leaf_sets(const ModelState& state) {
  LeafSets sets;
  for (const auto& t : state.topic_ids()) {
    auto docs = state.descendant_doc_ids(t);
    sets.emplace(t, std::set<std::string>(docs.begin(), docs.end()));
  }
  return sets;
}

double jaccard(const std::set<std::string>& a, const std::set<std::string>& b) {
  if (a.empty() && b.empty()) return 1.0;
  std::size_t inter = 0;
  auto ia = a.begin();
  auto ib = b.begin();
  while (ia != a.end() && ib != b.end()) {
    if (*ia < *ib) {
      ++ia;
    } else if (*ib < *ia) {
      ++ib;
    } else {
      ++inter;
      ++ia;
      ++ib;
    }
  }
  return static_cast<double>(inter) / static_cast<double>(a.size() + b.size() - inter);
}

std::vector<MatchPair> greedy_topic_matching(const LeafSets& origin, const LeafSets& candidate, double tau_match) {
  std::vector<MatchPair> pairs;
  for (const auto& [o, os] : origin) {
    for (const auto& [c, cs] : candidate) {
      const double j = jaccard(os, cs);
      if (j >= tau_match && j > 0.0) pairs.push_back({o, c, j});
    }
  }
  std::sort(pairs.begin(), pairs.end(), [](const MatchPair& a, const MatchPair& b) {
    if (a.jaccard != b.jaccard) return a.jaccard > b.jaccard;
    if (a.origin != b.origin) return a.origin < b.origin;
    return a.candidate < b.candidate;
  });
  std::set<std::string> used_o;
  std::set<std::string> used_c;
  std::vector<MatchPair> chosen;
  for (const auto& p : pairs) {
    if (used_o.contains(p.origin) || used_c.contains(p.candidate)) continue;
    used_o.insert(p.origin);
    used_c.insert(p.candidate);
    chosen.push_back(p);
  }
  return chosen;
}

double matching_score(const std::vector<MatchPair>& pairs) {
  double s = 0.0;
  for (const auto& p : pairs) s += p.jaccard;
  return s;
}

namespace {

std::set<std::string> direct_docs(const ModelState& s, const std::string& id) {
  std::set<std::string> out;
  for (const auto& l : s.direct_leaves(id)) out.insert(*s.node(l).doc_id);
  return out;
}

}  // namespace

DeltaTree diff(const ModelState& origin, const ModelState& candidate, double tau_match) {
  DeltaTree d;
  d.match_pairs = greedy_topic_matching(topic_leaf_sets(origin), topic_leaf_sets(candidate), tau_match);

  std::map<std::string, std::string> o2c{{origin.root_id(), candidate.root_id()}};
  std::map<std::string, std::string> c2o{{candidate.root_id(), origin.root_id()}};
  for (const auto& p : d.match_pairs) {
    o2c[p.origin] = p.candidate;
    c2o[p.candidate] = p.origin;
  }
  for (const auto& l : origin.leaf_ids()) {
    if (candidate.contains(l)) {
      o2c[l] = l;
      c2o[l] = l;
    }
  }

  // Candidate side first: every candidate node gets exactly one merged node.
  std::map<std::string, std::size_t> merged_of_candidate;
  std::map<std::string, std::size_t> merged_of_origin;
  std::function<std::size_t(const std::string&)> build = [&](const std::string& cid) -> std::size_t {
    const auto& cn = candidate.node(cid);
    DeltaNode n;
    n.candidate_id = cid;
    n.kind = cn.kind;
    n.doc_id = cn.doc_id;
    if (auto it = c2o.find(cid); it != c2o.end()) {
      const auto& oid = it->second;
      n.origin_id = oid;
      const auto& on = origin.node(oid);
      if (cn.kind != NodeKind::root) {
        auto parent_match = o2c.find(on.parent);
        const bool moved = parent_match == o2c.end() || parent_match->second != cn.parent;
        if (cn.kind != NodeKind::doc_leaf) n.membership_changed = direct_docs(origin, oid) != direct_docs(candidate, cid);
        if (moved) {
          n.change = ChangeKind::moved;
          n.moved_from = on.parent;
        } else if (n.membership_changed) {
          n.change = ChangeKind::modified;
        }
      } else {
        n.membership_changed = direct_docs(origin, oid) != direct_docs(candidate, cid);
        if (n.membership_changed) n.change = ChangeKind::modified;
      }
    } else {
      n.change = ChangeKind::added;
    }
    const std::size_t index = d.nodes.size();
    d.nodes.push_back(std::move(n));
    merged_of_candidate[cid] = index;
    if (d.nodes[index].origin_id) merged_of_origin[*d.nodes[index].origin_id] = index;
    for (const auto& c : cn.children) {
      const auto child = build(c);
      d.nodes[index].children.push_back(child);
    }
    return index;
  };
  d.root = build(candidate.root_id());

  // Origin-only nodes hang under the merged counterpart of their origin parent.
  std::vector<std::string> stack{origin.root_id()};
  while (!stack.empty()) {
    const auto oid = stack.back();
    stack.pop_back();
    const auto& on = origin.node(oid);
    if (!merged_of_origin.contains(oid)) {
      DeltaNode n;
      n.origin_id = oid;
      n.kind = on.kind;
      n.doc_id = on.doc_id;
      n.change = ChangeKind::removed;
      const std::size_t index = d.nodes.size();
      d.nodes.push_back(std::move(n));
      merged_of_origin[oid] = index;
      d.nodes[merged_of_origin.at(on.parent)].children.push_back(index);
    }
    for (auto it = on.children.rbegin(); it != on.children.rend(); ++it) stack.push_back(*it);
  }

  d.summary = summarize(d);
  return d;
}

DeltaSummary summarize(const DeltaTree& delta) {
  DeltaSummary s;
  for (const auto& n : delta.nodes) {
    switch (n.change) {
      case ChangeKind::unchanged:
        ++s.unchanged;
        break;
      case ChangeKind::added:
        ++s.added;
        break;
      case ChangeKind::removed:
        ++s.removed;
        break;
      case ChangeKind::moved:
        ++s.moved;
        break;
      case ChangeKind::modified:
        ++s.modified;
        break;
    }
  }
  return s;
}

std::vector<std::string> check_delta(const DeltaTree& delta, const ModelState& origin, const ModelState& candidate) {
  std::vector<std::string> v;
  if (summarize(delta) != delta.summary) v.push_back("summary differs from annotation tally");

  std::vector<std::size_t> seen(delta.nodes.size(), 0);
  std::vector<std::size_t> stack{delta.root};
  while (!stack.empty()) {
    const auto i = stack.back();
    stack.pop_back();
    if (++seen[i] > 1) {
      v.push_back("merged node reachable twice");
      break;
    }
    for (auto c : delta.nodes[i].children) stack.push_back(c);
  }
  if (std::count(seen.begin(), seen.end(), 0) != 0) v.push_back("unreachable merged node");

  std::map<std::string, std::size_t> doc_count;
  for (const auto& n : delta.nodes) {
    if (n.change == ChangeKind::added && n.origin_id) v.push_back("added node carries an origin id");
    if (n.change == ChangeKind::removed && n.candidate_id) v.push_back("removed node carries a candidate id");
    if (!n.origin_id && !n.candidate_id) v.push_back("merged node without ids");
    if (n.kind == NodeKind::doc_leaf) ++doc_count[*n.doc_id];
  }
  for (const auto& [doc, count] : doc_count) {
    if (count != 1) v.push_back("document " + doc + " appears " + std::to_string(count) + " times");
  }
  for (const auto& l : origin.leaf_ids()) {
    if (!doc_count.contains(*origin.node(l).doc_id)) v.push_back("origin document missing: " + l);
  }
  for (const auto& l : candidate.leaf_ids()) {
    if (!doc_count.contains(*candidate.node(l).doc_id)) v.push_back("candidate document missing: " + l);
  }
  const auto total = origin.nodes().size() + candidate.nodes().size();
  std::size_t matched = 0;
  for (const auto& n : delta.nodes) matched += (n.origin_id && n.candidate_id) ? 1 : 0;
  if (delta.nodes.size() != total - matched) v.push_back("merged node count inconsistent with matching");
  return v;
}

// --- JSON -----------------------------------------------------------------------

nlohmann::json DeltaTree::to_json() const {
  nlohmann::json nodes_j = nlohmann::json::array();
  for (const auto& n : nodes) {
    nlohmann::json j;
    j["origin_id"] = n.origin_id ? nlohmann::json(*n.origin_id) : nlohmann::json(nullptr);
    j["candidate_id"] = n.candidate_id ? nlohmann::json(*n.candidate_id) : nlohmann::json(nullptr);
    j["kind"] = std::string(to_string(n.kind));
    if (n.doc_id) j["doc_id"] = *n.doc_id;
    j["change"] = std::string(to_string(n.change));
    j["membership_changed"] = n.membership_changed;
    if (n.moved_from) j["moved_from"] = *n.moved_from;
    j["children"] = n.children;
    nodes_j.push_back(std::move(j));
  }
  nlohmann::json pairs = nlohmann::json::array();
  for (const auto& p : match_pairs) pairs.push_back({{"origin", p.origin}, {"candidate", p.candidate}, {"jaccard", p.jaccard}});
  return {{"root", root},
          {"nodes", nodes_j},
          {"summary",
           {{"unchanged", summary.unchanged},
            {"added", summary.added},
            {"removed", summary.removed},
            {"moved", summary.moved},
            {"modified", summary.modified}}},
          {"match_pairs", pairs}};
}

DeltaTree DeltaTree::from_json(const nlohmann::json& j) {
  DeltaTree d;
  try {
    d.root = j.at("root").get<std::size_t>();
    for (const auto& jn : j.at("nodes")) {
      DeltaNode n;
      if (!jn.at("origin_id").is_null()) n.origin_id = jn["origin_id"].get<std::string>();
      if (!jn.at("candidate_id").is_null()) n.candidate_id = jn["candidate_id"].get<std::string>();
      n.kind = node_kind_from_string(jn.at("kind").get<std::string>());
      if (jn.contains("doc_id")) n.doc_id = jn["doc_id"].get<std::string>();
      n.change = change_kind_from_string(jn.at("change").get<std::string>());
      n.membership_changed = jn.at("membership_changed").get<bool>();
      if (jn.contains("moved_from")) n.moved_from = jn["moved_from"].get<std::string>();
      n.children = jn.at("children").get<std::vector<std::size_t>>();
      d.nodes.push_back(std::move(n));
    }
    const auto& s = j.at("summary");
    d.summary = {s.at("unchanged").get<std::size_t>(), s.at("added").get<std::size_t>(),
                 s.at("removed").get<std::size_t>(), s.at("moved").get<std::size_t>(),
                 s.at("modified").get<std::size_t>()};
    for (const auto& p : j.at("match_pairs")) {
      d.match_pairs.push_back({p.at("origin").get<std::string>(), p.at("candidate").get<std::string>(),
                               p.at("jaccard").get<double>()});
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error("bad_schema", std::string("delta: ") + e.what());
  }
  return d;
}

}  // namespace specex
