#include "specex/ihtm.hpp"

#include "specex/error.hpp"
#include "specex/hash.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <set>

namespace specex {

namespace {

constexpr std::string_view kLeafPrefix = "doc:";
constexpr double kCentroidTolerance = 1e-6;

void insert_sorted(std::vector<std::string>& v, std::string id) {
  auto it = std::lower_bound(v.begin(), v.end(), id);
  v.insert(it, std::move(id));
}

void erase_value(std::vector<std::string>& v, std::string_view id) {
  auto it = std::find(v.begin(), v.end(), id);
  if (it != v.end()) v.erase(it);
}

[[noreturn]] void invalid(const std::string& what) { throw Error("invalid_state", what); }

}  // namespace

std::string_view to_string(NodeKind kind) noexcept {
  switch (kind) {
    case NodeKind::root:
      return "root";
    case NodeKind::topic:
      return "topic";
    case NodeKind::doc_leaf:
      return "doc_leaf";
  }
  return "topic";
}

NodeKind node_kind_from_string(std::string_view s) {
  if (s == "root") return NodeKind::root;
  if (s == "topic") return NodeKind::topic;
  if (s == "doc_leaf") return NodeKind::doc_leaf;
  throw Error("bad_schema", "unknown node kind " + std::string(s));
}

std::string format_weight(double w) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.12g", w);
  return buf;
}

// --- ModelState ---------------------------------------------------------------

ModelState::ModelState(std::shared_ptr<const Corpus> corpus) : corpus_(std::move(corpus)), root_id_(kRootId) {
  if (!corpus_) throw Error("invalid_argument", "ModelState requires a corpus");
  TopicNode root;
  root.node_id = root_id_;
  root.kind = NodeKind::root;
  nodes_.emplace(root_id_, std::move(root));
  for (std::size_t i = 0; i < corpus_->size(); ++i) buffer_.push_back(i);
}

const TopicNode& ModelState::node(std::string_view id) const {
  auto it = nodes_.find(id);
  if (it == nodes_.end()) throw Error("unknown_node", "unknown node " + std::string(id));
  return it->second;
}

TopicNode& ModelState::mutable_node(std::string_view id) {
  auto it = nodes_.find(id);
  if (it == nodes_.end()) throw Error("unknown_node", "unknown node " + std::string(id));
  return it->second;
}

std::string ModelState::leaf_id(std::string_view doc_id) { return std::string(kLeafPrefix) + std::string(doc_id); }

std::optional<std::string> ModelState::leaf_of(std::string_view doc_id) const {
  auto id = leaf_id(doc_id);
  if (!contains(id)) return std::nullopt;
  return id;
}

std::vector<std::string> ModelState::topic_ids() const {
  std::vector<std::string> out;
  for (const auto& [id, n] : nodes_) {
    if (n.kind == NodeKind::topic) out.push_back(id);
  }
  return out;
}

std::vector<std::string> ModelState::leaf_ids() const {
  std::vector<std::string> out;
  for (const auto& [id, n] : nodes_) {
    if (n.kind == NodeKind::doc_leaf) out.push_back(id);
  }
  return out;
}

std::vector<std::string> ModelState::direct_leaves(std::string_view node_id) const {
  std::vector<std::string> out;
  for (const auto& c : node(node_id).children) {
    if (node(c).kind == NodeKind::doc_leaf) out.push_back(c);
  }
  return out;
}

std::vector<std::string> ModelState::descendant_doc_ids(std::string_view node_id) const {
  std::vector<std::string> out;
  std::vector<std::string_view> stack{node_id};
  while (!stack.empty()) {
    const auto& n = node(stack.back());
    stack.pop_back();
    if (n.kind == NodeKind::doc_leaf) {
      out.push_back(*n.doc_id);
    } else {
      for (const auto& c : n.children) stack.push_back(c);
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::size_t ModelState::depth_of(std::string_view node_id) const {
  std::size_t depth = 0;
  const TopicNode* n = &node(node_id);
  while (!n->parent.empty()) {
    ++depth;
    n = &node(n->parent);
  }
  return depth;
}

std::size_t ModelState::max_leaf_depth() const {
  std::size_t best = 0;
  for (const auto& [id, n] : nodes_) {
    if (n.kind == NodeKind::doc_leaf) best = std::max(best, depth_of(id));
  }
  return best;
}

std::size_t ModelState::leaf_count() const {
  return static_cast<std::size_t>(
      std::count_if(nodes_.begin(), nodes_.end(), [](const auto& kv) { return kv.second.kind == NodeKind::doc_leaf; }));
}

const SparseVector& ModelState::leaf_vector(std::string_view leaf_node_id) const {
  const auto& n = node(leaf_node_id);
  if (n.kind != NodeKind::doc_leaf) throw Error("invalid_argument", std::string(leaf_node_id) + " is not a leaf");
  return corpus_->document(*n.doc_id).vector;
}

std::string ModelState::next_topic_id() const {
  // One past the largest serial in use, so ids are a function of the tree.
  std::size_t max_serial = 0;
  for (const auto& [id, n] : nodes_) {
    if (n.kind == NodeKind::topic) max_serial = std::max<std::size_t>(max_serial, std::stoul(id.substr(1)));
  }
  char buf[32];
  std::snprintf(buf, sizeof buf, "t%07zu", max_serial + 1);
  return buf;
}

std::string ModelState::add_topic(std::string_view parent_id, std::size_t created_at) {
  auto& parent = mutable_node(parent_id);
  if (parent.kind == NodeKind::doc_leaf) throw Error("invalid_argument", "cannot add a topic under a leaf");
  TopicNode t;
  t.node_id = next_topic_id();
  t.kind = NodeKind::topic;
  t.created_at = created_at;
  t.parent = std::string(parent_id);
  insert_sorted(parent.children, t.node_id);
  auto id = t.node_id;
  nodes_.emplace(id, std::move(t));
  return id;
}

void ModelState::attach_leaf(std::size_t doc_index, std::string_view parent_id) {
  const auto& doc = corpus_->documents.at(doc_index);
  auto id = leaf_id(doc.id);
  if (contains(id)) throw Error("duplicate_document", "document " + doc.id + " is already in the tree");
  auto& parent = mutable_node(parent_id);
  if (parent.kind == NodeKind::doc_leaf) throw Error("invalid_argument", "cannot attach a leaf under a leaf");
  insert_sorted(parent.children, id);
  TopicNode leaf;
  leaf.node_id = id;
  leaf.kind = NodeKind::doc_leaf;
  leaf.doc_id = doc.id;
  leaf.created_at = insert_cursor_;
  leaf.parent = std::string(parent_id);
  nodes_.emplace(id, std::move(leaf));
}

std::string ModelState::detach_leaf(std::string_view doc_id) {
  auto id = leaf_id(doc_id);
  auto it = nodes_.find(id);
  if (it == nodes_.end()) throw Error("unknown_document", "document " + std::string(doc_id) + " is not in the tree");
  auto parent = it->second.parent;
  erase_value(mutable_node(parent).children, id);
  nodes_.erase(it);
  return parent;
}

void ModelState::move_node(std::string_view node_id, std::string_view new_parent) {
  auto& n = mutable_node(node_id);
  if (n.kind == NodeKind::root) throw Error("invalid_argument", "cannot move the root");
  auto& target = mutable_node(new_parent);
  if (target.kind == NodeKind::doc_leaf) throw Error("invalid_argument", "cannot move under a leaf");
  for (const TopicNode* a = &target;; a = &node(a->parent)) {
    if (a->node_id == node_id) throw Error("invalid_argument", "move would create a cycle");
    if (a->parent.empty()) break;
  }
  if (n.parent == new_parent) return;
  erase_value(mutable_node(n.parent).children, node_id);
  insert_sorted(target.children, std::string(node_id));
  n.parent = std::string(new_parent);
}

void ModelState::splice_out(std::string_view topic_id) {
  const auto& t = node(topic_id);
  if (t.kind != NodeKind::topic) throw Error("invalid_argument", "only topics can be spliced out");
  const auto parent = t.parent;
  const auto children = t.children;
  const auto own_id = t.node_id;
  for (const auto& c : children) move_node(c, parent);
  erase_value(mutable_node(parent).children, own_id);
  nodes_.erase(own_id);
}

void ModelState::remove_empty_topics() {
  bool changed = true;
  while (changed) {
    changed = false;
    for (auto it = nodes_.begin(); it != nodes_.end();) {
      if (it->second.kind == NodeKind::topic && it->second.children.empty()) {
        erase_value(mutable_node(it->second.parent).children, it->first);
        it = nodes_.erase(it);
        changed = true;
      } else {
        ++it;
      }
    }
  }
}

void ModelState::take_from_buffer(std::size_t doc_index) {
  auto it = std::find(buffer_.begin(), buffer_.end(), doc_index);
  if (it == buffer_.end()) return;
  buffer_.erase(it);
  ++insert_cursor_;
}

SparseVector ModelState::brute_force_centroid(std::string_view node_id) const {
  auto doc_ids = descendant_doc_ids(node_id);
  std::vector<std::size_t> indices;
  indices.reserve(doc_ids.size());
  for (const auto& d : doc_ids) indices.push_back(corpus_->index_of.at(d));
  std::sort(indices.begin(), indices.end());
  std::vector<const SparseVector*> vectors;
  vectors.reserve(indices.size());
  for (auto i : indices) vectors.push_back(&corpus_->documents[i].vector);
  return normalized(sum_vectors(vectors, corpus_->stats.vocabulary().size()));
}

void ModelState::recompute_centroids(std::string_view node_id) {
  std::string current(node_id);
  for (;;) {
    auto& n = mutable_node(current);
    if (n.kind != NodeKind::doc_leaf) n.centroid = brute_force_centroid(current);
    if (n.parent.empty()) break;
    current = n.parent;
  }
}

void ModelState::recompute_all_centroids() {
  for (auto& [id, n] : nodes_) {
    if (n.kind != NodeKind::doc_leaf) n.centroid = brute_force_centroid(id);
  }
}

std::string ModelState::canonical_serialization() const {
  std::string out;
  out.reserve(1 << 16);
  out += "{\"root_id\":";
  out += nlohmann::json(root_id_).dump();
  out += ",\"insert_cursor\":" + std::to_string(insert_cursor_);
  out += ",\"version\":" + std::to_string(version_);
  out += ",\"nodes\":[";
  bool first = true;
  std::vector<std::string_view> stack{root_id_};
  const auto& vocab = corpus_->stats.vocabulary();
  while (!stack.empty()) {
    const auto& n = node(stack.back());
    stack.pop_back();
    if (!first) out += ',';
    first = false;
    out += "{\"node_id\":" + nlohmann::json(n.node_id).dump();
    out += ",\"kind\":\"";
    out += to_string(n.kind);
    out += "\",\"children\":[";
    for (std::size_t i = 0; i < n.children.size(); ++i) {
      if (i) out += ',';
      out += nlohmann::json(n.children[i]).dump();
    }
    out += "],\"centroid\":{";
    for (std::size_t i = 0; i < n.centroid.entries.size(); ++i) {
      if (i) out += ',';
      out += nlohmann::json(vocab[n.centroid.entries[i].term]).dump();
      out += ':';
      out += format_weight(n.centroid.entries[i].weight);
    }
    out += '}';
    if (n.doc_id) out += ",\"doc_id\":" + nlohmann::json(*n.doc_id).dump();
    out += ",\"created_at\":" + std::to_string(n.created_at) + "}";
    for (auto it = n.children.rbegin(); it != n.children.rend(); ++it) stack.push_back(*it);
  }
  out += "]}";
  return out;
}

std::string ModelState::digest() const { return sha256_hex(canonical_serialization()); }

nlohmann::json ModelState::to_json() const {
  // The canonical text is itself valid JSON in the documented schema.
  return nlohmann::json::parse(canonical_serialization());
}

ModelState ModelState::from_json(const nlohmann::json& j, std::shared_ptr<const Corpus> corpus) {
  ModelState s(std::move(corpus));
  try {
    s.nodes_.clear();
    s.root_id_ = j.at("root_id").get<std::string>();
    s.insert_cursor_ = j.at("insert_cursor").get<std::size_t>();
    s.version_ = j.at("version").get<std::uint64_t>();
    for (const auto& jn : j.at("nodes")) {
      TopicNode n;
      n.node_id = jn.at("node_id").get<std::string>();
      n.kind = node_kind_from_string(jn.at("kind").get<std::string>());
      n.children = jn.at("children").get<std::vector<std::string>>();
      std::sort(n.children.begin(), n.children.end());
      if (jn.contains("doc_id")) n.doc_id = jn.at("doc_id").get<std::string>();
      n.created_at = jn.at("created_at").get<std::size_t>();
      s.nodes_.emplace(n.node_id, std::move(n));
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error("bad_schema", std::string("model state: ") + e.what());
  }
  if (!s.contains(s.root_id_)) throw Error("bad_schema", "root node missing");
  for (auto& [id, n] : s.nodes_) {
    for (const auto& c : n.children) {
      auto it = s.nodes_.find(c);
      if (it == s.nodes_.end()) throw Error("bad_schema", "dangling child " + c);
      it->second.parent = id;
    }
  }
  s.buffer_.clear();
  for (std::size_t i = 0; i < s.corpus_->size(); ++i) {
    if (!s.contains(leaf_id(s.corpus_->documents[i].id))) s.buffer_.push_back(i);
  }
  s.recompute_all_centroids();
  s.validate();
  return s;
}

void ModelState::validate() const {
  const auto& root = node(root_id_);
  if (root.kind != NodeKind::root || !root.parent.empty()) invalid("root must be kind root without parent");

  std::size_t roots = 0;
  std::set<std::string> docs_seen;
  for (const auto& [id, n] : nodes_) {
    if (n.node_id != id) invalid("node key mismatch at " + id);
    if (n.kind == NodeKind::root) ++roots;
    if (!std::is_sorted(n.children.begin(), n.children.end()) ||
        std::adjacent_find(n.children.begin(), n.children.end()) != n.children.end()) {
      invalid("children of " + id + " not sorted/unique");
    }
    for (const auto& c : n.children) {
      auto it = nodes_.find(c);
      if (it == nodes_.end()) invalid("dangling child " + c + " of " + id);
      if (it->second.parent != id) invalid("parent link mismatch for " + c);
    }
    if (n.kind != NodeKind::root) {
      auto pit = nodes_.find(n.parent);
      if (pit == nodes_.end()) invalid("missing parent for " + id);
      if (!std::binary_search(pit->second.children.begin(), pit->second.children.end(), id)) {
        invalid(id + " not listed under its parent");
      }
    }
    if (n.kind == NodeKind::doc_leaf) {
      if (!n.children.empty()) invalid("leaf " + id + " has children");
      if (!n.doc_id || id != leaf_id(*n.doc_id)) invalid("leaf " + id + " has inconsistent doc_id");
      if (!corpus_->index_of.contains(*n.doc_id)) invalid("leaf " + id + " references unknown document");
      if (!docs_seen.insert(*n.doc_id).second) invalid("document referenced twice: " + *n.doc_id);
      if (!n.centroid.empty()) invalid("leaf " + id + " carries a centroid");
    } else {
      if (n.doc_id) invalid("inner node " + id + " carries a doc_id");
      if (n.kind == NodeKind::topic && n.children.empty()) invalid("empty topic " + id);
    }
  }
  if (roots != 1) invalid("expected exactly one root");

  // Reachability from root implies acyclicity given single parents.
  std::size_t reached = 0;
  std::vector<std::string_view> stack{root_id_};
  while (!stack.empty()) {
    const auto& n = node(stack.back());
    stack.pop_back();
    if (++reached > nodes_.size()) invalid("cycle detected");
    for (const auto& c : n.children) stack.push_back(c);
  }
  if (reached != nodes_.size()) invalid("unreachable nodes present");

  for (const auto& [id, n] : nodes_) {
    if (n.kind == NodeKind::doc_leaf) continue;
    const auto expected = brute_force_centroid(id);
    const auto& actual = n.centroid;
    std::size_t ia = 0;
    std::size_t ie = 0;
    while (ia < actual.entries.size() || ie < expected.entries.size()) {
      double a = 0.0;
      double e = 0.0;
      if (ie == expected.entries.size() ||
          (ia < actual.entries.size() && actual.entries[ia].term < expected.entries[ie].term)) {
        a = actual.entries[ia++].weight;
      } else if (ia == actual.entries.size() || expected.entries[ie].term < actual.entries[ia].term) {
        e = expected.entries[ie++].weight;
      } else {
        a = actual.entries[ia++].weight;
        e = expected.entries[ie++].weight;
      }
      if (std::abs(a - e) > kCentroidTolerance) invalid("centroid of " + id + " out of tolerance");
    }
  }

  if (docs_seen.size() != insert_cursor_) invalid("leaf count differs from insert_cursor");
  if (insert_cursor_ + buffer_.size() != corpus_->size()) invalid("cursor + buffer differs from corpus size");
  for (auto i : buffer_) {
    if (docs_seen.contains(corpus_->documents[i].id)) invalid("buffered document already in tree");
  }
}

// --- insertion ----------------------------------------------------------------

std::string place_document(ModelState& state, std::size_t doc_index, const InsertParams& params) {
  const auto& doc = state.corpus().documents.at(doc_index);
  if (doc.vector.empty()) throw Error("empty_vector", "document " + doc.id + " has an empty vector");
  if (state.leaf_of(doc.id)) throw Error("duplicate_document", "document " + doc.id + " is already in the tree");

  std::string current = state.root_id();
  std::size_t depth = 0;
  for (;;) {
    if (depth >= params.max_depth && depth > 0) {
      state.attach_leaf(doc_index, current);
      return current;
    }
    const TopicNode* best = nullptr;
    double best_sim = -1.0;
    for (const auto& c : state.node(current).children) {
      const auto& child = state.node(c);
      if (child.kind != NodeKind::topic) continue;
      const double sim = dot(doc.vector, child.centroid);
      // children are visited in node_id order, so equal created_at keeps the smaller id
      if (!best || sim > best_sim || (sim == best_sim && child.created_at < best->created_at)) {
        best = &child;
        best_sim = sim;
      }
    }
    if (best && best_sim >= params.theta_new) {
      current = best->node_id;
      ++depth;
      continue;
    }
    auto topic = state.add_topic(current, state.insert_cursor());
    state.attach_leaf(doc_index, topic);
    return topic;
  }
}

ModelState insert_document(ModelState state, std::size_t doc_index, const InsertParams& params) {
  auto parent = place_document(state, doc_index, params);
  state.take_from_buffer(doc_index);
  state.recompute_centroids(parent);
  state.bump_version();
  return state;
}

ModelState insert_next(ModelState state, const InsertParams& params) {
  if (state.buffer().empty()) return state;
  const auto next = state.buffer().front();
  return insert_document(std::move(state), next, params);
}

ModelState recompute_centroids(ModelState state, std::string_view node_id) {
  state.recompute_centroids(node_id);
  return state;
}

}  // namespace specex
