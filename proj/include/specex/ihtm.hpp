#pragma once

// Incremental hierarchical topic model.
//
// The tree has a single root, inner topic nodes, and one doc_leaf per
// inserted document. Topic (and root) centroids are the L2-normalized sum of
// all descendant leaf vectors, accumulated in ingest order, so a centroid is a
// pure function of the leaf set beneath it.
//
// Insertion walks down from the root. At each level the document is compared
// with the centroids of the current node's topic children; if the best cosine
// reaches theta_new the walk descends into that child (ties go to the lowest
// created_at, then node_id), otherwise a new topic holding the document is
// created under the current node. A topic at max_depth takes the document as a
// direct leaf.

#include "specex/corpus.hpp"
#include "specex/sparse.hpp"

#include <json.hpp>

#include <cstdint>
#include <deque>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace specex {

enum class NodeKind { root, topic, doc_leaf };

std::string_view to_string(NodeKind kind) noexcept;
NodeKind node_kind_from_string(std::string_view s);

struct TopicNode {
  std::string node_id;
  NodeKind kind = NodeKind::topic;
  std::vector<std::string> children;  // kept sorted by node_id
  SparseVector centroid;              // root/topic only
  std::optional<std::string> doc_id;  // doc_leaf only
  std::size_t created_at = 0;
  std::string parent;  // empty for root; derived, not serialized
};

struct InsertParams {
  double theta_new = 0.3;
  std::size_t max_depth = 3;  // deepest topic level (root is level 0)
};

class ModelState {
 public:
  static constexpr std::string_view kRootId = "root";

  // Empty tree; every corpus document starts in the buffer.
  explicit ModelState(std::shared_ptr<const Corpus> corpus);

  const Corpus& corpus() const noexcept { return *corpus_; }
  const std::shared_ptr<const Corpus>& corpus_ptr() const noexcept { return corpus_; }

  const std::string& root_id() const noexcept { return root_id_; }
  const std::map<std::string, TopicNode, std::less<>>& nodes() const noexcept { return nodes_; }
  const TopicNode& node(std::string_view id) const;
  bool contains(std::string_view id) const { return nodes_.find(id) != nodes_.end(); }

  const std::deque<std::size_t>& buffer() const noexcept { return buffer_; }
  std::size_t insert_cursor() const noexcept { return insert_cursor_; }
  std::uint64_t version() const noexcept { return version_; }

  static std::string leaf_id(std::string_view doc_id);
  std::optional<std::string> leaf_of(std::string_view doc_id) const;

  // Queries
  std::vector<std::string> topic_ids() const;  // canonical (sorted) order
  std::vector<std::string> leaf_ids() const;
  std::vector<std::string> direct_leaves(std::string_view node_id) const;
  std::vector<std::string> descendant_doc_ids(std::string_view node_id) const;
  std::size_t depth_of(std::string_view node_id) const;  // root = 0
  std::size_t max_leaf_depth() const;                    // edges root -> deepest leaf
  std::size_t leaf_count() const;
  const SparseVector& leaf_vector(std::string_view leaf_node_id) const;

  // Low-level structural edits. They leave centroids stale; callers finish
  // with recompute_centroids / recompute_all_centroids.
  std::string add_topic(std::string_view parent_id, std::size_t created_at);
  void attach_leaf(std::size_t doc_index, std::string_view parent_id);
  std::string detach_leaf(std::string_view doc_id);  // returns old parent
  void move_node(std::string_view node_id, std::string_view new_parent);
  void splice_out(std::string_view topic_id);  // children go to the topic's parent
  void remove_empty_topics();
  void take_from_buffer(std::size_t doc_index);  // marks doc inserted
  void bump_version() noexcept { ++version_; }

  // Restores the centroid invariant for node_id and all of its ancestors.
  void recompute_centroids(std::string_view node_id);
  void recompute_all_centroids();

  // Canonical text: depth-first from the root, children in node_id order,
  // weights with 12 significant digits.
  std::string canonical_serialization() const;
  std::string digest() const;  // SHA-256 hex of canonical_serialization()

  nlohmann::json to_json() const;
  static ModelState from_json(const nlohmann::json& j, std::shared_ptr<const Corpus> corpus);

  // Throws Error("invalid_state") naming the first violated invariant.
  void validate() const;

 private:
  TopicNode& mutable_node(std::string_view id);
  std::string next_topic_id() const;
  SparseVector brute_force_centroid(std::string_view node_id) const;

  std::shared_ptr<const Corpus> corpus_;
  std::string root_id_;
  std::map<std::string, TopicNode, std::less<>> nodes_;
  std::deque<std::size_t> buffer_;
  std::size_t insert_cursor_ = 0;
  std::uint64_t version_ = 0;
};

// Places a document with the threshold descent described above, without any
// buffer or version bookkeeping. Returns the leaf's parent.
std::string place_document(ModelState& state, std::size_t doc_index, const InsertParams& params);

// Full insert: place, remove from buffer (advancing the cursor when the
// document was buffered), recompute centroids, bump the version.
ModelState insert_document(ModelState state, std::size_t doc_index, const InsertParams& params = {});

// Inserts the document at the head of the buffer. Unchanged if the buffer is empty.
ModelState insert_next(ModelState state, const InsertParams& params = {});

ModelState recompute_centroids(ModelState state, std::string_view node_id);

// Canonical 12-significant-digit rendering shared by digests and JSON.
std::string format_weight(double w);

}  // namespace specex
