#pragma once

// Deterministic tree-manipulating optimization strategies.
//
// Every strategy is a pure function of (state, params, seed): it preserves the
// set of inserted documents, returns a state that passes validate(), and
// reports applied = false (with the state untouched) when it finds nothing to do.

#include "specex/ihtm.hpp"

#include <chrono>
#include <cstdint>
#include <functional>
#include <map>
#include <stop_token>
#include <string>
#include <string_view>
#include <vector>

namespace specex {

enum class StrategyCategory { merge, split, outlier, compact, reassign, rebalance, identity, extension };

std::string_view to_string(StrategyCategory c) noexcept;

using StrategyParams = std::map<std::string, double, std::less<>>;

struct StrategyDescriptor {
  std::string strategy_id;
  std::string display_name;
  StrategyParams parameters;  // defaults
  StrategyCategory category = StrategyCategory::identity;
};

struct StrategyResult {
  ModelState state;
  bool applied = false;
  std::string detail;
};

// Cancellation checkpoint handed to long-running work. `check()` throws
// Cancelled once a stop was requested or the deadline passed.
class CancelToken {
 public:
  using Clock = std::chrono::steady_clock;

  CancelToken() = default;
  CancelToken(std::stop_token stop, Clock::time_point deadline) : stop_(std::move(stop)), deadline_(deadline) {}

  void check() const;
  bool expired() const;
  bool stop_requested() const { return stop_.stop_requested(); }

 private:
  std::stop_token stop_;
  Clock::time_point deadline_ = Clock::time_point::max();
};

struct StrategyContext {
  StrategyParams params;  // merged over descriptor defaults
  std::uint64_t seed = 0;
  InsertParams insert;    // used when strategies reinsert documents
  CancelToken cancel;
};

using StrategyFn = std::function<StrategyResult(const ModelState&, const StrategyContext&)>;

// The seven built-ins, in catalog order.
const std::vector<StrategyDescriptor>& list_strategies();

// Built-ins plus anything added through register_strategy. Extension hooks
// (input transformations, algorithm modifications) plug in here.
class StrategyRegistry {
 public:
  StrategyRegistry();

  void register_strategy(StrategyDescriptor descriptor, StrategyFn fn);
  bool contains(std::string_view id) const;
  const StrategyDescriptor& descriptor(std::string_view id) const;
  std::vector<StrategyDescriptor> descriptors() const;

  StrategyResult apply(const ModelState& state, std::string_view strategy_id, const StrategyParams& overrides,
                       std::uint64_t seed, const InsertParams& insert = {}, CancelToken cancel = {}) const;

 private:
  std::map<std::string, std::pair<StrategyDescriptor, StrategyFn>, std::less<>> entries_;
  std::vector<std::string> order_;
};

// Convenience over a default registry holding only the built-ins.
StrategyResult apply_strategy(const ModelState& state, std::string_view strategy_id, const StrategyParams& params = {},
                              std::uint64_t seed = 0, const InsertParams& insert = {});

namespace strategies {

StrategyResult merge_similar_siblings(const ModelState& state, const StrategyContext& ctx);
StrategyResult split_incoherent_topic(const ModelState& state, const StrategyContext& ctx);
StrategyResult remove_outlier_documents(const ModelState& state, const StrategyContext& ctx);
StrategyResult compact_chains(const ModelState& state, const StrategyContext& ctx);
StrategyResult reassign_misfit_document(const ModelState& state, const StrategyContext& ctx);
StrategyResult rebalance_small_topics(const ModelState& state, const StrategyContext& ctx);
StrategyResult identity(const ModelState& state, const StrategyContext& ctx);

// Moves one leaf under another topic, then repairs centroids and empty topics.
ModelState move_leaf(ModelState state, std::string_view doc_id, std::string_view target_topic);

}  // namespace strategies

}  // namespace specex
