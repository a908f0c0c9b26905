#pragma once

// Speculative execution engine.
//
// A Speculator owns every sandbox of a session. Each sandbox starts from an
// immutable copy of the main state, runs on the worker pool under the budget
// of its trigger level, and reports back through a message queue that only
// the owning control loop drains (collect / wait). Cancellation is
// cooperative: work checks its CancelToken at least once per document insert.

#include "specex/ihtm.hpp"
#include "specex/quality.hpp"
#include "specex/strategies.hpp"

#include <json.hpp>

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <stop_token>
#include <string>
#include <thread>
#include <vector>

namespace specex {

enum class TriggerKind { metric_decline, L1, L2, L3, manual };
std::string_view to_string(TriggerKind t) noexcept;
TriggerKind trigger_kind_from_string(std::string_view s);

enum class SandboxStatus { pending, running, ready, timed_out, cancelled, accepted, rejected };
std::string_view to_string(SandboxStatus s) noexcept;
SandboxStatus sandbox_status_from_string(std::string_view s);

// Lifecycle: pending -> running -> {ready, timed_out, cancelled} -> {accepted, rejected}.
// pending may also go straight to cancelled.
bool transition_allowed(SandboxStatus from, SandboxStatus to) noexcept;
bool is_terminal_run(SandboxStatus s) noexcept;  // ready, timed_out or cancelled
bool is_resolved(SandboxStatus s) noexcept;      // accepted or rejected

struct Budgets {
  std::chrono::milliseconds l1{500};
  std::chrono::milliseconds l2{5000};
  std::chrono::milliseconds l3{5000};
  std::chrono::milliseconds metric{5000};

  std::chrono::milliseconds for_trigger(TriggerKind t) const noexcept;
};

struct SpeculationConfig {
  std::size_t k = 0;  // corpus size, filled in at session creation
  std::size_t n = 7;  // strategies per batch
  std::size_t b = 10; // forecast horizon / buffer period
  Budgets budgets;
  std::size_t max_workers = 4;
  InsertParams insert;  // theta_new, max_depth
  double tau_trigger = 0.10;
  std::size_t window = 10;
  double tau_match = 0.5;
  double alpha = 0.3;
  ConsensusMethod method = ConsensusMethod::weighted_sum;
  MetricMap weights = equal_weights();
  // Per-strategy parameter overrides keyed by strategy_id.
  std::map<std::string, StrategyParams> strategy_params;
  // Strategies used for a batch; empty means the first n of the catalog.
  std::vector<std::string> strategies;

  void validate() const;
  std::vector<std::string> batch_strategies(const StrategyRegistry& registry) const;

  nlohmann::json to_json() const;
  // Missing fields keep their current values.
  void merge_json(const nlohmann::json& j);
};

struct LeafMove {
  std::string doc_id;
  std::string target_topic;

  friend bool operator==(const LeafMove&, const LeafMove&) = default;
};

struct SandboxDimensions {
  std::string strategy_id = "identity";
  std::size_t temporal_horizon = 0;
  // Strategy parameters, or the model parameters theta_new / max_depth.
  StrategyParams parameter_overrides;
  // Explicit leaf moves applied before the strategy (interaction sandboxes).
  std::vector<LeafMove> moves;

  nlohmann::json to_json() const;
  static SandboxDimensions from_json(const nlohmann::json& j);
};

struct Sandbox {
  std::string sandbox_id;
  std::string batch_id;
  std::string origin_digest;
  TriggerKind trigger = TriggerKind::manual;
  SandboxDimensions dimensions;
  SandboxStatus status = SandboxStatus::pending;
  std::optional<ModelState> result;
  std::optional<QualityVector> quality;
  double runtime_ms = 0.0;
  std::size_t created_at_cursor = 0;
  std::uint64_t seed = 0;
  bool strategy_applied = false;
  bool forecast_short = false;  // buffer held fewer documents than the horizon
  std::string detail;
  std::string status_reason;
  std::string result_digest;
};

using StrategyWeights = std::map<std::string, double>;

// w' = (1 - alpha) * w + alpha * [accepted]; unknown ids start at 0.5.
StrategyWeights update_strategy_weights(StrategyWeights weights, const std::string& strategy_id, bool accepted,
                                        double alpha);

struct SearchSpace {
  std::uint64_t sandboxes_total = 0;
  double full_option_paths_log10 = 0.0;
  double incremental_orders_log10 = 0.0;
  double all_trees_log10 = 0.0;
};

SearchSpace search_space_accounting(std::uint64_t k, std::uint64_t n, std::uint64_t b);

struct ForecastResult {
  ModelState state;
  std::size_t inserted = 0;
  bool short_buffer = false;
};

// Inserts the next min(horizon, |buffer|) buffered documents.
ForecastResult forecast(ModelState state, std::size_t horizon, const InsertParams& params = {},
                        const CancelToken& cancel = {});

// A sandbox before any work: pending, holding its own copy of the origin.
struct OpenSandbox {
  Sandbox sandbox;
  ModelState working;
};
OpenSandbox open_sandbox(const ModelState& state, SandboxDimensions dimensions, TriggerKind trigger = TriggerKind::manual);

struct SandboxOutcome {
  SandboxStatus status = SandboxStatus::ready;
  std::optional<ModelState> result;
  std::optional<QualityVector> quality;
  double runtime_ms = 0.0;
  bool strategy_applied = false;
  bool forecast_short = false;
  std::string detail;
};

// Runs one sandbox to completion on the calling thread: moves, strategy,
// forecast, evaluate. Pure in (origin, dimensions, seed, config).
SandboxOutcome execute_sandbox(const ModelState& origin, const SandboxDimensions& dimensions, std::uint64_t seed,
                               const SpeculationConfig& config, const StrategyRegistry& registry,
                               const CancelToken& cancel = {});

class WorkerPool {
 public:
  explicit WorkerPool(std::size_t workers);
  ~WorkerPool();
  WorkerPool(const WorkerPool&) = delete;
  WorkerPool& operator=(const WorkerPool&) = delete;

  void submit(std::function<void()> job);
  std::size_t size() const noexcept { return threads_.size(); }

 private:
  void loop(std::stop_token stop);

  std::mutex mutex_;
  std::condition_variable_any cv_;
  std::deque<std::function<void()>> jobs_;
  std::vector<std::jthread> threads_;
};

struct Batch {
  std::string batch_id;
  TriggerKind trigger = TriggerKind::manual;
  std::string origin_digest;
  std::size_t origin_cursor = 0;
  std::vector<std::string> sandbox_ids;
  std::vector<RankedCandidate> ranking;  // filled by rank()
};

struct AcceptResult {
  ModelState state;
  std::vector<std::string> rejected_siblings;
};

// Events produced while draining worker messages; the session turns them into
// provenance entries.
struct SandboxEvent {
  enum class Kind { started, ready, timed_out, cancelled } kind;
  std::string sandbox_id;
};

class Speculator {
 public:
  Speculator(SpeculationConfig config, std::shared_ptr<const StrategyRegistry> registry, std::uint64_t seed);
  ~Speculator();
  Speculator(const Speculator&) = delete;
  Speculator& operator=(const Speculator&) = delete;

  const SpeculationConfig& config() const noexcept { return config_; }
  const StrategyRegistry& registry() const noexcept { return *registry_; }

  // One dimension set per batch strategy, each with horizon b.
  std::vector<SandboxDimensions> strategy_dimensions() const;

  // Schedules a batch. A metric_decline/manual batch over the same origin as
  // an unresolved one is coalesced: the existing batch id is returned.
  std::string speculate(const ModelState& main, TriggerKind trigger, std::vector<SandboxDimensions> dimensions);

  // Runs a batch on the calling thread in sandbox order (deterministic mode).
  std::string speculate_inline(const ModelState& main, TriggerKind trigger, std::vector<SandboxDimensions> dimensions);

  // Applies finished worker messages; returns what changed, in message order.
  std::vector<SandboxEvent> collect();
  // Blocks until every sandbox of the batch has finished running (or its
  // budget plus a grace period elapsed, which counts as timed_out).
  std::vector<SandboxEvent> wait(const std::string& batch_id);

  // Ranks ready sandboxes of a batch against the batch origin.
  const std::vector<RankedCandidate>& rank(const std::string& batch_id);

  AcceptResult accept(const std::string& sandbox_id, const std::string& main_digest);
  // Returns false when the sandbox was already resolved (no-op).
  bool reject(const std::string& sandbox_id);

  // Marks every unresolved sandbox whose origin differs from main_digest as
  // cancelled (still running) or rejected (already finished).
  std::vector<std::string> invalidate_stale(const std::string& main_digest);

  const Sandbox& sandbox(const std::string& id) const;
  const Batch& batch(const std::string& id) const;
  const std::map<std::string, Sandbox>& sandboxes() const noexcept { return sandboxes_; }
  const std::vector<std::string>& batch_order() const noexcept { return batch_order_; }
  const StrategyWeights& strategy_weights() const noexcept { return weights_; }
  std::size_t sandboxes_created() const noexcept { return created_; }
  std::optional<std::string> open_batch() const;
  bool batch_finished(const std::string& batch_id) const;
  std::shared_ptr<const ModelState> origin(const std::string& batch_id) const;
  std::pair<std::uint64_t, std::uint64_t> next_serials() const noexcept { return {next_sandbox_, next_batch_}; }
  // Continues id numbering after a restore so new ids never collide with logged ones.
  void advance_serials(std::uint64_t next_sandbox, std::uint64_t next_batch);

 private:
  struct Message {
    std::string sandbox_id;
    bool started = false;
    SandboxOutcome outcome;
    std::chrono::steady_clock::time_point at;
  };

  std::string create_batch(const ModelState& main, TriggerKind trigger, std::vector<SandboxDimensions>& dims,
                           std::shared_ptr<const ModelState>& origin, bool& coalesced);
  void set_status(Sandbox& s, SandboxStatus to, std::string reason = {});
  std::vector<SandboxEvent> apply(Message m);
  void finish_outcome(Sandbox& s, SandboxOutcome outcome, std::vector<SandboxEvent>& events);

  SpeculationConfig config_;
  std::shared_ptr<const StrategyRegistry> registry_;
  std::uint64_t seed_;
  std::uint64_t next_sandbox_ = 1;
  std::uint64_t next_batch_ = 1;
  std::size_t created_ = 0;

  std::map<std::string, Sandbox> sandboxes_;
  std::map<std::string, Batch> batches_;
  std::vector<std::string> batch_order_;
  std::map<std::string, std::shared_ptr<const ModelState>> origins_;  // by batch
  std::map<std::string, std::stop_source> stops_;
  std::map<std::string, std::chrono::steady_clock::time_point> started_at_;
  StrategyWeights weights_;

  std::mutex inbox_mutex_;
  std::condition_variable inbox_cv_;
  std::deque<Message> inbox_;

  std::unique_ptr<WorkerPool> pool_;  // declared last: joins before the inbox dies
};

}  // namespace specex
