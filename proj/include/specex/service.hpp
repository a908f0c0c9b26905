#pragma once

// Sessions: one main model state, the speculation engine around it, an
// append-only provenance log, and the message handler that clients talk to.
// A Session is not thread-safe; the HTTP server serializes access to it.

#include "specex/corpus.hpp"
#include "specex/delta.hpp"
#include "specex/engine.hpp"
#include "specex/interact.hpp"
#include "specex/protocol.hpp"
#include "specex/quality.hpp"

#include <json.hpp>

#include <cstdint>
#include <deque>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace specex {

enum class TriggerMode { off, metric, every_buffer };
std::string_view to_string(TriggerMode m) noexcept;
TriggerMode trigger_mode_from_string(std::string_view s);  // accepts every-buffer and every_buffer

struct SessionConfig {
  SpeculationConfig speculation;
  TriggerMode trigger_mode = TriggerMode::metric;
  bool pause_on_speculation = true;
  // Wait for each batch inside step(); results are logged in sandbox order.
  bool synchronous = false;
  std::uint64_t seed = 0;
  std::size_t pattern_capacity = 10;
  std::size_t pattern_repeat = 3;
  std::size_t subscriber_queue = 256;
  TokenizerOptions tokenizer;

  nlohmann::json to_json() const;
  // Accepts session keys plus every SpeculationConfig key at the same level.
  void merge_json(const nlohmann::json& j);
};

struct ProvenanceEntry {
  std::uint64_t seq = 0;
  std::string kind;
  nlohmann::json payload = nlohmann::json::object();
  std::string digest_after;
  std::int64_t timestamp = 0;  // ms since epoch

  nlohmann::json to_json() const;
  static ProvenanceEntry from_json(const nlohmann::json& j);
};

const std::vector<std::string>& provenance_kinds();

// Drops wall-clock fields (timestamp, payload.timing) so two runs can be compared byte for byte.
nlohmann::json normalize_entry(const ProvenanceEntry& e);
std::string normalized_log(const std::vector<ProvenanceEntry>& entries);

// Throws Error("no_entries") for an empty file, Error("malformed_log") naming the line otherwise.
std::vector<ProvenanceEntry> read_provenance(const std::filesystem::path& path);
void write_provenance(const std::filesystem::path& path, const std::vector<ProvenanceEntry>& entries);

std::string corpus_digest(const Corpus& corpus);

struct QualityPoint {
  std::size_t cursor = 0;
  double score = 0.0;
  MetricMap raw;
};

struct InteractionOutcome {
  SemanticLevel level = SemanticLevel::L1;
  std::vector<DropTarget> drop_targets;
  double l1_latency_ms = 0.0;
  std::optional<std::string> user_move_sandbox;
  std::vector<std::string> batches;
};

class Session {
 public:
  // Ingests the corpus and logs the config and ingest entries.
  static std::unique_ptr<Session> create(const std::filesystem::path& corpus_path, SessionConfig config,
                                         std::shared_ptr<const StrategyRegistry> registry = nullptr,
                                         std::optional<std::filesystem::path> log_path = std::nullopt);
  Session(std::shared_ptr<const Corpus> corpus, SessionConfig config, std::shared_ptr<const StrategyRegistry> registry,
          std::string corpus_path, std::optional<std::filesystem::path> log_path);
  ~Session();
  Session(const Session&) = delete;
  Session& operator=(const Session&) = delete;

  const std::string& id() const noexcept { return id_; }
  const SessionConfig& config() const noexcept { return config_; }
  const ModelState& main() const noexcept { return main_; }
  const QualityVector& quality() const noexcept { return quality_; }
  const QualityHistory& history() const noexcept { return history_; }
  const std::vector<QualityPoint>& trajectory() const noexcept { return trajectory_; }
  const std::vector<ProvenanceEntry>& provenance() const noexcept { return provenance_; }
  const Speculator& speculator() const noexcept { return *speculator_; }
  const PatternState& pattern() const noexcept { return pattern_; }
  const std::vector<double>& l1_latencies() const noexcept { return l1_latencies_; }
  bool paused() const noexcept { return paused_; }
  std::size_t triggers() const noexcept { return triggers_; }

  // Inserts up to `count` buffered documents; returns the entries logged meanwhile.
  std::vector<ProvenanceEntry> step(std::size_t count);
  // Applies finished worker results (asynchronous mode).
  std::vector<ProvenanceEntry> poll();
  // Blocks until the batch finished and logs its results.
  std::vector<ProvenanceEntry> wait(const std::string& batch_id);

  // Schedules a batch over the main state; returns its id.
  std::string speculate(TriggerKind trigger, std::vector<SandboxDimensions> dimensions);
  std::string speculate_all(TriggerKind trigger = TriggerKind::manual);

  // The unresolved batch the session waits on, if any.
  std::optional<std::string> open_batch() const;
  const std::vector<RankedCandidate>& rank(const std::string& batch_id);

  void accept(const std::string& sandbox_id);
  bool reject(const std::string& sandbox_id);
  InteractionOutcome interact(const InteractionEvent& event);

  DeltaTree delta(const std::string& sandbox_id) const;
  nlohmann::json snapshot() const;
  nlohmann::json sandbox_summary(const std::string& sandbox_id) const;
  nlohmann::json batch_ready_payload(const std::string& batch_id);

  std::vector<Message> handle_message(const Message& message);
  std::vector<Message> handle_text(std::string_view text);

  std::uint64_t subscribe();
  void unsubscribe(std::uint64_t subscriber);
  std::vector<Message> drain(std::uint64_t subscriber);
  std::size_t dropped(std::uint64_t subscriber) const;

 private:
  struct RestoreTag {};
  Session(RestoreTag, std::shared_ptr<const Corpus> corpus, SessionConfig config,
          std::shared_ptr<const StrategyRegistry> registry, std::string corpus_path, std::string id);
  friend std::unique_ptr<Session> replay(const std::vector<ProvenanceEntry>& entries,
                                         std::shared_ptr<const StrategyRegistry> registry);

  void set_main(ModelState state);
  const ProvenanceEntry& log(std::string kind, nlohmann::json payload);
  void append(ProvenanceEntry entry);
  void record_quality();
  void reset_history();
  void log_created(const std::string& batch_id);
  void log_finished(const std::string& batch_id);
  void log_result(const std::string& sandbox_id);
  void push_batch_if_finished(const std::string& batch_id);
  void publish(Message m);
  bool should_fire(std::string& reason, double& drop);
  std::size_t mark() const noexcept { return provenance_.size(); }
  std::vector<ProvenanceEntry> since(std::size_t mark) const;

  std::string id_;
  SessionConfig config_;
  std::shared_ptr<const Corpus> corpus_;
  std::shared_ptr<const StrategyRegistry> registry_;
  std::string corpus_path_;
  ModelState main_;
  std::string main_digest_;
  QualityVector quality_;
  QualityHistory history_;
  std::vector<QualityPoint> trajectory_;
  std::unique_ptr<Speculator> speculator_;
  PatternState pattern_;
  std::vector<ProvenanceEntry> provenance_;
  std::optional<std::ofstream> log_file_;
  std::set<std::string> logged_created_;
  std::set<std::string> logged_finished_;
  std::set<std::string> pushed_batches_;
  std::vector<double> l1_latencies_;
  std::size_t triggers_ = 0;
  bool paused_ = false;

  struct Subscriber {
    std::deque<Message> queue;
    std::size_t dropped = 0;
  };
  std::map<std::uint64_t, Subscriber> subscribers_;
  std::uint64_t next_subscriber_ = 1;
};

// Re-executes the deterministic entries of a log. Throws
// Error("divergence", "divergence at seq N") at the first digest mismatch.
std::unique_ptr<Session> replay(const std::vector<ProvenanceEntry>& entries,
                                std::shared_ptr<const StrategyRegistry> registry = nullptr);
std::unique_ptr<Session> replay(const std::filesystem::path& log_path,
                                std::shared_ptr<const StrategyRegistry> registry = nullptr);

}  // namespace specex
