#pragma once

// Headless sessions: an automatic accept policy stands in for the user so a
// whole corpus can be run, benchmarked and replayed without a client.

#include "specex/service.hpp"

#include <json.hpp>

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace specex {

struct AutoPolicy {
  enum class Kind { none, top1, random_accept, reject_all } kind = Kind::none;
  double p = 0.0;
  std::uint64_t seed = 0;

  // none | top1 | random:P | reject
  static AutoPolicy parse(std::string_view text, std::uint64_t seed = 0);
  std::string to_string() const;
};

struct Percentiles {
  std::size_t count = 0;
  double p50 = 0.0;
  double p95 = 0.0;
  double max = 0.0;
};

// Nearest-rank percentiles.
Percentiles percentiles(std::vector<double> values);

struct RunOptions {
  std::filesystem::path corpus;
  SessionConfig config;
  AutoPolicy policy;
  std::optional<std::filesystem::path> log_path;
  std::shared_ptr<const StrategyRegistry> registry;
};

struct RunResult {
  std::unique_ptr<Session> session;
  nlohmann::json results;
};

// Runs the corpus to exhaustion. pause_on_speculation follows the policy
// (none never pauses) and batches are awaited synchronously.
RunResult run_headless(const RunOptions& options);

struct BenchCell {
  std::size_t n = 7;
  std::size_t b = 10;
  AutoPolicy policy{AutoPolicy::Kind::reject_all};
};

struct BenchRow {
  BenchCell cell;
  std::size_t sandboxes = 0;
  Percentiles latency;
  std::size_t timed_out = 0;
  double final_quality = 0.0;
};

struct L1Probe {
  Percentiles sandbox_latency;      // honest strategies under the L1 budget
  Percentiles drop_target_latency;  // read-only drop-target rankings
  std::size_t timed_out = 0;
  std::size_t injected_timed_out = 0;
  std::size_t injected_total = 0;
  bool injected_ranked = false;
};

// Strategy that sleeps cooperatively for `delay` before returning the state unchanged.
StrategyFn delayed_identity(std::chrono::milliseconds delay);
std::shared_ptr<StrategyRegistry> registry_with_delayed(std::chrono::milliseconds delay,
                                                        const std::string& id = "delayed_identity");

std::vector<BenchRow> bench(const std::filesystem::path& corpus, const SessionConfig& base,
                            const std::vector<BenchCell>& cells);

// Every `stride` inserts runs one L1 batch of the honest strategies (plus
// the injected one when inject_delay is set) and one drop-target ranking.
L1Probe probe_l1(const std::filesystem::path& corpus, const SessionConfig& base, std::size_t stride,
                 std::optional<std::chrono::milliseconds> inject_delay);

std::string format_bench_table(const std::vector<BenchRow>& rows);
nlohmann::json bench_json(const std::vector<BenchRow>& rows, const std::optional<L1Probe>& probe);

}  // namespace specex
