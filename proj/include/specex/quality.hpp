#pragma once

// Model quality monitor: per-state metric readings, the trigger decision over
// a sliding window, and consensus ranking of competing candidates.

#include "specex/corpus.hpp"
#include "specex/ihtm.hpp"

#include <array>
#include <cstddef>
#include <deque>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace specex {

inline constexpr std::array<std::string_view, 5> kMetricNames = {"topic_count", "mean_topic_size", "size_entropy",
                                                                 "coherence_pmi", "max_depth"};

using MetricMap = std::map<std::string, double, std::less<>>;

struct QualityVector {
  std::size_t topic_count = 0;
  double mean_topic_size = 0.0;  // mean number of direct leaves per topic
  double size_entropy = 0.0;     // Shannon entropy of the direct-leaf size distribution
  double coherence_pmi = 0.0;    // mean over topics of mean pairwise PMI of top terms
  std::size_t max_depth = 0;     // edges from root to the deepest leaf
  std::size_t corpus_size = 0;   // k used for the count/size targets
  std::vector<std::string> notes;
  // Context-free normalization into [0, 1], higher is better.
  MetricMap normalized;

  double raw(std::string_view metric) const;
  // Raw value re-oriented so that larger is better (targets become -|x - target|).
  double oriented(std::string_view metric) const;
};

struct PmiOptions {
  double smoothing = 1.0;  // added to the joint document count
  std::size_t top_terms = 10;
};

std::size_t target_topic_count(std::size_t k) noexcept;  // round(sqrt(k)), at least 1
inline constexpr std::size_t kTargetDepth = 2;

// Top-n centroid terms by descending weight, ties by term id.
std::vector<TermId> top_terms(const SparseVector& centroid, std::size_t n);

// ln(p(a,b) / (p(a) p(b))) with probabilities from document frequencies.
double pmi(const CorpusStats& stats, TermId a, TermId b, double smoothing);

// Mean PMI over all pairs of the topic's top terms; 0 with fewer than two terms.
double topic_coherence(const ModelState& state, std::string_view topic_id, const CorpusStats& stats,
                       const PmiOptions& options = {});

QualityVector evaluate(const ModelState& state, const CorpusStats& stats, const PmiOptions& options = {});

// Min-max normalization per column over the given rows; a constant column maps to 1.
std::vector<std::vector<double>> min_max_normalize(const std::vector<std::vector<double>>& rows);

// Min-max over oriented raw metrics of the given vectors.
std::vector<MetricMap> relative_normalize(std::span<const QualityVector> vectors);

// Sum of w_m * value_m with weights rescaled to sum to one.
double weighted_score(const MetricMap& normalized, const MetricMap& weights);
MetricMap equal_weights();
void check_weights(const MetricMap& weights);

class QualityHistory {
 public:
  explicit QualityHistory(std::size_t capacity = 10);

  void push(std::size_t insert_cursor, QualityVector quality);
  void clear_to_latest();
  std::size_t size() const noexcept { return readings_.size(); }
  std::size_t capacity() const noexcept { return capacity_; }
  const std::deque<std::pair<std::size_t, QualityVector>>& readings() const noexcept { return readings_; }

 private:
  std::size_t capacity_;
  std::deque<std::pair<std::size_t, QualityVector>> readings_;
};

struct TriggerDecision {
  bool fire = false;
  double drop = 0.0;
  std::string reason;
};

// Fires when the equal-weight score of the latest reading sits more than
// tau below the best score in the last `window` readings.
TriggerDecision should_trigger(const QualityHistory& history, double tau, std::size_t window);

enum class ConsensusMethod { weighted_sum, pareto_then_sum, borda };
std::string_view to_string(ConsensusMethod m) noexcept;
ConsensusMethod consensus_method_from_string(std::string_view s);

struct RankCandidate {
  std::string id;
  std::string strategy_id;
  MetricMap normalized;
};

struct RankedCandidate {
  std::string id;
  std::string strategy_id;
  double score = 0.0;   // boosted weighted sum
  std::size_t front = 0;  // pareto_then_sum only
  double borda = 0.0;     // borda only
};

// Total order, best first. `strategy_weights` missing an entry count as 0.5.
std::vector<RankedCandidate> consensus_rank(const std::vector<RankCandidate>& candidates, ConsensusMethod method,
                                            const MetricMap& weights,
                                            const std::map<std::string, double>& strategy_weights = {});

// a dominates b: no worse everywhere, strictly better somewhere (over the listed metrics).
bool dominates(const MetricMap& a, const MetricMap& b, const std::vector<std::string>& metrics);

}  // namespace specex
