#include "specex/quality.hpp"

#include "specex/error.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>

namespace specex {

namespace {

double closeness(double value, double target) { return 1.0 / (1.0 + std::abs(value - target) / std::max(target, 1.0)); }

void fill_normalized(QualityVector& q) {
  const double k = static_cast<double>(std::max<std::size_t>(q.corpus_size, 2));
  const double t = static_cast<double>(target_topic_count(q.corpus_size));
  q.normalized.clear();
  q.normalized["topic_count"] = closeness(static_cast<double>(q.topic_count), t);
  q.normalized["mean_topic_size"] =
      q.topic_count == 0 ? 0.0 : closeness(q.mean_topic_size, static_cast<double>(q.corpus_size) / t);
  q.normalized["size_entropy"] =
      q.topic_count < 2 ? 0.0 : std::clamp(q.size_entropy / std::log(static_cast<double>(q.topic_count)), 0.0, 1.0);
  // PMI with add-one smoothing lies in [-ln k, ln 2k].
  const double lo = -std::log(k);
  const double hi = std::log(2.0 * k);
  q.normalized["coherence_pmi"] = std::clamp((q.coherence_pmi - lo) / (hi - lo), 0.0, 1.0);
  q.normalized["max_depth"] = 1.0 / (1.0 + std::abs(static_cast<double>(q.max_depth) - double(kTargetDepth)));
}

}  // namespace

double QualityVector::raw(std::string_view metric) const {
  if (metric == "topic_count") return static_cast<double>(topic_count);
  if (metric == "mean_topic_size") return mean_topic_size;
  if (metric == "size_entropy") return size_entropy;
  if (metric == "coherence_pmi") return coherence_pmi;
  if (metric == "max_depth") return static_cast<double>(max_depth);
  throw Error("unknown_metric", "unknown metric " + std::string(metric));
}

double QualityVector::oriented(std::string_view metric) const {
  const double t = static_cast<double>(target_topic_count(corpus_size));
  if (metric == "topic_count") return -std::abs(static_cast<double>(topic_count) - t);
  if (metric == "mean_topic_size") return -std::abs(mean_topic_size - static_cast<double>(corpus_size) / t);
  if (metric == "max_depth") return -std::abs(static_cast<double>(max_depth) - double(kTargetDepth));
  return raw(metric);
}

std::size_t target_topic_count(std::size_t k) noexcept {
  return std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(k)))));
}

std::vector<TermId> top_terms(const SparseVector& centroid, std::size_t n) {
  std::vector<SparseEntry> entries = centroid.entries;
  std::sort(entries.begin(), entries.end(), [](const SparseEntry& a, const SparseEntry& b) {
    return a.weight != b.weight ? a.weight > b.weight : a.term < b.term;
  });
  std::vector<TermId> out;
  for (std::size_t i = 0; i < std::min(n, entries.size()); ++i) out.push_back(entries[i].term);
  return out;
}

double pmi(const CorpusStats& stats, TermId a, TermId b, double smoothing) {
  const double k = static_cast<double>(stats.k());
  const double pa = static_cast<double>(stats.document_frequency(a)) / k;
  const double pb = static_cast<double>(stats.document_frequency(b)) / k;
  const double pab = (static_cast<double>(stats.cooccurrence(a, b)) + smoothing) / k;
  return std::log(pab / (pa * pb));
}

double topic_coherence(const ModelState& state, std::string_view topic_id, const CorpusStats& stats,
                       const PmiOptions& options) {
  const auto terms = top_terms(state.node(topic_id).centroid, options.top_terms);
  if (terms.size() < 2) return 0.0;
  double sum = 0.0;
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < terms.size(); ++i) {
    for (std::size_t j = i + 1; j < terms.size(); ++j) {
      sum += pmi(stats, terms[i], terms[j], options.smoothing);
      ++pairs;
    }
  }
  return sum / static_cast<double>(pairs);
}

QualityVector evaluate(const ModelState& state, const CorpusStats& stats, const PmiOptions& options) {
  QualityVector q;
  q.corpus_size = stats.k();
  const auto topics = state.topic_ids();
  q.topic_count = topics.size();
  q.max_depth = state.max_leaf_depth();

  std::vector<double> sizes;
  double coherence = 0.0;
  for (const auto& t : topics) {
    sizes.push_back(static_cast<double>(state.direct_leaves(t).size()));
    if (top_terms(state.node(t).centroid, options.top_terms).size() < 2) {
      q.notes.push_back("topic " + t + " has fewer than 2 top terms; coherence 0");
    }
    coherence += topic_coherence(state, t, stats, options);
  }
  if (!topics.empty()) {
    const double total = std::accumulate(sizes.begin(), sizes.end(), 0.0);
    q.mean_topic_size = total / static_cast<double>(topics.size());
    q.coherence_pmi = coherence / static_cast<double>(topics.size());
    double h = 0.0;
    if (total > 0.0) {
      for (double s : sizes) {
        if (s > 0.0) {
          const double p = s / total;
          h -= p * std::log(p);
        }
      }
    }
    q.size_entropy = std::max(0.0, h);
  }
  fill_normalized(q);
  return q;
}

std::vector<std::vector<double>> min_max_normalize(const std::vector<std::vector<double>>& rows) {
  if (rows.empty()) return {};
  const std::size_t cols = rows.front().size();
  std::vector<std::vector<double>> out(rows.size(), std::vector<double>(cols, 1.0));
  for (std::size_t c = 0; c < cols; ++c) {
    double lo = std::numeric_limits<double>::infinity();
    double hi = -std::numeric_limits<double>::infinity();
    for (const auto& r : rows) {
      lo = std::min(lo, r.at(c));
      hi = std::max(hi, r.at(c));
    }
    if (hi > lo) {
      for (std::size_t i = 0; i < rows.size(); ++i) out[i][c] = (rows[i][c] - lo) / (hi - lo);
    }
  }
  return out;
}

std::vector<MetricMap> relative_normalize(std::span<const QualityVector> vectors) {
  std::vector<std::vector<double>> rows;
  for (const auto& q : vectors) {
    std::vector<double> row;
    for (auto m : kMetricNames) row.push_back(q.oriented(m));
    rows.push_back(std::move(row));
  }
  const auto norm = min_max_normalize(rows);
  std::vector<MetricMap> out;
  for (const auto& row : norm) {
    MetricMap m;
    for (std::size_t i = 0; i < kMetricNames.size(); ++i) m[std::string(kMetricNames[i])] = row[i];
    out.push_back(std::move(m));
  }
  return out;
}

MetricMap equal_weights() {
  MetricMap w;
  for (auto m : kMetricNames) w[std::string(m)] = 1.0;
  return w;
}

void check_weights(const MetricMap& weights) {
  double total = 0.0;
  for (const auto& [m, w] : weights) {
    if (!(w >= 0.0) || !std::isfinite(w)) throw Error("invalid_weights", "metric weight for " + m + " must be >= 0");
    total += w;
  }
  if (total <= 0.0) throw Error("invalid_weights", "metric weights must not all be zero");
}

double weighted_score(const MetricMap& normalized, const MetricMap& weights) {
  double total = 0.0;
  double sum = 0.0;
  for (const auto& [m, w] : weights) {
    total += w;
    if (auto it = normalized.find(m); it != normalized.end()) sum += w * it->second;
  }
  return total > 0.0 ? sum / total : 0.0;
}

// --- history / trigger ------------------------------------------------------

QualityHistory::QualityHistory(std::size_t capacity) : capacity_(std::max<std::size_t>(capacity, 2)) {}

void QualityHistory::push(std::size_t insert_cursor, QualityVector quality) {
  if (!readings_.empty() && insert_cursor <= readings_.back().first) {
    throw Error("invalid_argument", "quality history cursor must increase strictly");
  }
  readings_.emplace_back(insert_cursor, std::move(quality));
  while (readings_.size() > capacity_) readings_.pop_front();
}

void QualityHistory::clear_to_latest() {
  while (readings_.size() > 1) readings_.pop_front();
}

TriggerDecision should_trigger(const QualityHistory& history, double tau, std::size_t window) {
  TriggerDecision d;
  const auto& r = history.readings();
  if (r.size() < 2) return d;
  const auto weights = equal_weights();
  const std::size_t n = std::min(window, r.size());
  const auto first = r.end() - static_cast<std::ptrdiff_t>(n);
  auto best = first;
  double best_score = weighted_score(first->second.normalized, weights);
  for (auto it = first; it != r.end(); ++it) {
    const double s = weighted_score(it->second.normalized, weights);
    if (s > best_score) {
      best_score = s;
      best = it;
    }
  }
  const auto& latest = r.back().second;
  d.drop = best_score - weighted_score(latest.normalized, weights);
  d.fire = d.drop > tau;

  std::string worst;
  double worst_decline = -std::numeric_limits<double>::infinity();
  for (auto m : kMetricNames) {
    const std::string key(m);
    const double decline = best->second.normalized.at(key) - latest.normalized.at(key);
    if (decline > worst_decline) {
      worst_decline = decline;
      worst = key;
    }
  }
  char buf[160];
  std::snprintf(buf, sizeof buf, "%s declined by %.4f (score drop %.4f, tau %.4f)", worst.c_str(), worst_decline,
                d.drop, tau);
  d.reason = buf;
  return d;
}

// --- consensus ranking --------------------------------------------------------

std::string_view to_string(ConsensusMethod m) noexcept {
  switch (m) {
    case ConsensusMethod::weighted_sum:
      return "weighted_sum";
    case ConsensusMethod::pareto_then_sum:
      return "pareto_then_sum";
    case ConsensusMethod::borda:
      return "borda";
  }
  return "weighted_sum";
}

ConsensusMethod consensus_method_from_string(std::string_view s) {
  if (s == "weighted_sum") return ConsensusMethod::weighted_sum;
  if (s == "pareto_then_sum") return ConsensusMethod::pareto_then_sum;
  if (s == "borda") return ConsensusMethod::borda;
  throw Error("invalid_config", "unknown consensus method " + std::string(s));
}

bool dominates(const MetricMap& a, const MetricMap& b, const std::vector<std::string>& metrics) {
  bool strictly = false;
  for (const auto& m : metrics) {
    const double va = a.at(m);
    const double vb = b.at(m);
    if (va < vb) return false;
    if (va > vb) strictly = true;
  }
  return strictly;
}

std::vector<RankedCandidate> consensus_rank(const std::vector<RankCandidate>& candidates, ConsensusMethod method,
                                            const MetricMap& weights,
                                            const std::map<std::string, double>& strategy_weights) {
  if (candidates.empty()) throw Error("empty_candidates", "consensus_rank needs at least one candidate");
  check_weights(weights);

  std::vector<std::string> metrics;
  for (const auto& [m, w] : weights) {
    if (w > 0.0) metrics.push_back(m);
  }

  std::vector<RankedCandidate> ranked;
  ranked.reserve(candidates.size());
  for (const auto& c : candidates) {
    for (const auto& m : metrics) {
      if (!c.normalized.contains(m)) throw Error("invalid_argument", "candidate " + c.id + " lacks metric " + m);
    }
    RankedCandidate r;
    r.id = c.id;
    r.strategy_id = c.strategy_id;
    double sw = 0.5;
    if (auto it = strategy_weights.find(c.strategy_id); it != strategy_weights.end()) sw = it->second;
    r.score = weighted_score(c.normalized, weights) * (0.5 + sw);
    ranked.push_back(std::move(r));
  }

  if (method == ConsensusMethod::pareto_then_sum) {
    std::vector<bool> assigned(candidates.size(), false);
    std::size_t remaining = candidates.size();
    for (std::size_t front = 0; remaining > 0; ++front) {
      std::vector<std::size_t> layer;
      for (std::size_t i = 0; i < candidates.size(); ++i) {
        if (assigned[i]) continue;
        bool dominated = false;
        for (std::size_t j = 0; j < candidates.size() && !dominated; ++j) {
          dominated = !assigned[j] && j != i && dominates(candidates[j].normalized, candidates[i].normalized, metrics);
        }
        if (!dominated) layer.push_back(i);
      }
      for (auto i : layer) {
        assigned[i] = true;
        ranked[i].front = front;
      }
      remaining -= layer.size();
    }
  } else if (method == ConsensusMethod::borda) {
    for (const auto& m : metrics) {
      for (std::size_t i = 0; i < candidates.size(); ++i) {
        std::size_t beaten = 0;
        for (std::size_t j = 0; j < candidates.size(); ++j) {
          if (candidates[j].normalized.at(m) < candidates[i].normalized.at(m)) ++beaten;
        }
        ranked[i].borda += static_cast<double>(beaten);
      }
    }
  }

  std::sort(ranked.begin(), ranked.end(), [method](const RankedCandidate& a, const RankedCandidate& b) {
    if (method == ConsensusMethod::pareto_then_sum && a.front != b.front) return a.front < b.front;
    if (method == ConsensusMethod::borda && a.borda != b.borda) return a.borda > b.borda;
    if (a.score != b.score) return a.score > b.score;
    return a.id < b.id;
  });
  return ranked;
}

}  // namespace specex
