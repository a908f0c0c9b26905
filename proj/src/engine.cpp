#include "specex/engine.hpp"

#include "specex/error.hpp"
#include "specex/hash.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <tuple>

namespace specex {

namespace {

using Clock = std::chrono::steady_clock;

constexpr auto kUnresponsiveGrace = std::chrono::milliseconds(250);

std::string serial_id(const char* prefix, std::uint64_t n) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s-%06llu", prefix, static_cast<unsigned long long>(n));
  return buf;
}

double elapsed_ms(Clock::time_point since) {
  return std::chrono::duration<double, std::milli>(Clock::now() - since).count();
}

}  // namespace

std::string_view to_string(TriggerKind t) noexcept {
  switch (t) {
    case TriggerKind::metric_decline:
      return "metric_decline";
    case TriggerKind::L1:
      return "L1";
    case TriggerKind::L2:
      return "L2";
    case TriggerKind::L3:
      return "L3";
    case TriggerKind::manual:
      return "manual";
  }
  return "manual";
}

TriggerKind trigger_kind_from_string(std::string_view s) {
  if (s == "metric_decline") return TriggerKind::metric_decline;
  if (s == "L1") return TriggerKind::L1;
  if (s == "L2") return TriggerKind::L2;
  if (s == "L3") return TriggerKind::L3;
  if (s == "manual") return TriggerKind::manual;
  throw Error("bad_schema", "unknown trigger " + std::string(s));
}

std::string_view to_string(SandboxStatus s) noexcept {
  switch (s) {
    case SandboxStatus::pending:
      return "pending";
    case SandboxStatus::running:
      return "running";
    case SandboxStatus::ready:
      return "ready";
    case SandboxStatus::timed_out:
      return "timed_out";
    case SandboxStatus::cancelled:
      return "cancelled";
    case SandboxStatus::accepted:
      return "accepted";
    case SandboxStatus::rejected:
      return "rejected";
  }
  return "pending";
}

SandboxStatus sandbox_status_from_string(std::string_view s) {
  for (auto st : {SandboxStatus::pending, SandboxStatus::running, SandboxStatus::ready, SandboxStatus::timed_out,
                  SandboxStatus::cancelled, SandboxStatus::accepted, SandboxStatus::rejected}) {
    if (to_string(st) == s) return st;
  }
  throw Error("bad_schema", "unknown sandbox status " + std::string(s));
}

bool transition_allowed(SandboxStatus from, SandboxStatus to) noexcept {
  using S = SandboxStatus;
  switch (from) {
    case S::pending:
      return to == S::running || to == S::cancelled;
    case S::running:
      return to == S::ready || to == S::timed_out || to == S::cancelled;
    case S::ready:
      return to == S::accepted || to == S::rejected;
    case S::timed_out:
    case S::cancelled:
      return to == S::rejected;
    case S::accepted:
    case S::rejected:
      return false;
  }
  return false;
}

bool is_terminal_run(SandboxStatus s) noexcept {
  return s == SandboxStatus::ready || s == SandboxStatus::timed_out || s == SandboxStatus::cancelled;
}

bool is_resolved(SandboxStatus s) noexcept { return s == SandboxStatus::accepted || s == SandboxStatus::rejected; }

std::chrono::milliseconds Budgets::for_trigger(TriggerKind t) const noexcept {
  switch (t) {
    case TriggerKind::L1:
      return l1;
    case TriggerKind::L2:
      return l2;
    case TriggerKind::L3:
      return l3;
    case TriggerKind::metric_decline:
    case TriggerKind::manual:
      return metric;
  }
  return metric;
}

// --- SpeculationConfig --------------------------------------------------------

void SpeculationConfig::validate() const {
  auto bad = [](const std::string& m) { throw Error("invalid_config", m); };
  if (n < 1) bad("n must be >= 1");
  if (b < 1) bad("b must be >= 1");
  if (budgets.l1.count() <= 0 || budgets.l2.count() <= 0 || budgets.l3.count() <= 0 || budgets.metric.count() <= 0) {
    bad("budgets must be > 0");
  }
  if (!(alpha > 0.0 && alpha < 1.0)) bad("alpha must lie in (0, 1)");
  if (window < 2) bad("window must be >= 2");
  if (insert.max_depth < 1) bad("max_depth must be >= 1");
  if (tau_trigger < 0.0) bad("tau_trigger must be >= 0");
  check_weights(weights);
}

std::vector<std::string> SpeculationConfig::batch_strategies(const StrategyRegistry& registry) const {
  if (!strategies.empty()) {
    for (const auto& s : strategies) registry.descriptor(s);
    return strategies;
  }
  const auto all = registry.descriptors();
  if (n > all.size()) {
    throw Error("invalid_config", "n = " + std::to_string(n) + " exceeds the " + std::to_string(all.size()) +
                                      " registered strategies");
  }
  std::vector<std::string> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(all[i].strategy_id);
  return out;
}

nlohmann::json SpeculationConfig::to_json() const {
  nlohmann::json j;
  j["k"] = k;
  j["n"] = n;
  j["b"] = b;
  j["budgets"] = {{"L1", budgets.l1.count()},
                  {"L2", budgets.l2.count()},
                  {"L3", budgets.l3.count()},
                  {"metric", budgets.metric.count()}};
  j["max_workers"] = max_workers;
  j["theta_new"] = insert.theta_new;
  j["max_depth"] = insert.max_depth;
  j["tau_trigger"] = tau_trigger;
  j["window"] = window;
  j["tau_match"] = tau_match;
  j["alpha"] = alpha;
  j["consensus"] = {{"method", std::string(to_string(method))}, {"weights", nlohmann::json(weights)}};
  nlohmann::json sp = nlohmann::json::object();
  for (const auto& [id, params] : strategy_params) sp[id] = nlohmann::json(params);
  j["strategies"] = sp;
  j["strategy_order"] = strategies;
  return j;
}

void SpeculationConfig::merge_json(const nlohmann::json& j) {
  try {
    if (j.contains("k")) k = j["k"].get<std::size_t>();
    if (j.contains("n")) n = j["n"].get<std::size_t>();
    if (j.contains("b")) b = j["b"].get<std::size_t>();
    if (j.contains("budgets")) {
      const auto& bj = j["budgets"];
      if (bj.contains("L1")) budgets.l1 = std::chrono::milliseconds(bj["L1"].get<long>());
      if (bj.contains("L2")) budgets.l2 = std::chrono::milliseconds(bj["L2"].get<long>());
      if (bj.contains("L3")) budgets.l3 = std::chrono::milliseconds(bj["L3"].get<long>());
      if (bj.contains("metric")) budgets.metric = std::chrono::milliseconds(bj["metric"].get<long>());
    }
    if (j.contains("max_workers")) max_workers = j["max_workers"].get<std::size_t>();
    if (j.contains("theta_new")) insert.theta_new = j["theta_new"].get<double>();
    if (j.contains("max_depth")) insert.max_depth = j["max_depth"].get<std::size_t>();
    if (j.contains("tau_trigger")) tau_trigger = j["tau_trigger"].get<double>();
    if (j.contains("window")) window = j["window"].get<std::size_t>();
    if (j.contains("tau_match")) tau_match = j["tau_match"].get<double>();
    if (j.contains("alpha")) alpha = j["alpha"].get<double>();
    if (j.contains("consensus")) {
      const auto& c = j["consensus"];
      if (c.contains("method")) method = consensus_method_from_string(c["method"].get<std::string>());
      if (c.contains("weights")) {
        weights.clear();
        for (const auto& [m, w] : c["weights"].items()) weights[m] = w.get<double>();
      }
    }
    if (j.contains("strategies")) {
      for (const auto& [id, params] : j["strategies"].items()) {
        auto& target = strategy_params[id];
        for (const auto& [name, v] : params.items()) target[name] = v.get<double>();
      }
    }
    if (j.contains("strategy_order")) strategies = j["strategy_order"].get<std::vector<std::string>>();
  } catch (const nlohmann::json::exception& e) {
    throw Error("invalid_config", std::string("config: ") + e.what());
  }
}

// --- dimensions ---------------------------------------------------------------

nlohmann::json SandboxDimensions::to_json() const {
  nlohmann::json moves_j = nlohmann::json::array();
  for (const auto& m : moves) moves_j.push_back({{"doc_id", m.doc_id}, {"target_topic", m.target_topic}});
  return {{"strategy_id", strategy_id},
          {"temporal_horizon", temporal_horizon},
          {"parameter_overrides", nlohmann::json(parameter_overrides)},
          {"moves", moves_j}};
}

SandboxDimensions SandboxDimensions::from_json(const nlohmann::json& j) {
  SandboxDimensions d;
  try {
    d.strategy_id = j.value("strategy_id", std::string("identity"));
    d.temporal_horizon = j.value("temporal_horizon", std::size_t{0});
    if (j.contains("parameter_overrides")) {
      for (const auto& [k, v] : j["parameter_overrides"].items()) d.parameter_overrides[k] = v.get<double>();
    }
    if (j.contains("moves")) {
      for (const auto& m : j["moves"]) {
        d.moves.push_back({m.at("doc_id").get<std::string>(), m.at("target_topic").get<std::string>()});
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error("bad_schema", std::string("dimensions: ") + e.what());
  }
  return d;
}

// --- pure operations ----------------------------------------------------------

StrategyWeights update_strategy_weights(StrategyWeights weights, const std::string& strategy_id, bool accepted,
                                        double alpha) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw Error("invalid_argument", "alpha must lie in (0, 1)");
  auto [it, inserted] = weights.try_emplace(strategy_id, 0.5);
  it->second = std::clamp((1.0 - alpha) * it->second + alpha * (accepted ? 1.0 : 0.0), 0.0, 1.0);
  return weights;
}

SearchSpace search_space_accounting(std::uint64_t k, std::uint64_t n, std::uint64_t b) {
  if (k == 0 || n == 0 || b == 0) throw Error("invalid_argument", "k, n and b must be >= 1");
  SearchSpace s;
  const auto batches = (k + b - 1) / b;
  s.sandboxes_total = batches * n;
  const double kd = static_cast<double>(k);
  s.full_option_paths_log10 = (kd / static_cast<double>(b)) * std::log10(static_cast<double>(n));
  s.incremental_orders_log10 = std::lgamma(kd + 1.0) / std::log(10.0);
  s.all_trees_log10 = (kd - 2.0) * std::log10(kd);
  return s;
}

ForecastResult forecast(ModelState state, std::size_t horizon, const InsertParams& params, const CancelToken& cancel) {
  ForecastResult r{std::move(state), 0, false};
  const std::size_t available = r.state.buffer().size();
  const std::size_t count = std::min(horizon, available);
  r.short_buffer = count < horizon;
  for (std::size_t i = 0; i < count; ++i) {
    cancel.check();
    r.state = insert_next(std::move(r.state), params);
    ++r.inserted;
  }
  return r;
}

OpenSandbox open_sandbox(const ModelState& state, SandboxDimensions dimensions, TriggerKind trigger) {
  OpenSandbox o{Sandbox{}, state};
  o.sandbox.origin_digest = state.digest();
  o.sandbox.dimensions = std::move(dimensions);
  o.sandbox.trigger = trigger;
  o.sandbox.created_at_cursor = state.insert_cursor();
  o.sandbox.status = SandboxStatus::pending;
  return o;
}

SandboxOutcome execute_sandbox(const ModelState& origin, const SandboxDimensions& dimensions, std::uint64_t seed,
                               const SpeculationConfig& config, const StrategyRegistry& registry,
                               const CancelToken& cancel) {
  const auto start = Clock::now();
  SandboxOutcome out;
  try {
    InsertParams insert = config.insert;
    StrategyParams params;
    if (auto it = config.strategy_params.find(dimensions.strategy_id); it != config.strategy_params.end()) {
      params = it->second;
    }
    for (const auto& [key, value] : dimensions.parameter_overrides) {
      if (key == "theta_new") {
        insert.theta_new = value;
      } else if (key == "max_depth") {
        insert.max_depth = static_cast<std::size_t>(value);
      } else {
        params[key] = value;
      }
    }

    ModelState state = origin;
    for (const auto& move : dimensions.moves) {
      cancel.check();
      state = strategies::move_leaf(std::move(state), move.doc_id, move.target_topic);
    }
    auto applied = registry.apply(state, dimensions.strategy_id, params, seed, insert, cancel);
    out.strategy_applied = applied.applied || !dimensions.moves.empty();
    out.detail = applied.detail;
    auto fc = forecast(std::move(applied.state), dimensions.temporal_horizon, insert, cancel);
    out.forecast_short = fc.short_buffer;
    cancel.check();
    out.quality = evaluate(fc.state, fc.state.corpus().stats);
    out.result = std::move(fc.state);
    out.status = SandboxStatus::ready;
  } catch (const Cancelled& c) {
    out.status = cancel.stop_requested() ? SandboxStatus::cancelled : SandboxStatus::timed_out;
    out.detail = c.what();
    out.result.reset();
    out.quality.reset();
  } catch (const Error& e) {
    out.status = SandboxStatus::cancelled;
    out.detail = std::string("failed: ") + e.what();
    out.result.reset();
    out.quality.reset();
  }
  out.runtime_ms = elapsed_ms(start);
  return out;
}

// --- WorkerPool ---------------------------------------------------------------

WorkerPool::WorkerPool(std::size_t workers) {
  threads_.reserve(workers);
  for (std::size_t i = 0; i < workers; ++i) {
    threads_.emplace_back([this](std::stop_token st) { loop(st); });
  }
}

WorkerPool::~WorkerPool() {
  for (auto& t : threads_) t.request_stop();
  cv_.notify_all();
  threads_.clear();
}

void WorkerPool::submit(std::function<void()> job) {
  {
    std::lock_guard lock(mutex_);
    jobs_.push_back(std::move(job));
  }
  cv_.notify_one();
}

void WorkerPool::loop(std::stop_token stop) {
  for (;;) {
    std::function<void()> job;
    {
      std::unique_lock lock(mutex_);
      if (!cv_.wait(lock, stop, [this] { return !jobs_.empty(); })) return;
      job = std::move(jobs_.front());
      jobs_.pop_front();
    }
    job();
  }
}

// --- Speculator ---------------------------------------------------------------

Speculator::Speculator(SpeculationConfig config, std::shared_ptr<const StrategyRegistry> registry, std::uint64_t seed)
    : config_(std::move(config)), registry_(std::move(registry)), seed_(seed) {
  config_.validate();
  if (!registry_) throw Error("invalid_argument", "Speculator requires a strategy registry");
  for (const auto& d : registry_->descriptors()) weights_[d.strategy_id] = 0.5;
  if (config_.max_workers > 0) pool_ = std::make_unique<WorkerPool>(config_.max_workers);
}

Speculator::~Speculator() {
  for (auto& [id, stop] : stops_) stop.request_stop();
  pool_.reset();
}

std::vector<SandboxDimensions> Speculator::strategy_dimensions() const {
  std::vector<SandboxDimensions> dims;
  for (const auto& id : config_.batch_strategies(*registry_)) {
    SandboxDimensions d;
    d.strategy_id = id;
    d.temporal_horizon = config_.b;
    dims.push_back(std::move(d));
  }
  return dims;
}

std::optional<std::string> Speculator::open_batch() const {
  for (auto it = batch_order_.rbegin(); it != batch_order_.rend(); ++it) {
    const auto& b = batches_.at(*it);
    for (const auto& sid : b.sandbox_ids) {
      if (!is_resolved(sandboxes_.at(sid).status) && sandboxes_.at(sid).status != SandboxStatus::cancelled &&
          sandboxes_.at(sid).status != SandboxStatus::timed_out) {
        return b.batch_id;
      }
    }
  }
  return std::nullopt;
}

bool Speculator::batch_finished(const std::string& batch_id) const {
  for (const auto& sid : batch(batch_id).sandbox_ids) {
    const auto st = sandboxes_.at(sid).status;
    if (st == SandboxStatus::pending || st == SandboxStatus::running) return false;
  }
  return true;
}

std::string Speculator::create_batch(const ModelState& main, TriggerKind trigger, std::vector<SandboxDimensions>& dims,
                                     std::shared_ptr<const ModelState>& origin, bool& coalesced) {
  coalesced = false;
  const auto digest = main.digest();
  if (trigger == TriggerKind::metric_decline || trigger == TriggerKind::manual) {
    for (const auto& [id, b] : batches_) {
      if (b.origin_digest != digest || b.trigger != trigger) continue;
      const bool unresolved = std::any_of(b.sandbox_ids.begin(), b.sandbox_ids.end(), [&](const std::string& sid) {
        const auto st = sandboxes_.at(sid).status;
        return st == SandboxStatus::pending || st == SandboxStatus::running || st == SandboxStatus::ready;
      });
      if (unresolved) {
        coalesced = true;
        return id;
      }
    }
  }
  origin = std::make_shared<const ModelState>(main);
  Batch batch;
  batch.batch_id = serial_id("batch", next_batch_++);
  batch.trigger = trigger;
  batch.origin_digest = digest;
  batch.origin_cursor = main.insert_cursor();
  for (auto& d : dims) {
    Sandbox s;
    s.sandbox_id = serial_id("sb", next_sandbox_);
    s.seed = mix_seed(seed_ ^ mix_seed(next_sandbox_));
    ++next_sandbox_;
    s.batch_id = batch.batch_id;
    s.origin_digest = digest;
    s.trigger = trigger;
    s.dimensions = d;
    s.created_at_cursor = main.insert_cursor();
    batch.sandbox_ids.push_back(s.sandbox_id);
    stops_.emplace(s.sandbox_id, std::stop_source{});
    sandboxes_.emplace(s.sandbox_id, std::move(s));
    ++created_;
  }
  origins_.emplace(batch.batch_id, origin);
  batch_order_.push_back(batch.batch_id);
  auto id = batch.batch_id;
  batches_.emplace(id, std::move(batch));
  return id;
}

std::string Speculator::speculate(const ModelState& main, TriggerKind trigger, std::vector<SandboxDimensions> dims) {
  if (!pool_) return speculate_inline(main, trigger, std::move(dims));
  std::shared_ptr<const ModelState> origin;
  bool coalesced = false;
  auto batch_id = create_batch(main, trigger, dims, origin, coalesced);
  if (coalesced) return batch_id;
  const auto budget = config_.budgets.for_trigger(trigger);
  for (const auto& sid : batches_.at(batch_id).sandbox_ids) {
    const auto& s = sandboxes_.at(sid);
    auto token = stops_.at(sid).get_token();
    pool_->submit([this, origin, dims = s.dimensions, seed = s.seed, sid, token, budget] {
      const auto start = Clock::now();
      {
        std::lock_guard lock(inbox_mutex_);
        inbox_.push_back(Message{sid, true, {}, start});
      }
      inbox_cv_.notify_all();
      auto outcome = execute_sandbox(*origin, dims, seed, config_, *registry_, CancelToken(token, start + budget));
      {
        std::lock_guard lock(inbox_mutex_);
        inbox_.push_back(Message{sid, false, std::move(outcome), Clock::now()});
      }
      inbox_cv_.notify_all();
    });
  }
  return batch_id;
}

std::string Speculator::speculate_inline(const ModelState& main, TriggerKind trigger,
                                         std::vector<SandboxDimensions> dims) {
  std::shared_ptr<const ModelState> origin;
  bool coalesced = false;
  auto batch_id = create_batch(main, trigger, dims, origin, coalesced);
  if (coalesced) return batch_id;
  const auto budget = config_.budgets.for_trigger(trigger);
  for (const auto& sid : batches_.at(batch_id).sandbox_ids) {
    const auto dims_copy = sandboxes_.at(sid).dimensions;
    const auto seed = sandboxes_.at(sid).seed;
    const auto start = Clock::now();
    apply(Message{sid, true, {}, start});
    auto outcome = execute_sandbox(*origin, dims_copy, seed, config_, *registry_,
                                   CancelToken(stops_.at(sid).get_token(), start + budget));
    apply(Message{sid, false, std::move(outcome), Clock::now()});
  }
  return batch_id;
}

void Speculator::set_status(Sandbox& s, SandboxStatus to, std::string reason) {
  if (!transition_allowed(s.status, to)) {
    throw Error("invalid_transition", s.sandbox_id + ": " + std::string(to_string(s.status)) + " -> " +
                                          std::string(to_string(to)));
  }
  s.status = to;
  if (!reason.empty()) s.status_reason = std::move(reason);
}

void Speculator::finish_outcome(Sandbox& s, SandboxOutcome outcome, std::vector<SandboxEvent>& events) {
  s.runtime_ms = outcome.runtime_ms;
  s.strategy_applied = outcome.strategy_applied;
  s.forecast_short = outcome.forecast_short;
  s.detail = outcome.detail;
  const double budget = static_cast<double>(config_.budgets.for_trigger(s.trigger).count());
  if (outcome.status == SandboxStatus::ready && outcome.runtime_ms > budget) {
    outcome.status = SandboxStatus::timed_out;
    outcome.detail = "budget exceeded";
  }
  switch (outcome.status) {
    case SandboxStatus::ready:
      s.result = std::move(outcome.result);
      s.quality = std::move(outcome.quality);
      s.result_digest = s.result->digest();
      set_status(s, SandboxStatus::ready);
      events.push_back({SandboxEvent::Kind::ready, s.sandbox_id});
      break;
    case SandboxStatus::timed_out:
      set_status(s, SandboxStatus::timed_out, outcome.detail);
      events.push_back({SandboxEvent::Kind::timed_out, s.sandbox_id});
      break;
    default:
      set_status(s, SandboxStatus::cancelled, outcome.detail);
      events.push_back({SandboxEvent::Kind::cancelled, s.sandbox_id});
      break;
  }
}

std::vector<SandboxEvent> Speculator::apply(Message m) {
  std::vector<SandboxEvent> events;
  auto it = sandboxes_.find(m.sandbox_id);
  if (it == sandboxes_.end()) return events;
  auto& s = it->second;
  if (m.started) {
    if (s.status == SandboxStatus::pending) {
      set_status(s, SandboxStatus::running);
      started_at_[s.sandbox_id] = m.at;
      events.push_back({SandboxEvent::Kind::started, s.sandbox_id});
    }
    return events;
  }
  if (s.status == SandboxStatus::running) finish_outcome(s, std::move(m.outcome), events);
  return events;
}

std::vector<SandboxEvent> Speculator::collect() {
  std::deque<Message> drained;
  {
    std::lock_guard lock(inbox_mutex_);
    drained.swap(inbox_);
  }
  std::vector<SandboxEvent> events;
  for (auto& m : drained) {
    auto e = apply(std::move(m));
    events.insert(events.end(), e.begin(), e.end());
  }
  return events;
}

std::vector<SandboxEvent> Speculator::wait(const std::string& batch_id) {
  std::vector<SandboxEvent> events;
  // Worker completion order is scheduling noise; report in sandbox order so a
  // synchronous run logs the same sequence every time.
  auto in_order = [&events] {
    std::stable_sort(events.begin(), events.end(), [](const SandboxEvent& a, const SandboxEvent& b) {
      const bool a_start = a.kind == SandboxEvent::Kind::started;
      const bool b_start = b.kind == SandboxEvent::Kind::started;
      return std::tie(a.sandbox_id, b_start) < std::tie(b.sandbox_id, a_start);
    });
    return events;
  };
  const auto budget = config_.budgets.for_trigger(batch(batch_id).trigger);
  for (;;) {
    auto e = collect();
    events.insert(events.end(), e.begin(), e.end());
    if (batch_finished(batch_id)) return in_order();

    auto now = Clock::now();
    auto wake = now + std::chrono::milliseconds(50);
    for (const auto& sid : batch(batch_id).sandbox_ids) {
      auto& s = sandboxes_.at(sid);
      if (s.status != SandboxStatus::running) continue;
      const auto limit = started_at_.at(sid) + budget + kUnresponsiveGrace;
      if (now >= limit) {
        stops_.at(sid).request_stop();
        s.runtime_ms = elapsed_ms(started_at_.at(sid));
        set_status(s, SandboxStatus::timed_out, "budget exceeded (unresponsive)");
        events.push_back({SandboxEvent::Kind::timed_out, sid});
      } else {
        wake = std::min(wake, limit);
      }
    }
    if (batch_finished(batch_id)) return in_order();
    std::unique_lock lock(inbox_mutex_);
    inbox_cv_.wait_until(lock, wake, [this] { return !inbox_.empty(); });
  }
}

const std::vector<RankedCandidate>& Speculator::rank(const std::string& batch_id) {
  auto& b = batches_.at(batch_id);
  std::vector<const Sandbox*> ready;
  for (const auto& sid : b.sandbox_ids) {
    const auto& s = sandboxes_.at(sid);
    if (s.quality && (s.status == SandboxStatus::ready || is_resolved(s.status))) ready.push_back(&s);
  }
  b.ranking.clear();
  if (ready.empty()) return b.ranking;
  const auto& origin = *origins_.at(batch_id);
  std::vector<QualityVector> qs{evaluate(origin, origin.corpus().stats)};
  for (const auto* s : ready) qs.push_back(*s->quality);
  const auto norm = relative_normalize(qs);
  std::vector<RankCandidate> candidates;
  for (std::size_t i = 0; i < ready.size(); ++i) {
    candidates.push_back({ready[i]->sandbox_id, ready[i]->dimensions.strategy_id, norm[i + 1]});
  }
  b.ranking = consensus_rank(candidates, config_.method, config_.weights, weights_);
  return b.ranking;
}

AcceptResult Speculator::accept(const std::string& sandbox_id, const std::string& main_digest) {
  auto it = sandboxes_.find(sandbox_id);
  if (it == sandboxes_.end()) throw Error("unknown_sandbox", "unknown sandbox " + sandbox_id);
  auto& s = it->second;
  if (s.status == SandboxStatus::accepted) return {*s.result, {}};
  if (s.origin_digest != main_digest) throw Error("stale_sandbox", "stale sandbox");
  if (s.status != SandboxStatus::ready) {
    throw Error("not_ready", "sandbox " + sandbox_id + " is " + std::string(to_string(s.status)));
  }
  set_status(s, SandboxStatus::accepted);
  weights_ = update_strategy_weights(std::move(weights_), s.dimensions.strategy_id, true, config_.alpha);

  AcceptResult r{*s.result, {}};
  for (const auto& sid : batches_.at(s.batch_id).sandbox_ids) {
    if (sid == sandbox_id) continue;
    auto& sib = sandboxes_.at(sid);
    if (sib.status == SandboxStatus::ready) {
      set_status(sib, SandboxStatus::rejected, "sibling accepted");
      weights_ = update_strategy_weights(std::move(weights_), sib.dimensions.strategy_id, false, config_.alpha);
      r.rejected_siblings.push_back(sid);
    } else if (sib.status == SandboxStatus::pending || sib.status == SandboxStatus::running) {
      stops_.at(sid).request_stop();
      set_status(sib, SandboxStatus::cancelled, "sibling accepted");
    }
  }
  return r;
}

bool Speculator::reject(const std::string& sandbox_id) {
  auto it = sandboxes_.find(sandbox_id);
  if (it == sandboxes_.end()) throw Error("unknown_sandbox", "unknown sandbox " + sandbox_id);
  auto& s = it->second;
  switch (s.status) {
    case SandboxStatus::ready:
      set_status(s, SandboxStatus::rejected, "rejected");
      weights_ = update_strategy_weights(std::move(weights_), s.dimensions.strategy_id, false, config_.alpha);
      return true;
    case SandboxStatus::pending:
    case SandboxStatus::running:
      stops_.at(sandbox_id).request_stop();
      set_status(s, SandboxStatus::cancelled, "rejected before completion");
      return true;
    default:
      return false;
  }
}

std::vector<std::string> Speculator::invalidate_stale(const std::string& main_digest) {
  std::vector<std::string> changed;
  for (auto& [id, s] : sandboxes_) {
    if (s.origin_digest == main_digest) continue;
    if (s.status == SandboxStatus::pending || s.status == SandboxStatus::running) {
      stops_.at(id).request_stop();
      set_status(s, SandboxStatus::cancelled, "stale: main state changed");
      changed.push_back(id);
    } else if (s.status == SandboxStatus::ready) {
      set_status(s, SandboxStatus::rejected, "stale: main state changed");
      changed.push_back(id);
    }
  }
  return changed;
}

const Sandbox& Speculator::sandbox(const std::string& id) const {
  auto it = sandboxes_.find(id);
  if (it == sandboxes_.end()) throw Error("unknown_sandbox", "unknown sandbox " + id);
  return it->second;
}

std::shared_ptr<const ModelState> Speculator::origin(const std::string& batch_id) const {
  auto it = origins_.find(batch_id);
  if (it == origins_.end()) throw Error("unknown_batch", "unknown batch " + batch_id);
  return it->second;
}

void Speculator::advance_serials(std::uint64_t next_sandbox, std::uint64_t next_batch) {
  next_sandbox_ = std::max(next_sandbox_, next_sandbox);
  next_batch_ = std::max(next_batch_, next_batch);
}

const Batch& Speculator::batch(const std::string& id) const {
  auto it = batches_.find(id);
  if (it == batches_.end()) throw Error("unknown_batch", "unknown batch " + id);
  return it->second;
}

}  // namespace specex
