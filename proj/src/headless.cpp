#include "specex/headless.hpp"

#include "specex/error.hpp"
#include "specex/hash.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <thread>

namespace specex {

AutoPolicy AutoPolicy::parse(std::string_view text, std::uint64_t seed) {
  AutoPolicy p;
  p.seed = seed;
  if (text == "none") {
    p.kind = Kind::none;
  } else if (text == "top1") {
    p.kind = Kind::top1;
  } else if (text == "reject" || text == "reject_all") {
    p.kind = Kind::reject_all;
  } else if (text.starts_with("random:")) {
    p.kind = Kind::random_accept;
    const std::string num(text.substr(7));
    std::size_t used = 0;
    try {
      p.p = std::stod(num, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != num.size() || !(p.p >= 0.0 && p.p <= 1.0)) {
      throw Error("invalid_policy", "random:P needs P in [0, 1]");
    }
  } else {
    throw Error("invalid_policy", "unknown policy " + std::string(text));
  }
  return p;
}

std::string AutoPolicy::to_string() const {
  switch (kind) {
    case Kind::none:
      return "none";
    case Kind::top1:
      return "top1";
    case Kind::reject_all:
      return "reject";
    case Kind::random_accept: {
      char buf[32];
      std::snprintf(buf, sizeof buf, "random:%g", p);
      return buf;
    }
  }
  return "none";
}

Percentiles percentiles(std::vector<double> values) {
  Percentiles p;
  p.count = values.size();
  if (values.empty()) return p;
  std::sort(values.begin(), values.end());
  auto rank = [&](double q) {
    const auto idx = static_cast<std::size_t>(std::ceil(q * static_cast<double>(values.size())));
    return values[std::clamp<std::size_t>(idx, 1, values.size()) - 1];
  };
  p.p50 = rank(0.50);
  p.p95 = rank(0.95);
  p.max = values.back();
  return p;
}

namespace {

nlohmann::json percentiles_json(const Percentiles& p) {
  return {{"count", p.count}, {"p50", p.p50}, {"p95", p.p95}, {"max", p.max}};
}

std::vector<double> sandbox_runtimes(const Speculator& spec) {
  std::vector<double> out;
  for (const auto& [id, s] : spec.sandboxes()) {
    if (s.status != SandboxStatus::cancelled && s.status != SandboxStatus::pending &&
        s.status != SandboxStatus::running) {
      out.push_back(s.runtime_ms);
    }
  }
  return out;
}

}  // namespace

RunResult run_headless(const RunOptions& options) {
  auto config = options.config;
  config.pause_on_speculation = options.policy.kind != AutoPolicy::Kind::none;
  config.synchronous = true;
  const auto started = std::chrono::steady_clock::now();
  auto session = Session::create(options.corpus, config, options.registry, options.log_path);
  std::mt19937_64 rng(mix_seed(options.policy.seed ^ 0xacce97u));
  std::bernoulli_distribution coin(options.policy.p);
  std::size_t policy_accepts = 0;
  std::size_t policy_rejects = 0;

  const auto k = session->main().corpus().size();
  for (;;) {
    session->step(k + 1);
    const auto open = session->open_batch();
    if (open && options.policy.kind != AutoPolicy::Kind::none) {
      if (!session->speculator().batch_finished(*open)) session->wait(*open);
      const auto ranking = session->rank(*open);
      std::optional<std::string> chosen;
      switch (options.policy.kind) {
        case AutoPolicy::Kind::top1:
          if (!ranking.empty()) chosen = ranking.front().id;
          break;
        case AutoPolicy::Kind::random_accept:
          if (!ranking.empty() && coin(rng)) chosen = ranking[rng() % ranking.size()].id;
          break;
        default:
          break;
      }
      if (chosen) {
        session->accept(*chosen);
        ++policy_accepts;
      } else {
        for (const auto& sid : session->speculator().batch(*open).sandbox_ids) {
          if (session->speculator().sandbox(sid).status == SandboxStatus::ready && session->reject(sid)) ++policy_rejects;
        }
      }
      continue;
    }
    if (session->main().buffer().empty() || !session->paused()) break;
  }

  const auto& spec = session->speculator();
  nlohmann::json by_status = nlohmann::json::object();
  for (auto st : {SandboxStatus::pending, SandboxStatus::running, SandboxStatus::ready, SandboxStatus::timed_out,
                  SandboxStatus::cancelled, SandboxStatus::accepted, SandboxStatus::rejected}) {
    by_status[std::string(to_string(st))] = 0;
  }
  for (const auto& [id, s] : spec.sandboxes()) {
    auto& slot = by_status[std::string(to_string(s.status))];
    slot = slot.get<std::size_t>() + 1;
  }
  nlohmann::json trajectory = nlohmann::json::array();
  for (const auto& p : session->trajectory()) {
    trajectory.push_back({{"cursor", p.cursor}, {"score", p.score}, {"metrics", nlohmann::json(p.raw)}});
  }
  const auto& c = session->config().speculation;
  const auto space = search_space_accounting(c.k, c.n, c.b);
  const auto snapshot = session->snapshot();
  nlohmann::json results = {
      {"corpus", std::filesystem::absolute(options.corpus).lexically_normal().string()},
      {"k", c.k},
      {"n", c.n},
      {"b", c.b},
      {"seed", session->config().seed},
      {"policy", options.policy.to_string()},
      {"trigger", std::string(to_string(session->config().trigger_mode))},
      {"triggers", session->triggers()},
      {"sandboxes_total", spec.sandboxes_created()},
      {"sandboxes_by_status", by_status},
      {"tally", {{"policy_accepts", policy_accepts}, {"policy_rejects", policy_rejects}}},
      {"latency_ms", percentiles_json(percentiles(sandbox_runtimes(spec)))},
      {"quality_trajectory", trajectory},
      {"final_quality", snapshot["quality"]},
      {"final_digest", snapshot["digest"]},
      {"leaves", session->main().leaf_count()},
      {"topics", session->main().topic_ids().size()},
      {"provenance_entries", session->provenance().size()},
      {"strategy_weights", nlohmann::json(spec.strategy_weights())},
      {"search_space",
       {{"sandboxes_upper_bound", space.sandboxes_total},
        {"full_option_paths_log10", space.full_option_paths_log10},
        {"incremental_orders_log10", space.incremental_orders_log10},
        {"all_trees_log10", space.all_trees_log10}}},
      {"elapsed_ms",
       std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - started).count()}};
  return {std::move(session), std::move(results)};
}

StrategyFn delayed_identity(std::chrono::milliseconds delay) {
  return [delay](const ModelState& state, const StrategyContext& ctx) {
    const auto until = std::chrono::steady_clock::now() + delay;
    while (std::chrono::steady_clock::now() < until) {
      ctx.cancel.check();
      std::this_thread::sleep_for(std::chrono::milliseconds(5));
    }
    return StrategyResult{state, false, "delayed"};
  };
}

std::shared_ptr<StrategyRegistry> registry_with_delayed(std::chrono::milliseconds delay, const std::string& id) {
  auto registry = std::make_shared<StrategyRegistry>();
  registry->register_strategy({id, "Delayed identity", {}, StrategyCategory::extension}, delayed_identity(delay));
  return registry;
}

std::vector<BenchRow> bench(const std::filesystem::path& corpus, const SessionConfig& base,
                            const std::vector<BenchCell>& cells) {
  std::vector<BenchRow> rows;
  for (const auto& cell : cells) {
    RunOptions o;
    o.corpus = corpus;
    o.config = base;
    o.config.speculation.n = cell.n;
    o.config.speculation.b = cell.b;
    o.config.trigger_mode = TriggerMode::every_buffer;
    o.policy = cell.policy;
    auto r = run_headless(o);
    BenchRow row;
    row.cell = cell;
    row.sandboxes = r.session->speculator().sandboxes_created();
    row.latency = percentiles(sandbox_runtimes(r.session->speculator()));
    row.timed_out = r.results["sandboxes_by_status"]["timed_out"].get<std::size_t>();
    row.final_quality = r.results["final_quality"]["score"].get<double>();
    rows.push_back(row);
  }
  return rows;
}

L1Probe probe_l1(const std::filesystem::path& corpus, const SessionConfig& base, std::size_t stride,
                 std::optional<std::chrono::milliseconds> inject_delay) {
  auto config = base;
  config.trigger_mode = TriggerMode::off;
  config.pause_on_speculation = false;
  config.synchronous = true;
  std::shared_ptr<const StrategyRegistry> registry;
  const std::string injected = "delayed_identity";
  if (inject_delay) registry = registry_with_delayed(*inject_delay, injected);
  auto session = Session::create(corpus, config, registry);

  L1Probe probe;
  std::vector<double> honest;
  std::vector<double> targets;
  std::size_t event = 0;
  while (!session->main().buffer().empty()) {
    session->step(std::max<std::size_t>(stride, 1));
    auto dims = session->speculator().strategy_dimensions();
    for (auto& d : dims) d.temporal_horizon = 0;
    if (inject_delay) dims.push_back(SandboxDimensions{injected, 0, {}, {}});
    const auto batch_id = session->speculate(TriggerKind::L1, dims);
    const auto& ranking = session->rank(batch_id);
    for (const auto& sid : session->speculator().batch(batch_id).sandbox_ids) {
      const auto& s = session->speculator().sandbox(sid);
      const bool is_injected = s.dimensions.strategy_id == injected;
      if (is_injected) {
        ++probe.injected_total;
        if (s.status == SandboxStatus::timed_out) ++probe.injected_timed_out;
        if (std::any_of(ranking.begin(), ranking.end(), [&](const RankedCandidate& r) { return r.id == sid; })) {
          probe.injected_ranked = true;
        }
      } else {
        honest.push_back(s.runtime_ms);
        if (s.status == SandboxStatus::timed_out) ++probe.timed_out;
      }
    }
    for (const auto& sid : session->speculator().batch(batch_id).sandbox_ids) {
      if (session->speculator().sandbox(sid).status == SandboxStatus::ready) session->reject(sid);
    }
    const auto leaves = session->main().leaf_ids();
    if (!leaves.empty()) {
      InteractionEvent e;
      e.event_id = "probe-" + std::to_string(event++);
      e.type = InteractionType::select;
      e.doc_id = *session->main().node(leaves[event % leaves.size()]).doc_id;
      e.cursor = session->main().insert_cursor();
      targets.push_back(session->interact(e).l1_latency_ms);
    }
  }
  probe.sandbox_latency = percentiles(honest);
  probe.drop_target_latency = percentiles(targets);
  return probe;
}

std::string format_bench_table(const std::vector<BenchRow>& rows) {
  std::string out;
  char line[256];
  std::snprintf(line, sizeof line, "%4s %4s %-10s %10s %10s %10s %10s %14s\n", "n", "b", "policy", "sandboxes",
                "p50_ms", "p95_ms", "timed_out", "final_quality");
  out += line;
  for (const auto& r : rows) {
    std::snprintf(line, sizeof line, "%4zu %4zu %-10s %10zu %10.2f %10.2f %10zu %14.6f\n", r.cell.n, r.cell.b,
                  r.cell.policy.to_string().c_str(), r.sandboxes, r.latency.p50, r.latency.p95, r.timed_out,
                  r.final_quality);
    out += line;
  }
  return out;
}

nlohmann::json bench_json(const std::vector<BenchRow>& rows, const std::optional<L1Probe>& probe) {
  nlohmann::json out = {{"rows", nlohmann::json::array()}};
  for (const auto& r : rows) {
    out["rows"].push_back({{"n", r.cell.n},
                           {"b", r.cell.b},
                           {"policy", r.cell.policy.to_string()},
                           {"sandboxes", r.sandboxes},
                           {"latency_ms", percentiles_json(r.latency)},
                           {"timed_out", r.timed_out},
                           {"final_quality", r.final_quality}});
  }
  if (probe) {
    out["l1"] = {{"sandbox_latency_ms", percentiles_json(probe->sandbox_latency)},
                 {"drop_target_latency_ms", percentiles_json(probe->drop_target_latency)},
                 {"honest_timed_out", probe->timed_out},
                 {"injected_total", probe->injected_total},
                 {"injected_timed_out", probe->injected_timed_out},
                 {"injected_ranked", probe->injected_ranked}};
  }
  return out;
}

}  // namespace specex
