#include "specex/error.hpp"
#include "specex/hash.hpp"
#include "specex/service.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>

namespace specex {

namespace {

std::int64_t now_ms() {
  return std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::system_clock::now().time_since_epoch())
      .count();
}

nlohmann::json quality_json(const QualityVector& q, const MetricMap& weights) {
  return {{"topic_count", q.topic_count},
          {"mean_topic_size", q.mean_topic_size},
          {"size_entropy", q.size_entropy},
          {"coherence_pmi", q.coherence_pmi},
          {"max_depth", q.max_depth},
          {"normalized", nlohmann::json(q.normalized)},
          {"score", weighted_score(q.normalized, weights)},
          {"notes", q.notes}};
}

std::uint64_t serial_of(const std::string& id) {
  const auto dash = id.rfind('-');
  if (dash == std::string::npos) return 0;
  try {
    return std::stoull(id.substr(dash + 1));
  } catch (const std::exception&) {
    return 0;
  }
}

std::string session_id_for(std::uint64_t seed) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "session-%016llx", static_cast<unsigned long long>(mix_seed(seed ^ 0x5e55u)));
  return buf;
}

bool is_snapshot_class(const Message& m) { return m.type == "snapshot"; }

}  // namespace

// --- config -----------------------------------------------------------------------

std::string_view to_string(TriggerMode m) noexcept {
  switch (m) {
    case TriggerMode::off:
      return "off";
    case TriggerMode::metric:
      return "metric";
    case TriggerMode::every_buffer:
      return "every-buffer";
  }
  return "off";
}

TriggerMode trigger_mode_from_string(std::string_view s) {
  if (s == "off") return TriggerMode::off;
  if (s == "metric") return TriggerMode::metric;
  if (s == "every-buffer" || s == "every_buffer") return TriggerMode::every_buffer;
  throw Error("invalid_config", "unknown trigger mode " + std::string(s));
}

nlohmann::json SessionConfig::to_json() const {
  auto j = speculation.to_json();
  j["trigger"] = std::string(to_string(trigger_mode));
  j["pause_on_speculation"] = pause_on_speculation;
  j["synchronous"] = synchronous;
  j["seed"] = seed;
  j["pattern"] = {{"capacity", pattern_capacity}, {"repeat", pattern_repeat}};
  j["subscriber_queue"] = subscriber_queue;
  j["tokenizer"] = {{"min_token_length", tokenizer.min_token_length},
                    {"stopword_file", tokenizer.stopword_file ? nlohmann::json(tokenizer.stopword_file->string())
                                                              : nlohmann::json(nullptr)}};
  return j;
}

void SessionConfig::merge_json(const nlohmann::json& j) {
  if (!j.is_object()) throw Error("invalid_config", "config must be a JSON object");
  speculation.merge_json(j);
  try {
    if (j.contains("trigger")) trigger_mode = trigger_mode_from_string(j["trigger"].get<std::string>());
    if (j.contains("pause_on_speculation")) pause_on_speculation = j["pause_on_speculation"].get<bool>();
    if (j.contains("synchronous")) synchronous = j["synchronous"].get<bool>();
    if (j.contains("seed")) seed = j["seed"].get<std::uint64_t>();
    if (j.contains("pattern")) {
      pattern_capacity = j["pattern"].value("capacity", pattern_capacity);
      pattern_repeat = j["pattern"].value("repeat", pattern_repeat);
    }
    if (j.contains("subscriber_queue")) subscriber_queue = j["subscriber_queue"].get<std::size_t>();
    if (j.contains("tokenizer")) {
      const auto& t = j["tokenizer"];
      tokenizer.min_token_length = t.value("min_token_length", tokenizer.min_token_length);
      if (t.contains("stopword_file")) {
        if (t["stopword_file"].is_null()) {
          tokenizer.stopword_file.reset();
        } else {
          tokenizer.stopword_file = t["stopword_file"].get<std::string>();
        }
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error("invalid_config", std::string("config: ") + e.what());
  }
  if (pattern_capacity < 1 || pattern_repeat < 1) throw Error("invalid_config", "pattern capacity and repeat must be >= 1");
  if (subscriber_queue < 1) throw Error("invalid_config", "subscriber_queue must be >= 1");
}

// --- session ----------------------------------------------------------------------

std::unique_ptr<Session> Session::create(const std::filesystem::path& corpus_path, SessionConfig config,
                                         std::shared_ptr<const StrategyRegistry> registry,
                                         std::optional<std::filesystem::path> log_path) {
  auto corpus = ingest_corpus(corpus_path, config.tokenizer);
  const auto absolute = std::filesystem::absolute(corpus_path).lexically_normal().string();
  return std::make_unique<Session>(std::move(corpus), std::move(config), std::move(registry), absolute,
                                   std::move(log_path));
}

Session::Session(RestoreTag, std::shared_ptr<const Corpus> corpus, SessionConfig config,
                 std::shared_ptr<const StrategyRegistry> registry, std::string corpus_path, std::string id)
    : id_(std::move(id)),
      config_(std::move(config)),
      corpus_(std::move(corpus)),
      registry_(registry ? std::move(registry) : std::make_shared<const StrategyRegistry>()),
      corpus_path_(std::move(corpus_path)),
      main_(corpus_),
      history_(config_.speculation.window) {
  config_.speculation.k = corpus_->size();
  config_.speculation.validate();
  config_.speculation.batch_strategies(*registry_);
  speculator_ = std::make_unique<Speculator>(config_.speculation, registry_, config_.seed);
  pattern_.capacity = config_.pattern_capacity;
  pattern_.repeat = config_.pattern_repeat;
  main_digest_ = main_.digest();
}

Session::Session(std::shared_ptr<const Corpus> corpus, SessionConfig config,
                 std::shared_ptr<const StrategyRegistry> registry, std::string corpus_path,
                 std::optional<std::filesystem::path> log_path)
    : Session(RestoreTag{}, std::move(corpus), std::move(config), std::move(registry), std::move(corpus_path),
              session_id_for(config.seed)) {
  if (log_path) {
    log_file_.emplace(*log_path, std::ios::trunc);
    if (!*log_file_) throw Error("io_error", "cannot write " + log_path->string());
  }
  log("config", {{"session_id", id_}, {"corpus_path", corpus_path_}, {"config", config_.to_json()}});
  nlohmann::json warnings = nlohmann::json::array();
  for (const auto& w : corpus_->warnings) warnings.push_back({{"document", w.document}, {"message", w.message}});
  log("ingest", {{"source", corpus_->source},
                 {"k", corpus_->size()},
                 {"vocabulary_size", corpus_->stats.vocabulary().size()},
                 {"warnings", warnings},
                 {"corpus_digest", corpus_digest(*corpus_)}});
  record_quality();
}

Session::~Session() = default;

void Session::set_main(ModelState state) {
  main_ = std::move(state);
  main_digest_ = main_.digest();
}

const ProvenanceEntry& Session::log(std::string kind, nlohmann::json payload) {
  ProvenanceEntry e;
  e.seq = provenance_.size();
  e.kind = std::move(kind);
  e.payload = std::move(payload);
  e.digest_after = main_digest_;
  e.timestamp = now_ms();
  append(std::move(e));
  return provenance_.back();
}

void Session::append(ProvenanceEntry entry) {
  if (log_file_) {
    *log_file_ << entry.to_json().dump() << '\n';
    log_file_->flush();
  }
  provenance_.push_back(std::move(entry));
}

std::vector<ProvenanceEntry> Session::since(std::size_t m) const {
  return {provenance_.begin() + static_cast<std::ptrdiff_t>(m), provenance_.end()};
}

void Session::record_quality() {
  quality_ = evaluate(main_, corpus_->stats);
  const auto cursor = main_.insert_cursor();
  if (!history_.readings().empty() && history_.readings().back().first >= cursor) {
    reset_history();
    return;
  }
  history_.push(cursor, quality_);
  MetricMap raw;
  for (const auto& m : kMetricNames) raw[std::string(m)] = quality_.raw(m);
  trajectory_.push_back({cursor, weighted_score(quality_.normalized, config_.speculation.weights), std::move(raw)});
}

void Session::reset_history() {
  quality_ = evaluate(main_, corpus_->stats);
  history_ = QualityHistory(config_.speculation.window);
  history_.push(main_.insert_cursor(), quality_);
  MetricMap raw;
  for (const auto& m : kMetricNames) raw[std::string(m)] = quality_.raw(m);
  trajectory_.push_back({main_.insert_cursor(), weighted_score(quality_.normalized, config_.speculation.weights),
                         std::move(raw)});
}

bool Session::should_fire(std::string& reason, double& drop) {
  switch (config_.trigger_mode) {
    case TriggerMode::off:
      return false;
    case TriggerMode::every_buffer: {
      const auto cursor = main_.insert_cursor();
      if (cursor == 0) return false;
      if (cursor % config_.speculation.b == 0 || main_.buffer().empty()) {
        reason = "buffer period";
        return true;
      }
      return false;
    }
    case TriggerMode::metric: {
      const auto d = should_trigger(history_, config_.speculation.tau_trigger, config_.speculation.window);
      if (!d.fire) return false;
      reason = d.reason;
      drop = d.drop;
      history_.clear_to_latest();
      return true;
    }
  }
  return false;
}

std::optional<std::string> Session::open_batch() const { return speculator_->open_batch(); }

std::vector<ProvenanceEntry> Session::step(std::size_t count) {
  const auto m = mark();
  for (std::size_t i = 0; i < count; ++i) {
    poll();
    if (config_.pause_on_speculation && open_batch()) {
      paused_ = true;
      break;
    }
    paused_ = false;
    if (main_.buffer().empty()) break;
    const auto& doc_id = corpus_->documents.at(main_.buffer().front()).id;
    set_main(insert_next(std::move(main_), config_.speculation.insert));
    speculator_->invalidate_stale(main_digest_);
    log("insert", {{"doc_id", doc_id}, {"cursor", main_.insert_cursor()}});
    record_quality();
    std::string reason;
    double drop = 0.0;
    if (should_fire(reason, drop)) {
      ++triggers_;
      log("trigger", {{"mode", std::string(to_string(config_.trigger_mode))},
                      {"reason", reason},
                      {"drop", drop},
                      {"cursor", main_.insert_cursor()}});
      speculate_all(TriggerKind::metric_decline);
    }
  }
  if (provenance_.size() > m) publish({"snapshot", static_cast<std::int64_t>(provenance_.size()), snapshot()});
  return since(m);
}


std::vector<ProvenanceEntry> Session::poll() {
  const auto m = mark();
  std::vector<std::string> touched;
  for (const auto& e : speculator_->collect()) {
    if (e.kind == SandboxEvent::Kind::ready || e.kind == SandboxEvent::Kind::timed_out) log_result(e.sandbox_id);
    const auto& b = speculator_->sandbox(e.sandbox_id).batch_id;
    if (std::find(touched.begin(), touched.end(), b) == touched.end()) touched.push_back(b);
  }
  for (const auto& b : touched) push_batch_if_finished(b);
  return since(m);
}

std::vector<ProvenanceEntry> Session::wait(const std::string& batch_id) {
  const auto m = mark();
  std::vector<std::string> touched;
  for (const auto& e : speculator_->wait(batch_id)) {
    if (e.kind == SandboxEvent::Kind::ready || e.kind == SandboxEvent::Kind::timed_out) log_result(e.sandbox_id);
    const auto& b = speculator_->sandbox(e.sandbox_id).batch_id;
    if (b != batch_id && std::find(touched.begin(), touched.end(), b) == touched.end()) touched.push_back(b);
  }
  log_finished(batch_id);
  for (const auto& b : touched) push_batch_if_finished(b);
  push_batch_if_finished(batch_id);
  return since(m);
}

std::string Session::speculate(TriggerKind trigger, std::vector<SandboxDimensions> dimensions) {
  auto batch_id = speculator_->speculate(main_, trigger, std::move(dimensions));
  log_created(batch_id);
  if (config_.synchronous || config_.speculation.max_workers == 0) wait(batch_id);
  return batch_id;
}

std::string Session::speculate_all(TriggerKind trigger) { return speculate(trigger, speculator_->strategy_dimensions()); }

void Session::log_created(const std::string& batch_id) {
  const auto& b = speculator_->batch(batch_id);
  for (const auto& sid : b.sandbox_ids) {
    if (!logged_created_.insert(sid).second) continue;
    const auto& s = speculator_->sandbox(sid);
    log("sandbox_created", {{"sandbox_id", sid},
                            {"batch_id", batch_id},
                            {"trigger", std::string(to_string(s.trigger))},
                            {"dimensions", s.dimensions.to_json()},
                            {"seed", s.seed},
                            {"origin_digest", s.origin_digest},
                            {"cursor", s.created_at_cursor}});
  }
}

void Session::log_result(const std::string& sandbox_id) {
  if (logged_finished_.contains(sandbox_id)) return;
  const auto& s = speculator_->sandbox(sandbox_id);
  const nlohmann::json timing = {{"runtime_ms", s.runtime_ms}};
  if (!s.result_digest.empty()) {
    logged_finished_.insert(sandbox_id);
    log("sandbox_ready", {{"sandbox_id", sandbox_id},
                          {"batch_id", s.batch_id},
                          {"strategy_id", s.dimensions.strategy_id},
                          {"result_digest", s.result_digest},
                          {"strategy_applied", s.strategy_applied},
                          {"forecast_short", s.forecast_short},
                          {"quality", quality_json(*s.quality, config_.speculation.weights)},
                          {"timing", timing}});
  } else if (s.status == SandboxStatus::timed_out) {
    logged_finished_.insert(sandbox_id);
    log("sandbox_timed_out", {{"sandbox_id", sandbox_id},
                              {"batch_id", s.batch_id},
                              {"strategy_id", s.dimensions.strategy_id},
                              {"reason", s.status_reason},
                              {"timing", timing}});
  }
}

void Session::log_finished(const std::string& batch_id) {
  for (const auto& sid : speculator_->batch(batch_id).sandbox_ids) log_result(sid);
}

const std::vector<RankedCandidate>& Session::rank(const std::string& batch_id) { return speculator_->rank(batch_id); }

nlohmann::json Session::sandbox_summary(const std::string& sandbox_id) const {
  const auto& s = speculator_->sandbox(sandbox_id);
  nlohmann::json j = {{"sandbox_id", s.sandbox_id},
                      {"batch_id", s.batch_id},
                      {"trigger", std::string(to_string(s.trigger))},
                      {"strategy_id", s.dimensions.strategy_id},
                      {"dimensions", s.dimensions.to_json()},
                      {"status", std::string(to_string(s.status))},
                      {"status_reason", s.status_reason},
                      {"runtime_ms", s.runtime_ms},
                      {"origin_digest", s.origin_digest},
                      {"result_digest", s.result_digest},
                      {"created_at_cursor", s.created_at_cursor},
                      {"strategy_applied", s.strategy_applied},
                      {"forecast_short", s.forecast_short},
                      {"detail", s.detail},
                      {"stale", s.origin_digest != main_digest_}};
  if (s.quality) j["quality"] = quality_json(*s.quality, config_.speculation.weights);
  return j;
}

DeltaTree Session::delta(const std::string& sandbox_id) const {
  const auto& s = speculator_->sandbox(sandbox_id);
  if (!s.result) throw Error("no_result", "sandbox " + sandbox_id + " has no result");
  return diff(*speculator_->origin(s.batch_id), *s.result, config_.speculation.tau_match);
}

nlohmann::json Session::batch_ready_payload(const std::string& batch_id) {
  const auto& b = speculator_->batch(batch_id);
  const auto& ranking = rank(batch_id);
  nlohmann::json ranked = nlohmann::json::array();
  nlohmann::json deltas = nlohmann::json::object();
  for (std::size_t i = 0; i < ranking.size(); ++i) {
    const auto& r = ranking[i];
    auto summary = sandbox_summary(r.id);
    summary["rank"] = i + 1;
    summary["score"] = r.score;
    summary["front"] = r.front;
    summary["borda"] = r.borda;
    const auto d = delta(r.id);
    summary["delta_summary"] = d.to_json()["summary"];
    if (i < 3) deltas[r.id] = d.to_json();
    ranked.push_back(std::move(summary));
  }
  nlohmann::json excluded = nlohmann::json::array();
  for (const auto& sid : b.sandbox_ids) {
    const bool ranked_here = std::any_of(ranking.begin(), ranking.end(), [&](const RankedCandidate& r) { return r.id == sid; });
    if (!ranked_here) excluded.push_back(sandbox_summary(sid));
  }
  return {{"batch_id", batch_id},
          {"trigger", std::string(to_string(b.trigger))},
          {"origin_digest", b.origin_digest},
          {"origin_cursor", b.origin_cursor},
          {"method", std::string(to_string(config_.speculation.method))},
          {"ranking", ranked},
          {"excluded", excluded},
          {"deltas", deltas}};
}

void Session::push_batch_if_finished(const std::string& batch_id) {
  if (pushed_batches_.contains(batch_id) || !speculator_->batch_finished(batch_id)) return;
  pushed_batches_.insert(batch_id);
  if (subscribers_.empty()) return;
  publish({"sandbox_ready", static_cast<std::int64_t>(provenance_.size()), batch_ready_payload(batch_id)});
}

void Session::publish(Message m) {
  for (auto& [id, sub] : subscribers_) {
    if (sub.queue.size() >= config_.subscriber_queue) {
      auto it = std::find_if(sub.queue.begin(), sub.queue.end(), is_snapshot_class);
      if (it == sub.queue.end()) it = sub.queue.begin();
      sub.queue.erase(it);
      ++sub.dropped;
    }
    sub.queue.push_back(m);
  }
}

std::uint64_t Session::subscribe() {
  const auto id = next_subscriber_++;
  subscribers_[id];
  return id;
}

void Session::unsubscribe(std::uint64_t subscriber) { subscribers_.erase(subscriber); }

std::vector<Message> Session::drain(std::uint64_t subscriber) {
  auto it = subscribers_.find(subscriber);
  if (it == subscribers_.end()) throw Error("unknown_subscriber", "unknown subscriber");
  std::vector<Message> out(it->second.queue.begin(), it->second.queue.end());
  it->second.queue.clear();
  return out;
}

std::size_t Session::dropped(std::uint64_t subscriber) const {
  auto it = subscribers_.find(subscriber);
  return it == subscribers_.end() ? 0 : it->second.dropped;
}

void Session::accept(const std::string& sandbox_id) {
  const auto& s = speculator_->sandbox(sandbox_id);
  if (s.status == SandboxStatus::accepted) return;
  auto r = speculator_->accept(sandbox_id, main_digest_);
  set_main(std::move(r.state));
  log("accept", {{"sandbox_id", sandbox_id},
                 {"batch_id", s.batch_id},
                 {"strategy_id", s.dimensions.strategy_id},
                 {"result_digest", s.result_digest},
                 {"rejected_siblings", r.rejected_siblings}});
  speculator_->invalidate_stale(main_digest_);
  reset_history();
  paused_ = false;
  publish({"snapshot", static_cast<std::int64_t>(provenance_.size()), snapshot()});
}

bool Session::reject(const std::string& sandbox_id) {
  const auto& s = speculator_->sandbox(sandbox_id);
  const auto before = s.status;
  if (!speculator_->reject(sandbox_id)) return false;
  log("reject", {{"sandbox_id", sandbox_id},
                 {"batch_id", s.batch_id},
                 {"strategy_id", s.dimensions.strategy_id},
                 {"status_before", std::string(to_string(before))}});
  return true;
}

InteractionOutcome Session::interact(const InteractionEvent& event) {
  const auto level = classify_event(event, pattern_);
  InteractionEvent ev = event;
  const bool drag = ev.type == InteractionType::drag_start || ev.type == InteractionType::drag_drop;
  if (drag || (ev.type == InteractionType::select && ev.doc_id)) {
    if (!main_.leaf_of(*ev.doc_id)) throw Error("unknown_document", "document " + *ev.doc_id + " is not in the tree");
  }
  if (ev.type == InteractionType::drag_drop) {
    if (!main_.contains(*ev.target_topic) || main_.node(*ev.target_topic).kind != NodeKind::topic) {
      throw Error("unknown_topic", "target " + *ev.target_topic + " is not a topic");
    }
    const auto current = main_.node(*main_.leaf_of(*ev.doc_id)).parent;
    if (ev.source_topic && *ev.source_topic != current) {
      throw Error("bad_request", "document " + *ev.doc_id + " is not under " + *ev.source_topic);
    }
    ev.source_topic = current;
  }
  if (ev.type == InteractionType::accept || ev.type == InteractionType::reject) {
    if (!ev.sandbox_id) throw Error("bad_schema", "accept/reject events need payload.sandbox_id");
    speculator_->sandbox(*ev.sandbox_id);
  }

  log("interaction", {{"event", ev.to_json()}, {"level", std::string(to_string(level))}});
  InteractionOutcome out;
  out.level = level;
  switch (ev.type) {
    case InteractionType::drag_start:
    case InteractionType::select: {
      if (ev.type == InteractionType::drag_start) pattern_ = observe(std::move(pattern_), ev, main_);
      if (!ev.doc_id) break;
      const auto start = std::chrono::steady_clock::now();
      for (const auto& req : propose_speculations(level, ev, main_, pattern_)) {
        if (req.doc_id) out.drop_targets = rank_drop_targets(main_, *req.doc_id);
      }
      out.l1_latency_ms =
          std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
      l1_latencies_.push_back(out.l1_latency_ms);
      break;
    }
    case InteractionType::drag_drop: {
      pattern_ = observe(std::move(pattern_), ev, main_);
      SandboxDimensions move;
      move.moves.push_back({*ev.doc_id, *ev.target_topic});
      const auto batch_id = speculator_->speculate_inline(main_, TriggerKind::L2, {move});
      log_created(batch_id);
      log_finished(batch_id);
      const auto sid = speculator_->batch(batch_id).sandbox_ids.front();
      if (speculator_->sandbox(sid).status != SandboxStatus::ready) {
        throw Error("move_failed", "move failed: " + speculator_->sandbox(sid).detail);
      }
      accept(sid);
      out.user_move_sandbox = sid;
      for (auto& req : propose_speculations(level, ev, main_, pattern_)) {
        if (!req.sandboxes.empty()) out.batches.push_back(speculate(req.trigger, std::move(req.sandboxes)));
      }
      break;
    }
    case InteractionType::accept:
      accept(*ev.sandbox_id);
      break;
    case InteractionType::reject:
      reject(*ev.sandbox_id);
      break;
  }
  return out;
}

nlohmann::json Session::snapshot() const {
  auto open = open_batch();
  return {{"session_id", id_},
          {"state", main_.to_json()},
          {"digest", main_digest_},
          {"insert_cursor", main_.insert_cursor()},
          {"buffer_size", main_.buffer().size()},
          {"corpus_size", corpus_->size()},
          {"quality", quality_json(quality_, config_.speculation.weights)},
          {"strategy_weights", nlohmann::json(speculator_->strategy_weights())},
          {"paused", paused_},
          {"open_batch", open ? nlohmann::json(*open) : nlohmann::json(nullptr)},
          {"provenance_length", provenance_.size()}};
}

// --- messages ---------------------------------------------------------------------

std::vector<Message> Session::handle_message(const Message& msg) {
  const auto seq = msg.seq;
  const auto& p = msg.payload;
  auto need_string = [&](const char* key) -> std::string {
    if (!p.contains(key) || !p[key].is_string()) {
      throw Error("bad_schema", std::string(msg.type) + " needs payload." + key + " (string)");
    }
    return p[key].get<std::string>();
  };
  try {
    if (msg.type == "step") {
      std::size_t count = 1;
      if (p.contains("count")) {
        if (!p["count"].is_number_unsigned()) throw Error("bad_schema", "step needs payload.count >= 0");
        count = p["count"].get<std::size_t>();
      }
      nlohmann::json entries = nlohmann::json::array();
      for (const auto& e : step(count)) entries.push_back(e.to_json());
      return {{"events", seq,
               {{"entries", entries}, {"paused", paused_}, {"insert_cursor", main_.insert_cursor()},
                {"digest", main_digest_}}}};
    }
    if (msg.type == "accept") {
      accept(need_string("sandbox_id"));
      return {ok_message(seq, {{"digest", main_digest_}})};
    }
    if (msg.type == "reject") {
      const bool changed = reject(need_string("sandbox_id"));
      return {ok_message(seq, {{"changed", changed}, {"digest", main_digest_}})};
    }
    if (msg.type == "interaction") {
      const auto event = InteractionEvent::from_json(p.contains("event") ? p["event"] : p);
      const auto out = interact(event);
      nlohmann::json targets = nlohmann::json::array();
      for (const auto& t : out.drop_targets) targets.push_back({{"topic_id", t.topic_id}, {"score", t.score}});
      nlohmann::json payload = {{"event_id", event.event_id},
                                {"level", std::string(to_string(out.level))},
                                {"batches", out.batches},
                                {"digest", main_digest_}};
      if (out.user_move_sandbox) payload["user_move_sandbox"] = *out.user_move_sandbox;
      if (out.level == SemanticLevel::L1 && event.doc_id) {
        payload["drop_targets"] = targets;
        payload["latency_ms"] = out.l1_latency_ms;
        return {{"drop_targets", seq, payload}};
      }
      return {ok_message(seq, payload)};
    }
    if (msg.type == "get_snapshot") return {{"snapshot", seq, snapshot()}};
    if (msg.type == "get_delta") {
      const auto sid = need_string("sandbox_id");
      return {{"delta", seq, {{"sandbox_id", sid}, {"delta", delta(sid).to_json()}}}};
    }
    if (msg.type == "subscribe") return {ok_message(seq, {{"subscriber_id", subscribe()}})};
    if (msg.type == "speculate") {
      auto trigger = TriggerKind::manual;
      if (p.contains("trigger")) trigger = trigger_kind_from_string(need_string("trigger"));
      std::vector<SandboxDimensions> dims;
      if (p.contains("dimensions")) {
        if (!p["dimensions"].is_array()) throw Error("bad_schema", "speculate payload.dimensions must be an array");
        for (const auto& d : p["dimensions"]) {
          auto parsed = SandboxDimensions::from_json(d);
          registry_->descriptor(parsed.strategy_id);
          dims.push_back(std::move(parsed));
        }
      } else {
        dims = speculator_->strategy_dimensions();
      }
      return {ok_message(seq, {{"batch_id", speculate(trigger, std::move(dims))}})};
    }
    if (msg.type == "get_sandboxes") {
      poll();
      nlohmann::json list = nlohmann::json::array();
      for (const auto& [id, s] : speculator_->sandboxes()) list.push_back(sandbox_summary(id));
      nlohmann::json batch_ranking = nlohmann::json(nullptr);
      if (auto open = open_batch(); open && speculator_->batch_finished(*open)) batch_ranking = batch_ready_payload(*open);
      return {{"sandboxes", seq, {{"sandboxes", list}, {"open_batch", batch_ranking}}}};
    }
    if (msg.type == "get_provenance") {
      nlohmann::json entries = nlohmann::json::array();
      for (const auto& e : provenance_) entries.push_back(e.to_json());
      return {{"provenance", seq, {{"entries", entries}}}};
    }
    return {error_message(seq, "unknown_type", "unknown message type " + msg.type)};
  } catch (const Error& e) {
    return {error_message(seq, e.code(), e.what())};
  } catch (const nlohmann::json::exception& e) {
    return {error_message(seq, "bad_schema", e.what())};
  }
}

std::vector<Message> Session::handle_text(std::string_view text) {
  try {
    return handle_message(Message::parse(text));
  } catch (const Error& e) {
    std::int64_t seq = -1;
    try {
      auto j = nlohmann::json::parse(text);
      if (j.is_object() && j.contains("seq") && j["seq"].is_number_integer()) seq = j["seq"].get<std::int64_t>();
    } catch (const nlohmann::json::exception&) {
    }
    return {error_message(seq, e.code(), e.what())};
  }
}

// --- replay -----------------------------------------------------------------------

std::unique_ptr<Session> replay(const std::vector<ProvenanceEntry>& entries,
                                std::shared_ptr<const StrategyRegistry> registry) {
  if (entries.empty()) throw Error("no_entries", "no entries");
  const auto& first = entries.front();
  if (first.kind != "config") throw Error("malformed_log", "first entry must be a config entry");

  SessionConfig config;
  std::string corpus_path;
  std::string session_id;
  try {
    config.merge_json(first.payload.at("config"));
    corpus_path = first.payload.at("corpus_path").get<std::string>();
    session_id = first.payload.at("session_id").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw Error("malformed_log", std::string("config entry: ") + e.what());
  }
  auto corpus = ingest_corpus(corpus_path, config.tokenizer);
  std::unique_ptr<Session> session(
      new Session(Session::RestoreTag{}, corpus, config, std::move(registry), corpus_path, session_id));

  struct Created {
    SandboxDimensions dims;
    std::uint64_t seed = 0;
    std::string origin_digest;
  };
  std::map<std::string, Created> created;
  std::uint64_t max_sandbox = 0;
  std::uint64_t max_batch = 0;
  ModelState main = session->main_;

  for (std::size_t i = 0; i < entries.size(); ++i) {
    const auto& e = entries[i];
    const auto diverge = [&e](const std::string& why) {
      throw Error("divergence", "divergence at seq " + std::to_string(e.seq) + (why.empty() ? "" : ": " + why));
    };
    if (e.seq != i) diverge("sequence gap");
    try {
      const auto& p = e.payload;
      if (e.kind == "config") {
        if (i != 0) diverge("config entry after start");
      } else if (e.kind == "ingest") {
        if (p.at("corpus_digest").get<std::string>() != corpus_digest(*corpus) ||
            p.at("k").get<std::size_t>() != corpus->size()) {
          diverge("corpus differs from the logged ingest");
        }
      } else if (e.kind == "insert") {
        if (main.buffer().empty() || corpus->documents[main.buffer().front()].id != p.at("doc_id").get<std::string>()) {
          diverge("unexpected document");
        }
        main = insert_next(std::move(main), config.speculation.insert);
      } else if (e.kind == "sandbox_created") {
        const auto sid = p.at("sandbox_id").get<std::string>();
        created[sid] = {SandboxDimensions::from_json(p.at("dimensions")), p.at("seed").get<std::uint64_t>(),
                        p.at("origin_digest").get<std::string>()};
        max_sandbox = std::max(max_sandbox, serial_of(sid));
        max_batch = std::max(max_batch, serial_of(p.at("batch_id").get<std::string>()));
      } else if (e.kind == "accept") {
        const auto sid = p.at("sandbox_id").get<std::string>();
        auto it = created.find(sid);
        if (it == created.end()) diverge("accept of unknown sandbox " + sid);
        if (it->second.origin_digest != main.digest()) diverge("accepted sandbox is stale");
        auto outcome = execute_sandbox(main, it->second.dims, it->second.seed, session->config_.speculation,
                                       *session->registry_);
        if (outcome.status != SandboxStatus::ready) diverge("sandbox did not reproduce: " + outcome.detail);
        main = std::move(*outcome.result);
      }
    } catch (const Error& err) {
      if (err.code() == "divergence") throw;
      diverge(err.what());
    } catch (const nlohmann::json::exception& err) {
      diverge(err.what());
    }
    if (e.digest_after != main.digest()) diverge("digest mismatch");
  }

  session->set_main(std::move(main));
  session->provenance_ = entries;
  session->speculator_->advance_serials(max_sandbox + 1, max_batch + 1);
  session->reset_history();
  return session;
}

std::unique_ptr<Session> replay(const std::filesystem::path& log_path, std::shared_ptr<const StrategyRegistry> registry) {
  return replay(read_provenance(log_path), std::move(registry));
}

}  // namespace specex
