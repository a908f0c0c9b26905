#include "fixtures.hpp"

#include "specex/headless.hpp"
#include "specex/protocol.hpp"
#include "specex/service.hpp"

#include <doctest.h>

#include <fstream>
#include <sstream>

using namespace specex;
using fixtures::error_code;

namespace {

std::filesystem::path corpus_file(const std::string& name, const std::vector<std::pair<std::string, std::string>>& docs) {
  const auto dir = fixtures::temp_dir(name);
  std::ostringstream out;
  for (const auto& [id, text] : docs) out << nlohmann::json{{"id", id}, {"text", text}}.dump() << "\n";
  fixtures::write_file(dir / "corpus.jsonl", out.str());
  return dir / "corpus.jsonl";
}

// Two clean documents followed by unrelated ones: the tree deepens and
// fragments, so the equal-weight score falls by more than 0.10 within a few inserts.
std::vector<std::pair<std::string, std::string>> declining_docs() {
  std::vector<std::pair<std::string, std::string>> docs;
  const char* space[] = {"rocket orbit launch", "rocket orbit shuttle", "orbit launch shuttle", "rocket launch shuttle"};
  const char* cars[] = {"engine piston sedan", "engine piston gearbox", "piston sedan gearbox", "engine sedan gearbox"};
  for (int i = 0; i < 4; ++i) {
    docs.emplace_back("s" + std::to_string(i), space[i]);
    docs.emplace_back("c" + std::to_string(i), cars[i]);
  }
  const char* odd[] = {"violin cello", "tulip daisy",  "granite basalt", "walrus otter",
                       "kayak canoe",  "saffron cumin", "falcon heron",  "tundra steppe"};
  for (int i = 0; i < 8; ++i) docs.emplace_back("x" + std::to_string(i), odd[i]);
  return docs;
}

SessionConfig quiet_config() {
  SessionConfig c;
  c.trigger_mode = TriggerMode::off;
  c.synchronous = true;
  return c;
}

std::size_t count_kind(const std::vector<ProvenanceEntry>& es, const std::string& kind) {
  return std::count_if(es.begin(), es.end(), [&](const ProvenanceEntry& e) { return e.kind == kind; });
}

Message msg(std::string type, std::int64_t seq, nlohmann::json payload = nlohmann::json::object()) {
  return Message{std::move(type), seq, std::move(payload)};
}

// A headless top1 run on a 70-document slice of the desk corpus, logged to disk.
std::filesystem::path logged_run(const std::string& name) {
  const auto dir = fixtures::temp_dir(name);
  std::ifstream in(fixtures::desk_corpus());
  std::ofstream out(dir / "corpus.jsonl");
  std::string line;
  for (int i = 0; i < 70 && std::getline(in, line); ++i) out << line << "\n";
  out.close();
  RunOptions o;
  o.corpus = dir / "corpus.jsonl";
  o.config.trigger_mode = TriggerMode::every_buffer;
  o.config.seed = 5;
  o.policy = AutoPolicy::parse("top1");
  o.log_path = dir / "run.jsonl";
  run_headless(o);
  return dir / "run.jsonl";
}

}  // namespace

TEST_CASE("a new session over three documents") {
  const auto path = corpus_file("svc3", {{"a", "rocket orbit"}, {"b", "engine piston"}, {"c", "hockey puck"}});
  const auto s = Session::create(path, quiet_config());
  CHECK(s->main().insert_cursor() == 0);
  CHECK(s->main().buffer().size() == 3);
  REQUIRE(s->provenance().size() == 2);
  CHECK(s->provenance()[0].kind == "config");
  CHECK(s->provenance()[1].kind == "ingest");
  CHECK(s->provenance()[0].seq == 0);
  CHECK(s->provenance()[1].seq == 1);
  CHECK(s->provenance()[1].payload.at("k") == 3);
  CHECK(s->id().rfind("session-", 0) == 0);
}

TEST_CASE("the config entry records k, n and b for the desk corpus") {
  const auto s = Session::create(fixtures::desk_corpus(), SessionConfig{});
  const auto& cfg = s->provenance()[0].payload.at("config");
  CHECK(cfg.at("k") == 280);
  CHECK(cfg.at("n") == 7);
  CHECK(cfg.at("b") == 10);
}

TEST_CASE("an invalid corpus path creates no session") {
  std::unique_ptr<Session> s;
  CHECK(error_code([&] { s = Session::create("/nonexistent/corpus", SessionConfig{}); }) == "missing_path");
  CHECK(s == nullptr);
}

TEST_CASE("step inserts documents and stops at an empty buffer") {
  const auto s = Session::create(fixtures::desk_corpus(), quiet_config());
  const auto entries = s->step(10);
  CHECK(entries.size() == 10);
  CHECK(count_kind(entries, "insert") == 10);
  CHECK(s->main().insert_cursor() == 10);
  s->step(1000);
  CHECK(s->main().buffer().empty());
  CHECK(s->step(10).empty());
  for (std::size_t i = 0; i < s->provenance().size(); ++i) CHECK(s->provenance()[i].seq == i);
}

TEST_CASE("every provenance entry carries the main digest at that point") {
  const auto s = Session::create(fixtures::desk_corpus(), quiet_config());
  for (int i = 0; i < 5; ++i) {
    s->step(3);
    CHECK(s->provenance().back().digest_after == s->main().digest());
  }
}

TEST_CASE("a forced metric decline triggers one batch of n sandboxes") {
  const auto docs = declining_docs();
  const auto path = corpus_file("decline", docs);

  // Independent check that the fixture really declines past tau.
  const auto corpus = ingest_corpus(path);
  ModelState m(corpus);
  std::vector<double> scores;
  bool declines = false;
  while (!m.buffer().empty()) {
    m = insert_next(std::move(m));
    scores.push_back(weighted_score(evaluate(m, corpus->stats).normalized, equal_weights()));
    const auto best = *std::max_element(scores.begin(), scores.end());
    if (best - scores.back() > 0.10) declines = true;
  }
  REQUIRE(declines);

  SessionConfig cfg;
  cfg.trigger_mode = TriggerMode::metric;
  cfg.synchronous = true;
  const auto s = Session::create(path, cfg);
  const auto entries = s->step(docs.size());
  auto it = std::find_if(entries.begin(), entries.end(), [](const ProvenanceEntry& e) { return e.kind == "trigger"; });
  REQUIRE(it != entries.end());
  CHECK(it->payload.at("drop").get<double>() > 0.10);
  for (int i = 1; i <= 7; ++i) {
    REQUIRE(it + i != entries.end());
    CHECK((it + i)->kind == "sandbox_created");
  }
  CHECK(s->paused());
  CHECK(s->open_batch().has_value());
}

TEST_CASE("get_snapshot returns the canonical state and quality") {
  const auto s = Session::create(fixtures::desk_corpus(), quiet_config());
  s->step(25);
  const auto replies = s->handle_message(msg("get_snapshot", 4));
  REQUIRE(replies.size() == 1);
  CHECK(replies[0].type == "snapshot");
  CHECK(replies[0].seq == 4);
  const auto& p = replies[0].payload;
  CHECK(p.at("digest") == s->main().digest());
  CHECK(p.at("insert_cursor") == 25);
  CHECK(p.at("quality").contains("normalized"));
  const auto state = ModelState::from_json(p.at("state"), s->main().corpus_ptr());
  CHECK(state.digest() == s->main().digest());
}

TEST_CASE("accepting through a message makes the sandbox the main state") {
  const auto s = Session::create(fixtures::desk_corpus(), quiet_config());
  s->step(40);
  const auto spec = s->handle_message(msg("speculate", 1));
  REQUIRE(spec[0].type == "ok");
  const auto batch = spec[0].payload.at("batch_id").get<std::string>();
  const auto listing = s->handle_message(msg("get_sandboxes", 2));
  REQUIRE(listing[0].type == "sandboxes");
  const auto& open = listing[0].payload.at("open_batch");
  REQUIRE(open.is_object());
  CHECK(open.at("batch_id") == batch);
  const auto top = open.at("ranking").at(0).at("sandbox_id").get<std::string>();
  CHECK(open.at("deltas").size() <= 3);

  const auto d = s->handle_message(msg("get_delta", 3, {{"sandbox_id", top}}));
  CHECK(d[0].type == "delta");
  CHECK(d[0].payload.at("delta").contains("summary"));

  const auto ok = s->handle_message(msg("accept", 4, {{"sandbox_id", top}}));
  REQUIRE(ok[0].type == "ok");
  const auto snap = s->handle_message(msg("get_snapshot", 5));
  CHECK(snap[0].payload.at("digest") == s->speculator().sandbox(top).result_digest);
  CHECK(s->provenance().back().kind == "accept");
}

TEST_CASE("malformed messages get an error and leave provenance alone") {
  const auto s = Session::create(fixtures::desk_corpus(), quiet_config());
  s->step(5);
  const auto before = s->provenance().size();
  const auto digest = s->main().digest();
  const std::vector<std::string> bad = {
      "{not json",
      R"({"type": "step", "seq": 1})",
      R"({"type": "step", "seq": "x", "payload": {}})",
      R"({"type": "step", "seq": 1, "payload": {}, "extra": 1})",
      R"({"type": "accept", "seq": 2, "payload": {}})",
      R"({"type": "accept", "seq": 3, "payload": {"sandbox_id": "sb-missing"}})",
      R"({"type": "step", "seq": 4, "payload": {"count": -2}})",
      R"({"type": "frobnicate", "seq": 5, "payload": {}})",
      R"({"type": "interaction", "seq": 6, "payload": {"event_id": "e", "type": "drag_drop", "payload": {}}})",
      R"([1, 2, 3])",
  };
  for (const auto& text : bad) {
    const auto replies = s->handle_text(text);
    REQUIRE(replies.size() == 1);
    CHECK(replies[0].type == "error");
    CHECK(replies[0].payload.contains("code"));
    CHECK(replies[0].payload.contains("message"));
  }
  CHECK(s->handle_text(R"({"type": "frobnicate", "seq": 5, "payload": {}})")[0].seq == 5);
  CHECK(s->handle_text("{not json")[0].seq == -1);
  CHECK(s->provenance().size() == before);
  CHECK(s->main().digest() == digest);
}

TEST_CASE("a drag start answers with ranked drop targets") {
  const auto s = Session::create(fixtures::desk_corpus(), quiet_config());
  s->step(30);
  const auto leaf = s->main().leaf_ids().front();
  const auto doc = *s->main().node(leaf).doc_id;
  const nlohmann::json event = {{"event_id", "e1"}, {"type", "drag_start"}, {"payload", {{"doc_id", doc}}},
                                {"cursor", 30},      {"timestamp", 1}};
  const auto r = s->handle_message(msg("interaction", 9, event));
  REQUIRE(r[0].type == "drop_targets");
  CHECK(r[0].payload.at("level") == "L1");
  CHECK(r[0].payload.at("drop_targets").size() == s->main().topic_ids().size());
  CHECK(s->provenance().back().kind == "interaction");
}

TEST_CASE("a completed move runs as an accepted user sandbox and proposes follow-ups") {
  const auto s = Session::create(fixtures::desk_corpus(), quiet_config());
  s->step(60);
  const auto& main = s->main();
  const auto leaf = main.leaf_ids().front();
  const auto doc = *main.node(leaf).doc_id;
  const auto source = main.node(leaf).parent;
  std::string target;
  for (const auto& t : main.topic_ids())
    if (t != source) target = t;
  InteractionEvent start;
  start.event_id = "e1";
  start.type = InteractionType::drag_start;
  start.doc_id = doc;
  s->interact(start);
  InteractionEvent drop = start;
  drop.event_id = "e2";
  drop.type = InteractionType::drag_drop;
  drop.source_topic = source;
  drop.target_topic = target;
  const auto out = s->interact(drop);
  CHECK(out.level == SemanticLevel::L2);
  REQUIRE(out.user_move_sandbox.has_value());
  CHECK(s->speculator().sandbox(*out.user_move_sandbox).status == SandboxStatus::accepted);
  CHECK(s->main().node(*s->main().leaf_of(doc)).parent != source);
  CHECK(count_kind(s->provenance(), "accept") == 1);
  CHECK(s->main().digest() == s->speculator().sandbox(*out.user_move_sandbox).result_digest);
}

TEST_CASE("message serialization round trips for every type") {
  std::mt19937_64 rng(113);
  std::vector<std::string> types = command_types();
  for (const auto& t : event_types()) types.push_back(t);
  types.push_back("error");
  auto random_value = [&](auto& self, int depth) -> nlohmann::json {
    switch (rng() % (depth > 2 ? 4 : 6)) {
      case 0: return static_cast<std::int64_t>(rng() % 100000) - 50000;
      case 1: return std::uniform_real_distribution<double>(-1e6, 1e6)(rng);
      case 2: return std::string("s\"\\\né") + std::to_string(rng() % 1000);
      case 3: return rng() % 2 == 0;
      case 4: {
        nlohmann::json a = nlohmann::json::array();
        for (int i = 0, n = rng() % 4; i < n; ++i) a.push_back(self(self, depth + 1));
        return a;
      }
      default: {
        nlohmann::json o = nlohmann::json::object();
        for (int i = 0, n = rng() % 4; i < n; ++i) o["k" + std::to_string(rng() % 50)] = self(self, depth + 1);
        return o;
      }
    }
  };
  for (int trial = 0; trial < 2000; ++trial) {
    Message m;
    m.type = types[trial % types.size()];
    m.seq = static_cast<std::int64_t>(rng() % 1000000);
    for (int i = 0, n = rng() % 5; i < n; ++i) m.payload["f" + std::to_string(i)] = random_value(random_value, 0);
    const auto text = m.serialize();
    CHECK(Message::parse(text) == m);
    CHECK(Message::parse(text).serialize() == text);
  }
}

TEST_CASE("frames survive arbitrary chunking") {
  std::mt19937_64 rng(127);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<std::string> bodies;
    std::string stream;
    for (int i = 0, n = 1 + rng() % 6; i < n; ++i) {
      bodies.push_back(Message{"ok", i, {{"x", std::string(rng() % 300, 'a' + i)}}}.serialize());
      stream += encode_frame(bodies.back());
    }
    FrameDecoder dec;
    std::vector<std::string> got;
    std::size_t pos = 0;
    while (pos < stream.size()) {
      const std::size_t n = std::min<std::size_t>(1 + rng() % 50, stream.size() - pos);
      dec.feed(std::string_view(stream).substr(pos, n));
      pos += n;
      while (auto f = dec.next()) got.push_back(*f);
    }
    CHECK(got == bodies);
    CHECK(dec.buffered() == 0);
  }
  const auto f = encode_frame("abc");
  CHECK(f.size() == 7);
  CHECK(f.substr(0, 4) == std::string("\0\0\0\3", 4));
  FrameDecoder huge;
  huge.feed(std::string("\x7f\xff\xff\xff", 4));
  CHECK(error_code([&] { huge.next(); }) == "bad_frame");
}

TEST_CASE("replaying a logged run reproduces the final digest") {
  const auto log = logged_run("replay-ok");
  const auto entries = read_provenance(log);
  REQUIRE(count_kind(entries, "accept") > 0);
  const auto restored = replay(log);
  CHECK(restored->main().digest() == entries.back().digest_after);
  CHECK(restored->provenance().size() == entries.size());
}

TEST_CASE("a log cut mid-batch restores the pre-batch state") {
  const auto log = logged_run("replay-cut");
  auto entries = read_provenance(log);
  auto created = std::find_if(entries.rbegin(), entries.rend(),
                              [](const ProvenanceEntry& e) { return e.kind == "sandbox_created"; });
  REQUIRE(created != entries.rend());
  const std::size_t cut = entries.size() - std::distance(entries.rbegin(), created);
  entries.resize(cut);
  const auto restored = replay(entries);
  CHECK(restored->main().digest() == entries.back().digest_after);
  CHECK_FALSE(restored->open_batch().has_value());
  CHECK(restored->speculator().sandboxes().empty());
}

TEST_CASE("a tampered insert is reported as divergence at its seq") {
  const auto log = logged_run("replay-tamper");
  auto entries = read_provenance(log);
  auto it = entries.begin();
  for (int inserts = 0; inserts < 13; ++it) inserts += it->kind == "insert";
  --it;
  REQUIRE(it->kind == "insert");
  const auto seq = it->seq;
  auto other = std::next(it);
  while (other->kind != "insert") ++other;
  it->payload["doc_id"] = other->payload["doc_id"];
  try {
    replay(entries);
    FAIL("replay should diverge");
  } catch (const Error& e) {
    CHECK(e.code() == "divergence");
    CHECK(std::string(e.what()).find("divergence at seq " + std::to_string(seq)) != std::string::npos);
  }

  auto digests = read_provenance(log);
  digests[20].digest_after[0] = digests[20].digest_after[0] == 'a' ? 'b' : 'a';
  try {
    replay(digests);
    FAIL("replay should diverge");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("divergence at seq 20") != std::string::npos);
  }
}

TEST_CASE("provenance files reject empty and malformed input") {
  const auto dir = fixtures::temp_dir("provfiles");
  fixtures::write_file(dir / "empty.jsonl", "");
  CHECK(error_code([&] { read_provenance(dir / "empty.jsonl"); }) == "no_entries");
  fixtures::write_file(dir / "bad.jsonl", "{\"seq\": 0}\n");
  try {
    read_provenance(dir / "bad.jsonl");
    FAIL("expected malformed_log");
  } catch (const Error& e) {
    CHECK(e.code() == "malformed_log");
    CHECK(std::string(e.what()).find("line 1") != std::string::npos);
  }
}

TEST_CASE("normalized logs drop wall-clock fields only") {
  ProvenanceEntry e;
  e.seq = 3;
  e.kind = "sandbox_ready";
  e.payload = {{"sandbox_id", "sb-1"}, {"timing", {{"runtime_ms", 4.5}}}};
  e.digest_after = "abc";
  e.timestamp = 123456;
  const auto n = normalize_entry(e);
  CHECK_FALSE(n.contains("timestamp"));
  CHECK_FALSE(n.at("payload").contains("timing"));
  CHECK(n.at("payload").at("sandbox_id") == "sb-1");
  CHECK(ProvenanceEntry::from_json(e.to_json()).to_json() == e.to_json());
}

TEST_CASE("slow subscribers lose the oldest snapshots first") {
  const auto path = fixtures::desk_corpus();
  SessionConfig cfg = quiet_config();
  cfg.subscriber_queue = 3;
  cfg.pause_on_speculation = false;
  const auto s = Session::create(path, cfg);
  const auto sub = s->subscribe();
  s->step(20);
  s->speculate_all();
  for (int i = 0; i < 6; ++i) s->step(1);
  const auto got = s->drain(sub);
  REQUIRE(got.size() == 3);
  CHECK(got[0].type == "sandbox_ready");
  CHECK(got[1].type == "snapshot");
  CHECK(got[2].type == "snapshot");
  CHECK(got[2].payload.at("insert_cursor") == 26);
  CHECK(s->dropped(sub) == 5);
  CHECK(s->drain(sub).empty());
  s->unsubscribe(sub);
}

TEST_CASE("session config JSON round trip and trigger names") {
  SessionConfig c;
  c.trigger_mode = TriggerMode::every_buffer;
  c.seed = 42;
  c.speculation.b = 5;
  c.pattern_repeat = 4;
  SessionConfig back;
  back.merge_json(c.to_json());
  CHECK(back.to_json() == c.to_json());
  CHECK(trigger_mode_from_string("every-buffer") == TriggerMode::every_buffer);
  CHECK(trigger_mode_from_string("every_buffer") == TriggerMode::every_buffer);
  CHECK(error_code([] { trigger_mode_from_string("sometimes"); }) != "");
}
