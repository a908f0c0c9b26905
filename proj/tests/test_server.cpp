#include "fixtures.hpp"

#include "specex/protocol.hpp"
#include "specex/server.hpp"

#include <doctest.h>
#include <httplib.h>

#include <set>
#include <sstream>
#include <thread>

using namespace specex;

namespace {

struct Running {
  Server server;
  int port;
  httplib::Client client;

  explicit Running(ServerOptions o)
      : server((o.port = 0, std::move(o))), port(server.start()), client("127.0.0.1", port) {
    client.set_read_timeout(30, 0);
  }
};

ServerOptions quiet(bool multi = false) {
  ServerOptions o;
  o.multi_session = multi;
  o.defaults.trigger_mode = TriggerMode::off;
  o.defaults.synchronous = true;
  return o;
}

std::string create(httplib::Client& c) {
  const auto r = c.Post("/sessions", nlohmann::json{{"corpus", fixtures::desk_corpus().string()}}.dump(),
                        "application/json");
  REQUIRE(r);
  REQUIRE(r->status == 201);
  return nlohmann::json::parse(r->body).at("session_id").get<std::string>();
}

nlohmann::json send(httplib::Client& c, const std::string& id, const Message& m) {
  const auto r = c.Post("/sessions/" + id + "/messages", m.serialize(), "application/json");
  REQUIRE(r);
  REQUIRE(r->status == 200);
  return nlohmann::json::parse(r->body);
}

}  // namespace

TEST_CASE("session lifecycle over HTTP") {
  Running s(quiet());
  const auto id = create(s.client);

  const auto list = s.client.Get("/sessions");
  REQUIRE(list);
  CHECK(nlohmann::json::parse(list->body).at("sessions") == nlohmann::json::array({id}));

  const auto snap = s.client.Get("/sessions/" + id + "/snapshot");
  REQUIRE(snap);
  CHECK(snap->status == 200);
  const auto j = nlohmann::json::parse(snap->body);
  CHECK(j.at("insert_cursor") == 0);
  CHECK(j.at("corpus_size") == 280);

  const auto again = s.client.Post("/sessions", nlohmann::json{{"corpus", fixtures::desk_corpus().string()}}.dump(),
                                   "application/json");
  REQUIRE(again);
  CHECK(again->status == 409);
  CHECK(nlohmann::json::parse(again->body).at("code") == "session_exists");

  const auto del = s.client.Delete("/sessions/" + id);
  REQUIRE(del);
  CHECK(del->status == 200);
  const auto gone = s.client.Get("/sessions/" + id + "/snapshot");
  REQUIRE(gone);
  CHECK(gone->status == 404);
  CHECK(nlohmann::json::parse(gone->body).at("code") == "unknown_session");
}

TEST_CASE("session creation errors") {
  Running s(quiet(true));
  auto r = s.client.Post("/sessions", R"({"corpus": "/nonexistent/corpus"})", "application/json");
  REQUIRE(r);
  CHECK(r->status == 404);
  CHECK(nlohmann::json::parse(r->body).at("code") == "missing_path");
  r = s.client.Post("/sessions", "{}", "application/json");
  REQUIRE(r);
  CHECK(r->status == 400);
  r = s.client.Post("/sessions", "not json", "application/json");
  REQUIRE(r);
  CHECK(r->status == 400);
  const auto list = s.client.Get("/sessions");
  CHECK(nlohmann::json::parse(list->body).at("sessions").empty());
}

TEST_CASE("multi-session servers host several sessions") {
  Running s(quiet(true));
  const auto a = create(s.client);
  const auto b = create(s.client);
  CHECK(a != b);
  CHECK(nlohmann::json::parse(s.client.Get("/sessions")->body).at("sessions").size() == 2);
}

TEST_CASE("JSON messages step, speculate and accept") {
  Running s(quiet());
  const auto id = create(s.client);
  auto r = send(s.client, id, {"step", 1, {{"count", 30}}});
  REQUIRE(r.size() == 1);
  CHECK(r[0].at("type") == "events");
  CHECK(r[0].at("payload").at("insert_cursor") == 30);

  r = send(s.client, id, {"speculate", 2, nlohmann::json::object()});
  CHECK(r[0].at("type") == "ok");
  r = send(s.client, id, {"get_sandboxes", 3, nlohmann::json::object()});
  const auto top = r[0].at("payload").at("open_batch").at("ranking").at(0).at("sandbox_id").get<std::string>();
  r = send(s.client, id, {"accept", 4, {{"sandbox_id", top}}});
  CHECK(r[0].at("type") == "ok");
  const auto digest = r[0].at("payload").at("digest");
  const auto snap = nlohmann::json::parse(s.client.Get("/sessions/" + id + "/snapshot")->body);
  CHECK(snap.at("digest") == digest);

  r = send(s.client, id, {"nonsense", 5, nlohmann::json::object()});
  CHECK(r[0].at("type") == "error");
  CHECK(r[0].at("seq") == 5);
}

TEST_CASE("framed messages get framed replies") {
  Running s(quiet());
  const auto id = create(s.client);
  std::string body = encode_frame(Message{"step", 1, {{"count", 5}}}.serialize()) +
                     encode_frame(Message{"get_snapshot", 2, nlohmann::json::object()}.serialize()) + encode_frame("{broken");
  const auto r = s.client.Post("/sessions/" + id + "/messages", body, "application/octet-stream");
  REQUIRE(r);
  FrameDecoder dec;
  dec.feed(r->body);
  std::vector<Message> replies;
  while (auto f = dec.next()) replies.push_back(Message::parse(*f));
  REQUIRE(replies.size() == 3);
  CHECK(replies[0].type == "events");
  CHECK(replies[1].type == "snapshot");
  CHECK(replies[1].payload.at("insert_cursor") == 5);
  CHECK(replies[2].type == "error");

  const auto truncated = s.client.Post("/sessions/" + id + "/messages", encode_frame("{}").substr(0, 5),
                                       "application/octet-stream");
  REQUIRE(truncated);
  FrameDecoder d2;
  d2.feed(truncated->body);
  const auto err = Message::parse(*d2.next());
  CHECK(err.payload.at("code") == "bad_frame");
}

TEST_CASE("provenance downloads as JSON lines") {
  Running s(quiet());
  const auto id = create(s.client);
  send(s.client, id, {"step", 1, {{"count", 4}}});
  const auto r = s.client.Get("/sessions/" + id + "/provenance");
  REQUIRE(r);
  std::istringstream in(r->body);
  std::string line;
  std::vector<ProvenanceEntry> entries;
  while (std::getline(in, line)) entries.push_back(ProvenanceEntry::from_json(nlohmann::json::parse(line)));
  REQUIRE(entries.size() == 6);
  CHECK(entries[0].kind == "config");
  CHECK(entries[5].kind == "insert");
}

TEST_CASE("the event stream pushes snapshots and sandbox results") {
  auto o = quiet();
  o.defaults.synchronous = false;
  o.defaults.pause_on_speculation = false;
  Running s(o);
  const auto id = create(s.client);
  std::vector<Message> pushed;
  std::thread reader([&] {
    httplib::Client c("127.0.0.1", s.port);
    c.set_read_timeout(30, 0);
    FrameDecoder dec;
    c.Get("/sessions/" + id + "/events?max=2&timeout_ms=20000", [&](const char* data, std::size_t n) {
      dec.feed(std::string_view(data, n));
      while (auto f = dec.next()) pushed.push_back(Message::parse(*f));
      return true;
    });
  });
  std::this_thread::sleep_for(std::chrono::milliseconds(300));
  send(s.client, id, {"step", 1, {{"count", 20}}});
  send(s.client, id, {"speculate", 2, nlohmann::json::object()});
  reader.join();
  REQUIRE(pushed.size() == 2);
  std::set<std::string> types;
  for (const auto& m : pushed) types.insert(m.type);
  CHECK(types.contains("snapshot"));
  CHECK(types.contains("sandbox_ready"));
  const auto& ready = pushed[0].type == "sandbox_ready" ? pushed[0] : pushed[1];
  CHECK(ready.payload.at("ranking").size() == 7);
  CHECK(ready.payload.at("deltas").size() == 3);
}

TEST_CASE("unknown sessions answer 404 on every route") {
  Running s(quiet());
  for (const auto* path : {"/sessions/nope/snapshot", "/sessions/nope/provenance", "/sessions/nope/events?max=1"}) {
    const auto r = s.client.Get(path);
    REQUIRE(r);
    CHECK(r->status == 404);
  }
  const auto m = s.client.Post("/sessions/nope/messages", "{}", "application/json");
  REQUIRE(m);
  CHECK(m->status == 404);
  CHECK(s.client.Delete("/sessions/nope")->status == 404);
}
