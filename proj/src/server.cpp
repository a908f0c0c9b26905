#include "specex/server.hpp"

#include "specex/error.hpp"

#include <httplib.h>

#include <atomic>
#include <condition_variable>
#include <limits>
#include <map>
#include <mutex>
#include <sstream>
#include <thread>

namespace specex {

namespace {

struct Hosted {
  std::mutex mutex;
  std::unique_ptr<Session> session;
};

int status_for(const std::string& code) {
  if (code == "unknown_session" || code == "missing_path" || code == "unknown_sandbox") return 404;
  if (code == "session_exists") return 409;
  return 400;
}

void send_error(httplib::Response& res, const std::string& code, const std::string& message) {
  res.status = status_for(code);
  res.set_content(nlohmann::json{{"code", code}, {"message", message}}.dump(), "application/json");
}

}  // namespace

struct Server::Impl {
  ServerOptions options;
  httplib::Server http;
  std::mutex sessions_mutex;
  std::map<std::string, std::shared_ptr<Hosted>> sessions;
  std::jthread pump;
  std::jthread listener;
  std::atomic<bool> running{false};

  std::shared_ptr<Hosted> find(const std::string& id) {
    std::lock_guard lock(sessions_mutex);
    auto it = sessions.find(id);
    if (it == sessions.end()) throw Error("unknown_session", "unknown session " + id);
    return it->second;
  }

  std::string create(const std::filesystem::path& corpus, const nlohmann::json& config) {
    SessionConfig sc = options.defaults;
    if (!config.is_null()) sc.merge_json(config);
    {
      std::lock_guard lock(sessions_mutex);
      if (!options.multi_session && !sessions.empty()) {
        throw Error("session_exists", "this server hosts a single session; start it with --multi-session");
      }
    }
    std::optional<std::filesystem::path> log;
    auto hosted = std::make_shared<Hosted>();
    if (options.log_dir) {
      std::filesystem::create_directories(*options.log_dir);
      log = *options.log_dir / ("session-" + std::to_string(sessions.size() + 1) + ".jsonl");
    }
    hosted->session = Session::create(corpus, sc, options.registry, log);
    std::string id = hosted->session->id();
    std::lock_guard lock(sessions_mutex);
    for (int suffix = 2; sessions.contains(id); ++suffix) id = hosted->session->id() + "-" + std::to_string(suffix);
    sessions.emplace(id, hosted);
    return id;
  }

  void pump_loop(std::stop_token stop) {
    while (!stop.stop_requested()) {
      std::vector<std::shared_ptr<Hosted>> all;
      {
        std::lock_guard lock(sessions_mutex);
        for (auto& [id, h] : sessions) all.push_back(h);
      }
      for (auto& h : all) {
        std::lock_guard lock(h->mutex);
        h->session->poll();
      }
      std::this_thread::sleep_for(std::chrono::milliseconds(20));
    }
  }

  void routes() {
    http.Post("/sessions", [this](const httplib::Request& req, httplib::Response& res) {
      try {
        const auto body = nlohmann::json::parse(req.body);
        if (!body.contains("corpus") || !body["corpus"].is_string()) {
          throw Error("bad_schema", "body needs a corpus path");
        }
        const auto id = create(body["corpus"].get<std::string>(), body.value("config", nlohmann::json(nullptr)));
        auto h = find(id);
        std::lock_guard lock(h->mutex);
        res.status = 201;
        res.set_content(nlohmann::json{{"session_id", id},
                                       {"digest", h->session->snapshot()["digest"]},
                                       {"corpus_size", h->session->main().corpus().size()}}
                            .dump(),
                        "application/json");
      } catch (const Error& e) {
        send_error(res, e.code(), e.what());
      } catch (const nlohmann::json::exception& e) {
        send_error(res, "bad_schema", e.what());
      }
    });

    http.Get("/sessions", [this](const httplib::Request&, httplib::Response& res) {
      nlohmann::json ids = nlohmann::json::array();
      std::lock_guard lock(sessions_mutex);
      for (const auto& [id, h] : sessions) ids.push_back(id);
      res.set_content(nlohmann::json{{"sessions", ids}}.dump(), "application/json");
    });

    http.Delete(R"(/sessions/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
      std::lock_guard lock(sessions_mutex);
      if (sessions.erase(req.matches[1].str()) == 0) {
        send_error(res, "unknown_session", "unknown session " + req.matches[1].str());
        return;
      }
      res.set_content("{}", "application/json");
    });

    http.Get(R"(/sessions/([^/]+)/snapshot)", [this](const httplib::Request& req, httplib::Response& res) {
      try {
        auto h = find(req.matches[1].str());
        std::lock_guard lock(h->mutex);
        res.set_content(h->session->snapshot().dump(), "application/json");
      } catch (const Error& e) {
        send_error(res, e.code(), e.what());
      }
    });

    http.Get(R"(/sessions/([^/]+)/provenance)", [this](const httplib::Request& req, httplib::Response& res) {
      try {
        auto h = find(req.matches[1].str());
        std::lock_guard lock(h->mutex);
        std::string body;
        for (const auto& e : h->session->provenance()) body += e.to_json().dump() + "\n";
        res.set_content(body, "application/x-ndjson");
      } catch (const Error& e) {
        send_error(res, e.code(), e.what());
      }
    });

    http.Post(R"(/sessions/([^/]+)/messages)", [this](const httplib::Request& req, httplib::Response& res) {
      try {
        auto h = find(req.matches[1].str());
        const bool framed = req.get_header_value("Content-Type") == "application/octet-stream";
        std::vector<Message> replies;
        {
          std::lock_guard lock(h->mutex);
          if (framed) {
            FrameDecoder decoder;
            decoder.feed(req.body);
            while (auto frame = decoder.next()) {
              auto r = h->session->handle_text(*frame);
              replies.insert(replies.end(), r.begin(), r.end());
            }
            if (decoder.buffered() != 0) replies.push_back(error_message(-1, "bad_frame", "truncated frame"));
          } else {
            replies = h->session->handle_text(req.body);
          }
        }
        if (framed) {
          std::string out;
          for (const auto& m : replies) out += encode_frame(m.serialize());
          res.set_content(out, "application/octet-stream");
        } else {
          nlohmann::json arr = nlohmann::json::array();
          for (const auto& m : replies) arr.push_back(m.to_json());
          res.set_content(arr.dump(), "application/json");
        }
      } catch (const Error& e) {
        send_error(res, e.code(), e.what());
      }
    });

    http.Get(R"(/sessions/([^/]+)/events)", [this](const httplib::Request& req, httplib::Response& res) {
      std::shared_ptr<Hosted> h;
      try {
        h = find(req.matches[1].str());
      } catch (const Error& e) {
        send_error(res, e.code(), e.what());
        return;
      }
      const std::size_t max_messages =
          req.has_param("max") ? std::stoul(req.get_param_value("max")) : std::numeric_limits<std::size_t>::max();
      const auto timeout = std::chrono::milliseconds(
          req.has_param("timeout_ms") ? std::stol(req.get_param_value("timeout_ms")) : 24L * 3600 * 1000);
      std::uint64_t sub = 0;
      {
        std::lock_guard lock(h->mutex);
        sub = h->session->subscribe();
      }
      auto sent = std::make_shared<std::size_t>(0);
      const auto deadline = std::chrono::steady_clock::now() + timeout;
      res.set_chunked_content_provider(
          "application/octet-stream",
          [this, h, sub, sent, max_messages, deadline](std::size_t, httplib::DataSink& sink) {
            while (running && std::chrono::steady_clock::now() < deadline && *sent < max_messages) {
              std::vector<Message> batch;
              {
                std::lock_guard lock(h->mutex);
                batch = h->session->drain(sub);
              }
              if (batch.empty()) {
                std::this_thread::sleep_for(std::chrono::milliseconds(20));
                continue;
              }
              for (const auto& m : batch) {
                if (*sent >= max_messages) break;
                const auto frame = encode_frame(m.serialize());
                if (!sink.write(frame.data(), frame.size())) return false;
                ++*sent;
              }
              return true;
            }
            sink.done();
            return true;
          },
          [h, sub](bool) {
            std::lock_guard lock(h->mutex);
            h->session->unsubscribe(sub);
          });
    });

    if (options.static_dir) http.set_mount_point("/", options.static_dir->string());
  }
};

Server::Server(ServerOptions options) : impl_(std::make_unique<Impl>()) {
  impl_->options = std::move(options);
  impl_->routes();
}

Server::~Server() { stop(); }

std::string Server::create_session(const std::filesystem::path& corpus, const nlohmann::json& config) {
  return impl_->create(corpus, config);
}

int Server::start() {
  int port = impl_->options.port;
  if (port == 0) {
    port = impl_->http.bind_to_any_port(impl_->options.host);
  } else if (!impl_->http.bind_to_port(impl_->options.host, port)) {
    port = -1;
  }
  if (port < 0) throw Error("bind_failed", "cannot bind " + impl_->options.host);
  impl_->running = true;
  impl_->pump = std::jthread([this](std::stop_token s) { impl_->pump_loop(s); });
  impl_->listener = std::jthread([this] { impl_->http.listen_after_bind(); });
  impl_->http.wait_until_ready();
  return port;
}

void Server::run() {
  start();
  if (impl_->listener.joinable()) impl_->listener.join();
}

void Server::stop() {
  if (!impl_ || !impl_->running.exchange(false)) return;
  impl_->http.stop();
  if (impl_->listener.joinable()) impl_->listener.join();
  impl_->pump.request_stop();
  if (impl_->pump.joinable()) impl_->pump.join();
}

}  // namespace specex
