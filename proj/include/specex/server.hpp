#pragma once

// HTTP front end for sessions.
//
//   POST   /sessions                  {"corpus": path, "config": {...}} -> {"session_id", ...}
//   GET    /sessions                  -> {"sessions": [...]}
//   DELETE /sessions/{id}
//   GET    /sessions/{id}/snapshot    -> snapshot payload
//   GET    /sessions/{id}/provenance  -> JSON lines
//   POST   /sessions/{id}/messages    one JSON message, or length-framed messages
//   GET    /sessions/{id}/events      length-framed push stream (?max=N&timeout_ms=T)
//
// Every session is guarded by its own mutex; a pump thread folds finished
// sandbox results into the sessions so pushes flow without client polling.

#include "specex/service.hpp"

#include <filesystem>
#include <memory>
#include <optional>
#include <string>

namespace specex {

struct ServerOptions {
  std::string host = "127.0.0.1";
  int port = 8080;  // 0 picks a free port
  std::optional<std::filesystem::path> static_dir;
  bool multi_session = false;
  SessionConfig defaults;
  std::optional<std::filesystem::path> log_dir;
  std::shared_ptr<const StrategyRegistry> registry;
};

class Server {
 public:
  explicit Server(ServerOptions options);
  ~Server();
  Server(const Server&) = delete;
  Server& operator=(const Server&) = delete;

  // Binds and serves on a background thread; returns the bound port.
  int start();
  // Binds and serves on the calling thread.
  void run();
  void stop();

  // Creates a session directly (also used by POST /sessions).
  std::string create_session(const std::filesystem::path& corpus, const nlohmann::json& config);

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace specex
