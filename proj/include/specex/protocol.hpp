#pragma once

// Wire messages: UTF-8 JSON objects {type, seq, payload}, each framed by a
// 4-byte big-endian length prefix. Message types and payloads are listed in
// docs/protocol.md.

#include <json.hpp>

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace specex {

struct Message {
  std::string type;
  std::int64_t seq = 0;
  nlohmann::json payload = nlohmann::json::object();

  nlohmann::json to_json() const;
  std::string serialize() const;
  // Throws Error("bad_message") when the envelope is malformed.
  static Message from_json(const nlohmann::json& j);
  static Message parse(std::string_view text);

  friend bool operator==(const Message&, const Message&) = default;
};

Message error_message(std::int64_t seq, std::string_view code, std::string_view text);
Message ok_message(std::int64_t seq, nlohmann::json payload = nlohmann::json::object());

// Client-to-server command types.
const std::vector<std::string>& command_types();
// Server-to-client types (responses and pushes).
const std::vector<std::string>& event_types();

inline constexpr std::size_t kMaxFrameBytes = 64u << 20;

std::string encode_frame(std::string_view body);

// Incremental decoder: feed bytes, pop complete frames.
class FrameDecoder {
 public:
  void feed(std::string_view bytes);
  // Throws Error("bad_frame") for a length above kMaxFrameBytes.
  std::optional<std::string> next();
  std::size_t buffered() const noexcept { return buffer_.size(); }

 private:
  std::string buffer_;
};

}  // namespace specex
