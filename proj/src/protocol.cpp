#include "specex/protocol.hpp"

#include "specex/error.hpp"

namespace specex {

nlohmann::json Message::to_json() const { return {{"type", type}, {"seq", seq}, {"payload", payload}}; }

std::string Message::serialize() const { return to_json().dump(); }

Message Message::from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw Error("bad_message", "message must be a JSON object");
  if (!j.contains("type") || !j["type"].is_string() || j["type"].get_ref<const std::string&>().empty()) {
    throw Error("bad_message", "message.type must be a non-empty string");
  }
  if (!j.contains("seq") || !j["seq"].is_number_integer()) {
    throw Error("bad_message", "message.seq must be an integer");
  }
  if (!j.contains("payload") || !j["payload"].is_object()) {
    throw Error("bad_message", "message.payload must be an object");
  }
  for (const auto& [key, value] : j.items()) {
    if (key != "type" && key != "seq" && key != "payload") throw Error("bad_message", "unexpected field " + key);
  }
  return {j["type"].get<std::string>(), j["seq"].get<std::int64_t>(), j["payload"]};
}

Message Message::parse(std::string_view text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error("bad_message", std::string("invalid JSON: ") + e.what());
  }
  return from_json(j);
}

Message error_message(std::int64_t seq, std::string_view code, std::string_view text) {
  return {"error", seq, {{"code", std::string(code)}, {"message", std::string(text)}}};
}

Message ok_message(std::int64_t seq, nlohmann::json payload) { return {"ok", seq, std::move(payload)}; }

const std::vector<std::string>& command_types() {
  static const std::vector<std::string> types{"step",       "accept",       "reject",     "interaction", "get_snapshot",
                                              "get_delta",  "subscribe",    "speculate",  "get_sandboxes",
                                              "get_provenance"};
  return types;
}

const std::vector<std::string>& event_types() {
  static const std::vector<std::string> types{"ok",    "error",         "snapshot",     "delta", "events",
                                              "drop_targets", "sandbox_ready", "sandboxes", "provenance"};
  return types;
}

std::string encode_frame(std::string_view body) {
  if (body.size() > kMaxFrameBytes) throw Error("bad_frame", "frame too large");
  const auto n = static_cast<std::uint32_t>(body.size());
  std::string out;
  out.reserve(body.size() + 4);
  out.push_back(static_cast<char>((n >> 24) & 0xff));
  out.push_back(static_cast<char>((n >> 16) & 0xff));
  out.push_back(static_cast<char>((n >> 8) & 0xff));
  out.push_back(static_cast<char>(n & 0xff));
  out.append(body);
  return out;
}

void FrameDecoder::feed(std::string_view bytes) { buffer_.append(bytes); }

std::optional<std::string> FrameDecoder::next() {
  if (buffer_.size() < 4) return std::nullopt;
  std::uint32_t n = 0;
  for (int i = 0; i < 4; ++i) n = (n << 8) | static_cast<unsigned char>(buffer_[i]);
  if (n > kMaxFrameBytes) throw Error("bad_frame", "frame too large");
  if (buffer_.size() < 4 + static_cast<std::size_t>(n)) return std::nullopt;
  std::string body = buffer_.substr(4, n);
  buffer_.erase(0, 4 + static_cast<std::size_t>(n));
  return body;
}

}  // namespace specex
