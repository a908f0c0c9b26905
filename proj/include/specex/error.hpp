#pragma once

#include <stdexcept>
#include <string>

namespace specex {

// Every recoverable failure carries a short machine-readable code alongside
// the human message; the wire protocol forwards both.
class Error : public std::runtime_error {
 public:
  Error(std::string code, const std::string& message)
      : std::runtime_error(message), code_(std::move(code)) {}

  const std::string& code() const noexcept { return code_; }

 private:
  std::string code_;
};

// Thrown by cooperative cancellation checkpoints.
class Cancelled : public Error {
 public:
  explicit Cancelled(const std::string& why) : Error("cancelled", why) {}
};

}  // namespace specex
