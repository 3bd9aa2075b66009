#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace climex {

struct invalid_argument : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct domain_error : std::domain_error {
  using std::domain_error::domain_error;
};

// Out-of-range value handed to a quantizer or key derivation.
struct range_error : std::out_of_range {
  using std::out_of_range::out_of_range;
};

// The responder's Respond would arrive after the initiator's next Ping.
struct protocol_overrun : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// A scheduled Respond precedes the Ping it answers.
struct causality_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct short_epoch : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct config_error : std::runtime_error {
  config_error(const std::string& source, std::size_t line, const std::string& what)
      : std::runtime_error(source + ":" + std::to_string(line) + ": " + what), line_(line) {}

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

}  // namespace climex
