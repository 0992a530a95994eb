#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace volret {

enum class ErrorKind {
  format,          // malformed VEMB/metadata/index bytes
  corrupt_corpus,  // truncated records, non-finite or zero vectors
  consistency,     // metadata and embeddings disagree, unknown ids
  io,              // unreadable/unwritable paths
  invalid_spec,    // bad synthetic spec or run configuration
  empty_index,     // nothing left to index after filtering
  query,           // bad query (dimension, empty after filter)
  sampling,        // experiment sampling cannot be satisfied
  input,           // malformed caller input (duplicate ids, bad k)
  report,          // evaluation missing method output
};

constexpr std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::format: return "format error";
    case ErrorKind::corrupt_corpus: return "corrupt corpus";
    case ErrorKind::consistency: return "consistency error";
    case ErrorKind::io: return "I/O error";
    case ErrorKind::invalid_spec: return "invalid spec";
    case ErrorKind::empty_index: return "empty index";
    case ErrorKind::query: return "query error";
    case ErrorKind::sampling: return "sampling error";
    case ErrorKind::input: return "input error";
    case ErrorKind::report: return "report error";
  }
  return "error";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(std::string(to_string(kind)) + ": " + message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

  /// Errors caused by the caller's inputs rather than the runtime environment.
  bool is_input_error() const noexcept { return kind_ != ErrorKind::io; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) {
  throw Error(kind, message);
}

}  // namespace volret
