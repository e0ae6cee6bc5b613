#pragma once

#include <stdexcept>
#include <string>

namespace pcc {

/// Failure categories. The CLI maps these onto process exit codes.
enum class ErrorKind { io = 2, validation = 3, numerical = 4 };

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }
  int exit_code() const noexcept { return static_cast<int>(kind_); }

 private:
  ErrorKind kind_;
};

inline Error io_error(const std::string& what) { return Error(ErrorKind::io, what); }
inline Error validation_error(const std::string& what) { return Error(ErrorKind::validation, what); }
inline Error numerical_error(const std::string& what) { return Error(ErrorKind::numerical, what); }

inline void require(bool condition, const std::string& what) {
  if (!condition) throw validation_error(what);
}

}  // namespace pcc
