#pragma once

#include <exception>
#include <stdexcept>
#include <string>
#include <string_view>

namespace tapegraph {

enum class ErrorKind {
  Shape,
  Arithmetic,
  Usage,
  WrappedPanic,
};

std::string_view to_string(ErrorKind kind) noexcept;

/// The library's single error type. It is thrown by eager operations (tensor
/// kernels, constructors) and carried as a value on a Task's error channel.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message);

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

inline Error shape_error(const std::string& message) {
  return Error(ErrorKind::Shape, message);
}
inline Error arithmetic_error(const std::string& message) {
  return Error(ErrorKind::Arithmetic, message);
}
inline Error usage_error(const std::string& message) {
  return Error(ErrorKind::Usage, message);
}

/// Maps an in-flight exception onto an Error. Foreign exceptions become
/// WrappedPanic.
Error capture_error(std::exception_ptr ptr);

}  // namespace tapegraph
