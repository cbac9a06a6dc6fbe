#include "tapegraph/error.hpp"

namespace tapegraph {

std::string_view to_string(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::Shape:
      return "ShapeError";
    case ErrorKind::Arithmetic:
      return "ArithmeticError";
    case ErrorKind::Usage:
      return "UsageError";
    case ErrorKind::WrappedPanic:
      return "WrappedPanic";
  }
  return "UnknownError";
}

Error::Error(ErrorKind kind, const std::string& message)
    : std::runtime_error(std::string(to_string(kind)) + ": " + message), kind_(kind) {}

Error capture_error(std::exception_ptr ptr) {
  try {
    std::rethrow_exception(ptr);
  } catch (const Error& e) {
    return e;
  } catch (const std::exception& e) {
    return Error(ErrorKind::WrappedPanic, e.what());
  } catch (...) {
    return Error(ErrorKind::WrappedPanic, "unknown exception");
  }
}

}  // namespace tapegraph
