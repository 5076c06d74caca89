#pragma once

#include <stdexcept>
#include <string>
#include <utility>

namespace tripcast {

/// Base class of every failure raised by the library.
///
/// `kind()` is a stable class name ("ShapeError", "ParseError", ...) that the
/// CLI prints as the first token of its one-line error message.
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& what)
      : std::runtime_error(what), kind_(std::move(kind)) {}

  const std::string& kind() const noexcept { return kind_; }

 private:
  std::string kind_;
};

#define TRIPCAST_DEFINE_ERROR(Name)                                   \
  class Name : public Error {                                         \
   public:                                                            \
    explicit Name(const std::string& what) : Error(#Name, what) {}    \
  }

TRIPCAST_DEFINE_ERROR(ShapeError);
TRIPCAST_DEFINE_ERROR(NumericError);
TRIPCAST_DEFINE_ERROR(ParseError);
TRIPCAST_DEFINE_ERROR(ConfigError);
TRIPCAST_DEFINE_ERROR(DataError);
TRIPCAST_DEFINE_ERROR(IoError);

#undef TRIPCAST_DEFINE_ERROR

}  // namespace tripcast
