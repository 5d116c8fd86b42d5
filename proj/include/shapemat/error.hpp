#pragma once

#include <stdexcept>
#include <string>

namespace shapemat {

enum class ErrorKind {
  MalformedInput,
  EmptyMesh,
  UnknownComponent,
  DegenerateGeometry,
  MissingUnaries,
  OracleSize,
  MissingData,
  InvalidK,
  Alignment,
  Usage,
  Io,
};

const char* to_string(ErrorKind kind);

// Every failure raised by the library carries a kind so callers (the CLI in
// particular) can map it to an exit status without parsing messages.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(std::string(to_string(kind)) + ": " + message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace shapemat
