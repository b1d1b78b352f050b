#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace afformer {

// Base for every error raised by the library. Callers that only need a
// message can catch this; the subclasses mirror the error kinds named in
// each operation's contract.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

class InputError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class SpecError : public Error {
 public:
  using Error::Error;
};

class MetricError : public Error {
 public:
  using Error::Error;
};

// Malformed file on disk. Carries the file and the byte offset at which
// parsing stopped so the CLI can point at it.
class FormatError : public Error {
 public:
  FormatError(std::string file, std::uint64_t offset, const std::string& what)
      : Error(file + " @ byte " + std::to_string(offset) + ": " + what),
        file_(std::move(file)),
        offset_(offset) {}

  const std::string& file() const { return file_; }
  std::uint64_t offset() const { return offset_; }

 private:
  std::string file_;
  std::uint64_t offset_;
};

}  // namespace afformer
