#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace pmuvar {

// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Input does not follow the expected wire/file format (fatal for the stream).
class FormatError : public Error {
 public:
  using Error::Error;
};

// A single data row could not be parsed or violates a field invariant.
class RowError : public Error {
 public:
  RowError(std::size_t row, const std::string& what)
      : Error("row " + std::to_string(row) + ": " + what), row_(row) {}
  std::size_t row() const noexcept { return row_; }

 private:
  std::size_t row_;
};

// Timestamps went backwards.
class OrderingError : public Error {
 public:
  OrderingError(std::size_t row, const std::string& what)
      : Error("row " + std::to_string(row) + ": " + what), row_(row) {}
  std::size_t row() const noexcept { return row_; }

 private:
  std::size_t row_;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class ValidationError : public Error {
 public:
  using Error::Error;
};

class DegenerateChannelError : public Error {
 public:
  DegenerateChannelError(std::size_t channel, const std::string& name)
      : Error("degenerate channel " + std::to_string(channel) + " (" + name +
              "): zero variance after de-trending"),
        channel_(channel) {}
  std::size_t channel() const noexcept { return channel_; }

 private:
  std::size_t channel_;
};

class RankDeficiencyError : public Error {
 public:
  using Error::Error;
};

class LengthError : public Error {
 public:
  using Error::Error;
};

class ArityError : public Error {
 public:
  using Error::Error;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

class StateError : public Error {
 public:
  using Error::Error;
};

class NotFoundError : public Error {
 public:
  using Error::Error;
};

}  // namespace pmuvar
