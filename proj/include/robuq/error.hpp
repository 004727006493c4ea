#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace robuq {

// Base of every error thrown by the library. The CLI maps these to exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IoError : public Error {
 public:
  IoError(const std::string& path, const std::string& what)
      : Error("io error on '" + path + "': " + what), path_(path) {}
  const std::string& path() const noexcept { return path_; }

 private:
  std::string path_;
};

class FormatError : public Error {
 public:
  using Error::Error;
};

class ValidationError : public Error {
 public:
  using Error::Error;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

class SizeError : public Error {
 public:
  using Error::Error;
};

// Iterative solver gave up. Carries the last iterate so callers can inspect it.
class ConvergeError : public Error {
 public:
  ConvergeError(const std::string& what, std::vector<double> last_iterate)
      : Error(what), last_(std::move(last_iterate)) {}
  const std::vector<double>& last_iterate() const noexcept { return last_; }

 private:
  std::vector<double> last_;
};

class InfeasibleError : public Error {
 public:
  InfeasibleError(const std::string& what, double min_avg_bits)
      : Error(what), min_avg_bits_(min_avg_bits) {}
  double min_achievable_avg_bits() const noexcept { return min_avg_bits_; }

 private:
  double min_avg_bits_;
};

}  // namespace robuq
