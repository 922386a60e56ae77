#pragma once

// Shared error types, hashing and small numeric helpers.

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace iotids {

inline constexpr std::string_view kVersion = "1.0.0";

// Error categories map one-to-one onto CLI exit codes.
enum class ErrorKind { config = 2, data = 3, endpoint = 4, budget = 5 };

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }
  int exit_code() const noexcept { return static_cast<int>(kind_); }

 private:
  ErrorKind kind_;
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what) : Error(ErrorKind::config, what) {}
};

class DataError : public Error {
 public:
  explicit DataError(const std::string& what) : Error(ErrorKind::data, what) {}
};

class BudgetError : public Error {
 public:
  explicit BudgetError(const std::string& what) : Error(ErrorKind::budget, what) {}
};

// 64-bit FNV-1a. Stable across platforms; used for seeds and content ids.
constexpr std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t h = 0xcbf29ce484222325ULL) noexcept {
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  static constexpr char digits[] = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[static_cast<std::size_t>(i)] = digits[v & 0xF];
    v >>= 4;
  }
  return out;
}

inline std::string content_id(std::string_view bytes) { return hex64(fnv1a64(bytes)); }

}  // namespace iotids
