#pragma once

#include <cstdint>
#include <cstdlib>
#include <ctime>
#include <stdexcept>
#include <string>
#include <utility>
#include <variant>

#include <json.hpp>

namespace aap {

using Json = nlohmann::json;

// Domain error with a stable machine-readable code. CLI maps these to exit 1.
struct Error : std::runtime_error {
  std::string code;
  Error(std::string c, const std::string& msg)
      : std::runtime_error(msg), code(std::move(c)) {}
};

// Epoch seconds. AAP_NOW overrides the wall clock so demo runs and
// golden files are reproducible.
inline std::int64_t now_epoch_seconds() {
  if (const char* fixed = std::getenv("AAP_NOW")) {
    return std::strtoll(fixed, nullptr, 10);
  }
  return static_cast<std::int64_t>(std::time(nullptr));
}

// A feature value: numeric or string (categorical and text features both
// carry strings). Equality is exact.
class Value {
 public:
  Value() : v_(std::string{}) {}
  Value(double d) : v_(d) {}
  Value(int i) : v_(static_cast<double>(i)) {}
  Value(std::string s) : v_(std::move(s)) {}
  Value(const char* s) : v_(std::string(s)) {}

  bool is_number() const { return std::holds_alternative<double>(v_); }
  double number() const { return std::get<double>(v_); }
  const std::string& str() const { return std::get<std::string>(v_); }

  bool operator==(const Value& o) const = default;

  Json to_json() const {
    if (is_number()) return Json(number());
    return Json(str());
  }

  static Value from_json(const Json& j) {
    if (j.is_number()) return Value(j.get<double>());
    if (j.is_string()) return Value(j.get<std::string>());
    throw Error("bad_value", "feature value must be a number or string");
  }

  // Deterministic display form used by text rendering.
  std::string display() const {
    if (is_number()) return Json(number()).dump();
    return str();
  }

 private:
  std::variant<double, std::string> v_;
};

}  // namespace aap
