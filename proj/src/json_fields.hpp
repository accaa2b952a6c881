#pragma once

// Strict JSON object reading shared by the descriptor, config and checkpoint
// parsers: every key must be consumed, errors name the full field path.

#include <set>
#include <string>

#include "json.hpp"
#include "sparsearch/descriptor.hpp"
#include "sparsearch/network.hpp"

namespace sparsearch::detail {

using json = nlohmann::json;

class FieldError : public std::invalid_argument {
 public:
  FieldError(const std::string& field, const std::string& what)
      : std::invalid_argument(field + ": " + what), field_(field) {}
  const std::string& field() const { return field_; }

 private:
  std::string field_;
};

class StrictObject {
 public:
  StrictObject(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw FieldError(path_.empty() ? "<root>" : path_, "expected an object");
  }

  std::string path_of(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  bool has(const std::string& key) const { return j_.contains(key); }

  const json& at(const std::string& key) {
    if (!j_.contains(key)) throw FieldError(path_of(key), "missing required field");
    used_.insert(key);
    return j_.at(key);
  }

  template <typename T>
  T get(const std::string& key) {
    const json& v = at(key);
    try {
      return v.get<T>();
    } catch (const json::exception&) {
      throw FieldError(path_of(key), "wrong type (" + std::string(v.type_name()) + ")");
    }
  }

  template <typename T>
  T get_or(const std::string& key, T fallback) {
    if (!has(key)) return fallback;
    return get<T>(key);
  }

  int get_int(const std::string& key) {
    const json& v = at(key);
    if (!v.is_number_integer()) throw FieldError(path_of(key), "expected an integer");
    return v.get<int>();
  }

  int get_int_or(const std::string& key, int fallback) {
    return has(key) ? get_int(key) : fallback;
  }

  double get_number(const std::string& key) {
    const json& v = at(key);
    if (!v.is_number()) throw FieldError(path_of(key), "expected a number");
    return v.get<double>();
  }

  double get_number_or(const std::string& key, double fallback) {
    return has(key) ? get_number(key) : fallback;
  }

  bool get_bool_or(const std::string& key, bool fallback) {
    if (!has(key)) return fallback;
    const json& v = at(key);
    if (!v.is_boolean()) throw FieldError(path_of(key), "expected true or false");
    return v.get<bool>();
  }

  std::string get_string(const std::string& key) {
    const json& v = at(key);
    if (!v.is_string()) throw FieldError(path_of(key), "expected a string");
    return v.get<std::string>();
  }

  // Call once all fields have been read.
  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!used_.count(it.key())) throw FieldError(path_of(it.key()), "unknown field");
    }
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> used_;
};

// Runs fn, converting std::invalid_argument from value checks into a
// FieldError for `field`.
template <typename Fn>
auto with_field(const std::string& field, Fn&& fn) {
  try {
    return fn();
  } catch (const FieldError&) {
    throw;
  } catch (const std::invalid_argument& e) {
    throw FieldError(field, e.what());
  }
}

json network_to_json(const NetworkConfig& c);
NetworkConfig network_from_json(const json& j, const std::string& path);

json parse_json_text(std::string_view text);

}  // namespace sparsearch::detail
