#pragma once

#include <stdexcept>
#include <string>

namespace neuroflux {

// Failure classes map 1:1 onto process exit statuses so the CLI and the C
// API agree on what a given code means.
enum class status : int {
  ok = 0,
  input_error = 2,
  planning_error = 3,
  numeric_error = 4,
  cache_error = 5,
};

class error : public std::runtime_error {
public:
  error(status s, const std::string& what) : std::runtime_error(what), status_(s) {}
  status code() const { return status_; }

private:
  status status_;
};

class input_error : public error {
public:
  explicit input_error(const std::string& what) : error(status::input_error, what) {}
};

class planning_error : public error {
public:
  explicit planning_error(const std::string& what) : error(status::planning_error, what) {}
};

class numeric_error : public error {
public:
  explicit numeric_error(const std::string& what) : error(status::numeric_error, what) {}
};

class cache_error : public error {
public:
  explicit cache_error(const std::string& what) : error(status::cache_error, what) {}
};

}  // namespace neuroflux
