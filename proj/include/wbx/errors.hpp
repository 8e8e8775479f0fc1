#pragma once

#include <stdexcept>
#include <string>

namespace wbx {

// Error kinds map onto CLI exit codes: config 1, data 2, numeric 3.
struct config_error : std::runtime_error {
  explicit config_error(const std::string& msg) : std::runtime_error(msg) {}
};

struct data_error : std::runtime_error {
  explicit data_error(const std::string& msg) : std::runtime_error(msg) {}
};

struct numeric_error : std::runtime_error {
  explicit numeric_error(const std::string& msg) : std::runtime_error(msg) {}
};

struct dim_error : std::runtime_error {
  explicit dim_error(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace wbx
