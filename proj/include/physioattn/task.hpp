#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace physioattn {

enum class Task { classification, regression };

inline std::string_view to_string(Task t) { return t == Task::classification ? "classification" : "regression"; }

inline Task parse_task(std::string_view s) {
  if (s == "classification" || s == "cls") return Task::classification;
  if (s == "regression" || s == "reg") return Task::regression;
  throw std::invalid_argument("unknown task '" + std::string(s) + "' (expected classification|regression)");
}

}  // namespace physioattn
