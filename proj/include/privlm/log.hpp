#pragma once

#include <iostream>
#include <string_view>

namespace privlm {

inline void log_warning(std::string_view message) {
  std::cerr << "[privlm] warning: " << message << '\n';
}

inline void log_info(std::string_view message) {
  std::cerr << "[privlm] " << message << '\n';
}

}  // namespace privlm
