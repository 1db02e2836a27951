#ifndef GPIMPUTE_LOG_HPP
#define GPIMPUTE_LOG_HPP

#include <functional>
#include <iostream>
#include <string>

namespace gpimpute {

using LogSink = std::function<void(const std::string&)>;

inline LogSink& log_sink() {
  static LogSink sink = [](const std::string& msg) { std::clog << "[gpimpute] " << msg << '\n'; };
  return sink;
}

inline void log_warning(const std::string& msg) { log_sink()("warning: " + msg); }
inline void log_info(const std::string& msg) { log_sink()(msg); }

}  // namespace gpimpute

#endif  // GPIMPUTE_LOG_HPP
