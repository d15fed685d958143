#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>

#include "forumtrace/error.hpp"
#include "forumtrace/json_codec.hpp"
#include "forumtrace/repository.hpp"

namespace forumtrace {

enum class ClockMode {
  System,  // receipt time is the server wall clock
  Event,   // receipt time is inferred from the batch (replaying recorded sessions)
};

struct ServiceConfig {
  std::string bind = "127.0.0.1";
  int port = 8080;
  std::optional<std::filesystem::path> store;
  std::optional<std::filesystem::path> use_model;
  double bottom_threshold = 0.98;
  std::int64_t idle_cutoff_ms = 1'800'000;
  std::int64_t max_clock_skew_ms = 300'000;
  double scale_k = 0.5;
  double scale_t = 1.0;
  ClockMode clock = ClockMode::System;
  std::map<std::string, Principal> tokens;  // bearer token -> principal
};

inline ServiceConfig config_from_json(const json& j) {
  using detail::optional_or;
  ServiceConfig c;
  c.bind = optional_or<std::string>(j, "bind", c.bind);
  c.port = optional_or<int>(j, "port", c.port);
  if (j.contains("store")) c.store = j.at("store").get<std::string>();
  if (j.contains("use_model")) c.use_model = j.at("use_model").get<std::string>();
  c.bottom_threshold = optional_or<double>(j, "bottom_threshold", c.bottom_threshold);
  c.idle_cutoff_ms = optional_or<std::int64_t>(j, "idle_cutoff_ms", c.idle_cutoff_ms);
  c.max_clock_skew_ms = optional_or<std::int64_t>(j, "max_clock_skew_ms", c.max_clock_skew_ms);
  c.scale_k = optional_or<double>(j, "scale_k", c.scale_k);
  c.scale_t = optional_or<double>(j, "scale_t", c.scale_t);
  auto clock = optional_or<std::string>(j, "clock", "system");
  if (clock == "system") c.clock = ClockMode::System;
  else if (clock == "event") c.clock = ClockMode::Event;
  else throw Error(ErrorCode::ParseError, "clock must be 'system' or 'event'");
  if (j.contains("tokens")) {
    for (auto it = j.at("tokens").begin(); it != j.at("tokens").end(); ++it) {
      c.tokens[it.key()] = Principal{parse_role(detail::required<std::string>(it.value(), "role")),
                                     detail::optional_or<std::string>(it.value(), "actor_id", "")};
    }
  }
  if (!(c.bottom_threshold > 0.0 && c.bottom_threshold <= 1.0)) {
    throw Error(ErrorCode::ParseError, "bottom_threshold must be in (0,1]");
  }
  if (!(c.scale_k > 0.0) || !(c.scale_t > 0.0)) {
    throw Error(ErrorCode::ParseError, "scales must be positive");
  }
  return c;
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot read " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

inline void write_file(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  out << bytes;
  if (!out) throw Error(ErrorCode::IoError, "short write to " + path.string());
}

inline ServiceConfig load_config(const std::filesystem::path& path) {
  return config_from_json(parse_json_text(read_file(path)));
}

inline UseModel load_use_model(const std::filesystem::path& path) {
  auto model = use_model_from_json(parse_json_text(read_file(path)));
  validate_use_model(model);
  return model;
}

}  // namespace forumtrace
