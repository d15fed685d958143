#pragma once

#include <algorithm>
#include <cstdlib>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "forumtrace/error.hpp"
#include "forumtrace/json_codec.hpp"
#include "forumtrace/types.hpp"

namespace forumtrace {

inline constexpr const char* kDisplayMessage = "DisplayMessage";
inline constexpr const char* kDisplayThread = "DisplayThread";
inline constexpr const char* kDisplayPostedMessage = "DisplayPostedMessage";

enum class Completeness { Green, Orange, Blue };

inline std::string_view to_token(Completeness c) {
  switch (c) {
    case Completeness::Green: return "green";
    case Completeness::Orange: return "orange";
    case Completeness::Blue: return "blue";
  }
  return "?";
}

inline Completeness parse_completeness(std::string_view token) {
  if (token == "green") return Completeness::Green;
  if (token == "orange") return Completeness::Orange;
  if (token == "blue") return Completeness::Blue;
  throw Error(ErrorCode::UnknownToken, "completeness '" + std::string(token) + "'");
}

struct AnalysisOptions {
  double bottom_threshold = 0.98;
};

struct ReadingRecord {
  std::string actor_id;
  std::string message_id;
  TimestampMs started_at_ms = 0;
  TimestampMs duration_ms = 0;
  bool censored = false;
  Completeness completeness = Completeness::Orange;
  double max_scroll_ratio = 0.0;

  bool operator==(const ReadingRecord&) const = default;
};

struct Sphere {
  ReadingRecord reading;
  double diameter = 0.0;
  double offset = 0.0;

  bool operator==(const Sphere&) const = default;
};

struct SphereTimeline {
  std::optional<std::string> message_id;
  TimestampMs from_ms = 0;
  TimestampMs to_ms = 0;
  double scale_k = 0.5;  // display units per second of reading
  double scale_t = 1.0;  // display units per minute between readings
  std::vector<Sphere> spheres;

  bool operator==(const SphereTimeline&) const = default;
};

struct ParticipationSummary {
  std::string actor_id;
  std::size_t reads = 0;
  std::size_t posts = 0;
  TimestampMs from_ms = 0;
  TimestampMs to_ms = 0;

  bool operator==(const ParticipationSummary&) const = default;
};

/// Scroll ratio of an event, or nullopt for non-scroll events. Ratios are
/// validated at ingest; anything unparseable here counts as 0.
inline std::optional<double> scroll_ratio(const RawEvent& e) {
  if (e.kind != EventKind::Scroll) return std::nullopt;
  auto text = e.attribute("scroll_ratio");
  if (!text) return 0.0;
  char* end = nullptr;
  double v = std::strtod(text->c_str(), &end);
  if (end == text->c_str()) return 0.0;
  return std::clamp(v, 0.0, 1.0);
}

inline Completeness classify_reading(const State& state, const AnalysisOptions& options = {}) {
  if (state.activity != kDisplayMessage) {
    throw Error(ErrorCode::WrongActivity, "expected DisplayMessage, got " + state.activity);
  }
  bool scrolled = false;
  double max_ratio = 0.0;
  for (const auto& e : state.events) {
    if (auto r = scroll_ratio(e)) {
      scrolled = true;
      max_ratio = std::max(max_ratio, *r);
    }
  }
  if (!scrolled) return Completeness::Orange;
  return max_ratio >= options.bottom_threshold ? Completeness::Green : Completeness::Blue;
}

struct Duration {
  TimestampMs duration_ms = 0;
  bool censored = false;

  bool operator==(const Duration&) const = default;
};

inline Duration reading_duration(const State& state) {
  return {std::max<TimestampMs>(0, state.ended_at_ms - state.started_at_ms), state.censored};
}

/// Analysis windows are closed intervals with both bounds present.
struct Window {
  TimestampMs from_ms = 0;
  TimestampMs to_ms = 0;

  bool contains(TimestampMs t) const { return t >= from_ms && t <= to_ms; }
};

inline void require_valid(const Window& w) {
  if (w.from_ms > w.to_ms) {
    throw Error(ErrorCode::InvalidWindow,
                "from_ms " + std::to_string(w.from_ms) + " > to_ms " + std::to_string(w.to_ms));
  }
}

inline std::vector<ReadingRecord> extract_readings(std::span<const Trace> traces,
                                                   const std::optional<std::string>& message_id,
                                                   const Window& window,
                                                   const AnalysisOptions& options = {}) {
  require_valid(window);
  std::vector<ReadingRecord> out;
  for (const auto& trace : traces) {
    for (const auto& el : trace.sequence) {
      const auto* s = std::get_if<State>(&el);
      if (s == nullptr || s->activity != kDisplayMessage) continue;
      auto mid = s->attributes.find("message_id");
      std::string msg = mid == s->attributes.end() ? std::string() : mid->second;
      if (message_id && msg != *message_id) continue;
      if (!window.contains(s->started_at_ms)) continue;
      ReadingRecord r;
      r.actor_id = trace.actor_id;
      r.message_id = msg;
      r.started_at_ms = s->started_at_ms;
      auto d = reading_duration(*s);
      r.duration_ms = d.duration_ms;
      r.censored = d.censored;
      r.completeness = classify_reading(*s, options);
      for (const auto& e : s->events) {
        if (auto ratio = scroll_ratio(e)) r.max_scroll_ratio = std::max(r.max_scroll_ratio, *ratio);
      }
      out.push_back(std::move(r));
    }
  }
  std::stable_sort(out.begin(), out.end(), [](const ReadingRecord& a, const ReadingRecord& b) {
    if (a.started_at_ms != b.started_at_ms) return a.started_at_ms < b.started_at_ms;
    return a.actor_id < b.actor_id;
  });
  return out;
}

inline std::vector<ParticipationSummary> participation_summary(std::span<const Trace> traces,
                                                               const Window& window) {
  require_valid(window);
  std::map<std::string, ParticipationSummary> by_actor;
  auto entry = [&](const std::string& actor) -> ParticipationSummary& {
    auto& s = by_actor[actor];
    s.actor_id = actor;
    s.from_ms = window.from_ms;
    s.to_ms = window.to_ms;
    return s;
  };
  for (const auto& trace : traces) {
    for (const auto& el : trace.sequence) {
      if (const auto* s = std::get_if<State>(&el)) {
        if ((s->activity == kDisplayMessage || s->activity == kDisplayThread) &&
            window.contains(s->started_at_ms)) {
          ++entry(trace.actor_id).reads;
        }
      } else {
        const auto& t = std::get<Transition>(el);
        if (t.to_activity == kDisplayPostedMessage && window.contains(t.occurred_at_ms)) {
          ++entry(trace.actor_id).posts;
        }
      }
    }
  }
  std::vector<ParticipationSummary> out;
  for (auto& [_, s] : by_actor) out.push_back(std::move(s));
  return out;
}

/// Actors who read in the window but completed no post in it.
inline std::set<std::string> detect_lurkers(std::span<const Trace> traces, const Window& window) {
  std::set<std::string> out;
  for (const auto& s : participation_summary(traces, window)) {
    if (s.reads >= 1 && s.posts == 0) out.insert(s.actor_id);
  }
  return out;
}

// scale_k is in display units per second, scale_t in display units per minute.
inline double sphere_diameter(double scale_k, TimestampMs duration_ms) {
  return scale_k * (static_cast<double>(duration_ms) / 1000.0);
}

inline double sphere_offset(double scale_t, TimestampMs since_window_start_ms) {
  return scale_t * (static_cast<double>(since_window_start_ms) / 60000.0);
}

inline SphereTimeline build_sphere_timeline(std::vector<ReadingRecord> readings,
                                            const Window& window, double scale_k, double scale_t,
                                            std::optional<std::string> message_id = {}) {
  require_valid(window);
  if (!(scale_k > 0.0) || !(scale_t > 0.0)) {
    throw Error(ErrorCode::NonPositiveScale, "scale_k and scale_t must be positive");
  }
  for (const auto& r : readings) {
    if (!window.contains(r.started_at_ms)) {
      throw Error(ErrorCode::ReadingOutsideWindow,
                  "reading by " + r.actor_id + " at " + std::to_string(r.started_at_ms));
    }
  }
  std::stable_sort(readings.begin(), readings.end(),
                   [](const ReadingRecord& a, const ReadingRecord& b) {
                     return a.started_at_ms < b.started_at_ms;
                   });
  SphereTimeline tl;
  tl.message_id = std::move(message_id);
  tl.from_ms = window.from_ms;
  tl.to_ms = window.to_ms;
  tl.scale_k = scale_k;
  tl.scale_t = scale_t;
  for (auto& r : readings) {
    Sphere s;
    s.diameter = sphere_diameter(scale_k, r.duration_ms);
    s.offset = sphere_offset(scale_t, r.started_at_ms - window.from_ms);
    s.reading = std::move(r);
    tl.spheres.push_back(std::move(s));
  }
  return tl;
}

// --- wire format ------------------------------------------------------------

inline json to_json_value(const ReadingRecord& r) {
  return {{"actor_id", r.actor_id},
          {"message_id", r.message_id},
          {"started_at_ms", r.started_at_ms},
          {"duration_ms", r.duration_ms},
          {"censored", r.censored},
          {"completeness", std::string(to_token(r.completeness))},
          {"max_scroll_ratio", r.max_scroll_ratio}};
}

inline ReadingRecord reading_from_json(const json& j) {
  using detail::required;
  ReadingRecord r;
  r.actor_id = required<std::string>(j, "actor_id");
  r.message_id = required<std::string>(j, "message_id");
  r.started_at_ms = required<TimestampMs>(j, "started_at_ms");
  r.duration_ms = required<TimestampMs>(j, "duration_ms");
  r.censored = required<bool>(j, "censored");
  r.completeness = parse_completeness(required<std::string>(j, "completeness"));
  r.max_scroll_ratio = required<double>(j, "max_scroll_ratio");
  return r;
}

inline json to_json_value(const SphereTimeline& tl) {
  json spheres = json::array();
  for (const auto& s : tl.spheres) {
    spheres.push_back(
        {{"reading", to_json_value(s.reading)}, {"diameter", s.diameter}, {"offset", s.offset}});
  }
  return {{"message_id", tl.message_id ? json(*tl.message_id) : json(nullptr)},
          {"window", {{"from_ms", tl.from_ms}, {"to_ms", tl.to_ms}}},
          {"scale_k", tl.scale_k},
          {"scale_t", tl.scale_t},
          {"spheres", spheres}};
}

inline SphereTimeline sphere_timeline_from_json(const json& j) {
  using detail::required;
  SphereTimeline tl;
  if (j.contains("message_id") && !j.at("message_id").is_null()) {
    tl.message_id = required<std::string>(j, "message_id");
  }
  const auto& w = j.contains("window") ? j.at("window") : json();
  tl.from_ms = required<TimestampMs>(w, "from_ms");
  tl.to_ms = required<TimestampMs>(w, "to_ms");
  tl.scale_k = required<double>(j, "scale_k");
  tl.scale_t = required<double>(j, "scale_t");
  for (const auto& s : detail::required_array(j, "spheres")) {
    tl.spheres.push_back({reading_from_json(s.contains("reading") ? s.at("reading") : json()),
                          required<double>(s, "diameter"), required<double>(s, "offset")});
  }
  return tl;
}

inline json to_json_value(const ParticipationSummary& s) {
  return {{"actor_id", s.actor_id},
          {"reads", s.reads},
          {"posts", s.posts},
          {"window", {{"from_ms", s.from_ms}, {"to_ms", s.to_ms}}}};
}

}  // namespace forumtrace
