#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <variant>
#include <vector>

#include "forumtrace/error.hpp"

namespace forumtrace {

using TimestampMs = std::int64_t;
using Attributes = std::map<std::string, std::string>;

// ---------------------------------------------------------------------------
// Closed vocabularies. Each one round-trips through its wire token; unknown
// tokens are rejected with ErrorCode::UnknownToken.
// ---------------------------------------------------------------------------

enum class EventKind {
  Click,
  EditText,
  Scroll,
  Display,
  Submit,
  Mouseover,
  Focus,
  Blur,
  SessionEnd,
};

inline constexpr std::array kAllEventKinds = {
    EventKind::Click,     EventKind::EditText, EventKind::Scroll,
    EventKind::Display,   EventKind::Submit,   EventKind::Mouseover,
    EventKind::Focus,     EventKind::Blur,     EventKind::SessionEnd,
};

inline std::string_view to_token(EventKind kind) {
  switch (kind) {
    case EventKind::Click: return "click";
    case EventKind::EditText: return "edit_text";
    case EventKind::Scroll: return "scroll";
    case EventKind::Display: return "display";
    case EventKind::Submit: return "submit";
    case EventKind::Mouseover: return "mouseover";
    case EventKind::Focus: return "focus";
    case EventKind::Blur: return "blur";
    case EventKind::SessionEnd: return "session_end";
  }
  return "?";
}

inline EventKind parse_event_kind(std::string_view token) {
  for (auto kind : kAllEventKinds) {
    if (to_token(kind) == token) return kind;
  }
  throw Error(ErrorCode::UnknownToken, "event kind '" + std::string(token) + "'");
}

enum class ObjectClass { Hypertext, Button, Image, Form, Scrollbar, Page };

inline constexpr std::array kAllObjectClasses = {
    ObjectClass::Hypertext, ObjectClass::Button,    ObjectClass::Image,
    ObjectClass::Form,      ObjectClass::Scrollbar, ObjectClass::Page,
};

inline std::string_view to_token(ObjectClass cls) {
  switch (cls) {
    case ObjectClass::Hypertext: return "hypertext";
    case ObjectClass::Button: return "button";
    case ObjectClass::Image: return "image";
    case ObjectClass::Form: return "form";
    case ObjectClass::Scrollbar: return "scrollbar";
    case ObjectClass::Page: return "page";
  }
  return "?";
}

inline ObjectClass parse_object_class(std::string_view token) {
  for (auto cls : kAllObjectClasses) {
    if (to_token(cls) == token) return cls;
  }
  throw Error(ErrorCode::UnknownToken, "object class '" + std::string(token) + "'");
}

enum class Side { Client, Server };

inline std::string_view to_token(Side side) {
  return side == Side::Client ? "client" : "server";
}

inline Side parse_side(std::string_view token) {
  if (token == "client") return Side::Client;
  if (token == "server") return Side::Server;
  throw Error(ErrorCode::UnknownToken, "side '" + std::string(token) + "'");
}

// ---------------------------------------------------------------------------
// Use model
// ---------------------------------------------------------------------------

struct InteractionObject {
  std::string object_id;
  ObjectClass object_class = ObjectClass::Page;

  bool operator==(const InteractionObject&) const = default;
};

struct ObservableObject {
  InteractionObject object;
  std::vector<EventKind> events;  // treated as a set; kept sorted and unique

  bool observes(const std::string& object_id, EventKind kind) const {
    if (object.object_id != object_id) return false;
    for (auto k : events) {
      if (k == kind) return true;
    }
    return false;
  }

  bool operator==(const ObservableObject&) const = default;
};

struct ActivityType {
  std::string name;
  std::vector<ObservableObject> observables;

  bool observes(const std::string& object_id, EventKind kind) const {
    for (const auto& obs : observables) {
      if (obs.observes(object_id, kind)) return true;
    }
    return false;
  }

  bool operator==(const ActivityType&) const = default;
};

struct Trigger {
  std::string object_id;
  EventKind kind = EventKind::Click;

  bool operator==(const Trigger&) const = default;
};

struct TransitionRule {
  std::string from_activity;
  Trigger trigger;
  std::string to_activity;

  bool operator==(const TransitionRule&) const = default;
};

struct UseModel {
  std::vector<ActivityType> activities;
  std::vector<TransitionRule> rules;
  std::vector<std::string> initial_activities;

  const ActivityType* find_activity(std::string_view name) const {
    for (const auto& a : activities) {
      if (a.name == name) return &a;
    }
    return nullptr;
  }

  bool is_initial(std::string_view name) const {
    for (const auto& n : initial_activities) {
      if (n == name) return true;
    }
    return false;
  }

  bool operator==(const UseModel&) const = default;
};

// ---------------------------------------------------------------------------
// Raw events and structured traces
// ---------------------------------------------------------------------------

struct EventSource {
  Side side = Side::Server;
  std::string collector_id;

  bool operator==(const EventSource&) const = default;
};

struct RawEvent {
  std::string event_id;
  std::string session_id;
  std::string actor_id;
  EventSource source;
  std::uint64_t seq = 0;
  TimestampMs timestamp_ms = 0;
  std::optional<std::string> activity_hint;
  std::string object_id;
  EventKind kind = EventKind::Display;
  Attributes attributes;

  std::optional<std::string> attribute(const std::string& key) const {
    auto it = attributes.find(key);
    if (it == attributes.end()) return std::nullopt;
    return it->second;
  }

  bool operator==(const RawEvent&) const = default;
};

struct Annotation {
  std::string key;
  std::string value;
  std::string author;
  TimestampMs created_at_ms = 0;

  bool operator==(const Annotation&) const = default;
};

struct State {
  std::string activity;
  TimestampMs started_at_ms = 0;
  TimestampMs ended_at_ms = 0;
  bool censored = false;
  std::vector<RawEvent> events;
  Attributes attributes;
  std::vector<Annotation> annotations;

  bool operator==(const State&) const = default;
};

struct Transition {
  std::vector<RawEvent> trigger_events;
  TimestampMs occurred_at_ms = 0;
  std::string from_activity;
  std::string to_activity;
  std::vector<Annotation> annotations;

  bool operator==(const Transition&) const = default;
};

using TraceElement = std::variant<State, Transition>;

struct QuarantinedEvent {
  RawEvent event;
  std::string reason;

  bool operator==(const QuarantinedEvent&) const = default;
};

struct Trace {
  std::string trace_id;
  std::string session_id;
  std::string actor_id;
  std::uint32_t model_version = 1;
  std::vector<TraceElement> sequence;
  std::vector<QuarantinedEvent> quarantined;

  std::vector<const State*> states() const {
    std::vector<const State*> out;
    for (const auto& el : sequence) {
      if (const auto* s = std::get_if<State>(&el)) out.push_back(s);
    }
    return out;
  }

  std::vector<const Transition*> transitions() const {
    std::vector<const Transition*> out;
    for (const auto& el : sequence) {
      if (const auto* t = std::get_if<Transition>(&el)) out.push_back(t);
    }
    return out;
  }

  bool operator==(const Trace&) const = default;
};

/// Inclusive time window; either bound may be open.
struct TimeWindow {
  std::optional<TimestampMs> from_ms;
  std::optional<TimestampMs> to_ms;

  bool valid() const { return !(from_ms && to_ms && *from_ms > *to_ms); }

  bool contains(TimestampMs t) const {
    return (!from_ms || t >= *from_ms) && (!to_ms || t <= *to_ms);
  }

  bool overlaps(TimestampMs start, TimestampMs end) const {
    return (!to_ms || start <= *to_ms) && (!from_ms || end >= *from_ms);
  }

  bool operator==(const TimeWindow&) const = default;
};

inline void require_valid(const TimeWindow& window) {
  if (!window.valid()) {
    throw Error(ErrorCode::InvalidWindow,
                "from_ms " + std::to_string(*window.from_ms) + " > to_ms " +
                    std::to_string(*window.to_ms));
  }
}

}  // namespace forumtrace
