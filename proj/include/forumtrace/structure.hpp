#pragma once

#include <algorithm>
#include <cstddef>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "forumtrace/error.hpp"
#include "forumtrace/types.hpp"
#include "forumtrace/use_model.hpp"

namespace forumtrace {

/// Canonical total order of events: timestamp, then server before client,
/// then capture sequence, then event id.
inline bool canonical_event_less(const RawEvent& a, const RawEvent& b) {
  if (a.timestamp_ms != b.timestamp_ms) return a.timestamp_ms < b.timestamp_ms;
  if (a.source.side != b.source.side) return a.source.side == Side::Server;
  if (a.seq != b.seq) return a.seq < b.seq;
  return a.event_id < b.event_id;
}

struct Classification {
  enum class Kind { Within, TransitionTo, Unmatched };

  Kind kind = Kind::Unmatched;
  std::string target;  // set for TransitionTo

  static Classification within() { return {Kind::Within, {}}; }
  static Classification transition_to(std::string to) { return {Kind::TransitionTo, std::move(to)}; }
  static Classification unmatched() { return {Kind::Unmatched, {}}; }

  bool operator==(const Classification&) const = default;
};

inline Classification classify_event(const ValidatedUseModel& model,
                                     const std::string& current_activity,
                                     const RawEvent& event) {
  if (auto to = model.rule_target(current_activity, event.object_id, event.kind)) {
    return Classification::transition_to(*to);
  }
  const auto* activity = model.model().find_activity(current_activity);
  if (activity != nullptr && activity->observes(event.object_id, event.kind)) {
    return Classification::within();
  }
  return Classification::unmatched();
}

struct StructureOptions {
  TimestampMs idle_cutoff_ms = 1'800'000;
};

inline std::string trace_id_for_session(const std::string& session_id) {
  return "trace-" + session_id;
}

namespace detail {

inline std::optional<std::string> opening_activity(const UseModel& model, const RawEvent& first) {
  if (first.activity_hint) {
    if (model.is_initial(*first.activity_hint)) return first.activity_hint;
    return std::nullopt;
  }
  for (const auto& name : model.initial_activities) {
    const auto* activity = model.find_activity(name);
    if (activity != nullptr && activity->observes(first.object_id, first.kind)) return name;
  }
  return std::nullopt;
}

inline TimestampMs last_activity_at(const State& state) {
  return state.events.empty() ? state.started_at_ms
                              : std::max(state.started_at_ms, state.events.back().timestamp_ms);
}

inline Attributes display_attributes(const State& state) {
  for (const auto& e : state.events) {
    if (e.kind == EventKind::Display) return e.attributes;
  }
  return {};
}

}  // namespace detail

/// Folds one session's ordered event stream into an alternating
/// State/Transition trace. Events that no observable of the current activity
/// accounts for end up in Trace::quarantined with a reason.
inline Trace structure_trace(const ValidatedUseModel& model, const std::string& session_id,
                             const std::string& actor_id, std::span<const RawEvent> events,
                             const StructureOptions& options = {}) {
  if (events.empty()) {
    throw Error(ErrorCode::EmptyStream, "session '" + session_id + "' has no events");
  }
  for (std::size_t i = 0; i < events.size(); ++i) {
    const auto& e = events[i];
    if (e.session_id != session_id || e.actor_id != actor_id) {
      throw Error(ErrorCode::InvariantViolation,
                  "event '" + e.event_id + "' does not belong to session '" + session_id +
                      "' / actor '" + actor_id + "'");
    }
    if (i > 0 && canonical_event_less(e, events[i - 1])) {
      throw Error(ErrorCode::InvariantViolation,
                  "events out of order at '" + e.event_id + "'");
    }
  }

  auto opening = detail::opening_activity(model.model(), events.front());
  if (!opening) {
    throw Error(ErrorCode::NoInitialMatch,
                "event '" + events.front().event_id + "' (" + events.front().object_id + ", " +
                    std::string(to_token(events.front().kind)) +
                    ") cannot open any initial activity");
  }

  Trace trace;
  trace.trace_id = trace_id_for_session(session_id);
  trace.session_id = session_id;
  trace.actor_id = actor_id;

  State current;
  current.activity = *opening;
  current.started_at_ms = events.front().timestamp_ms;
  current.events.push_back(events.front());

  for (std::size_t i = 1; i < events.size(); ++i) {
    const auto& e = events[i];
    auto cls = classify_event(model, current.activity, e);
    switch (cls.kind) {
      case Classification::Kind::Within:
        current.events.push_back(e);
        break;
      case Classification::Kind::TransitionTo: {
        auto last = detail::last_activity_at(current);
        if (e.timestamp_ms - last > options.idle_cutoff_ms) {
          current.ended_at_ms = last;
          current.censored = true;
        } else {
          current.ended_at_ms = e.timestamp_ms;
        }
        current.attributes = detail::display_attributes(current);
        Transition t;
        t.trigger_events.push_back(e);
        t.occurred_at_ms = e.timestamp_ms;
        t.from_activity = current.activity;
        t.to_activity = cls.target;
        trace.sequence.emplace_back(std::move(current));
        trace.sequence.emplace_back(std::move(t));
        current = State{};
        current.activity = cls.target;
        current.started_at_ms = e.timestamp_ms;
        break;
      }
      case Classification::Kind::Unmatched:
        trace.quarantined.push_back(
            {e, "unmatched: (" + e.object_id + ", " + std::string(to_token(e.kind)) +
                    ") is not observable in " + current.activity});
        break;
    }
  }

  current.ended_at_ms = detail::last_activity_at(current);
  current.censored = current.events.empty() || current.events.back().kind != EventKind::SessionEnd;
  current.attributes = detail::display_attributes(current);
  trace.sequence.emplace_back(std::move(current));
  return trace;
}

/// Structural checks applied before a trace is written: alternation, linkage,
/// ordering, ownership of every event, and event-id uniqueness.
inline void check_trace_invariants(const Trace& trace) {
  auto fail = [&](const std::string& why) {
    throw Error(ErrorCode::InvariantViolation, "trace '" + trace.trace_id + "': " + why);
  };
  if (trace.trace_id.empty()) fail("empty trace_id");
  if (trace.sequence.empty()) fail("empty sequence");

  std::set<std::string> seen_ids;
  auto check_event = [&](const RawEvent& e) {
    if (e.session_id != trace.session_id || e.actor_id != trace.actor_id) {
      fail("event '" + e.event_id + "' belongs to another session or actor");
    }
    if (e.timestamp_ms < 0) fail("event '" + e.event_id + "' has negative timestamp");
    if (!seen_ids.insert(e.event_id).second) fail("event '" + e.event_id + "' appears twice");
  };

  for (std::size_t i = 0; i < trace.sequence.size(); ++i) {
    const bool expect_state = i % 2 == 0;
    if (expect_state) {
      const auto* s = std::get_if<State>(&trace.sequence[i]);
      if (s == nullptr) fail("element " + std::to_string(i) + " should be a state");
      if (s->activity.empty()) fail("state " + std::to_string(i) + " has no activity");
      if (!s->censored && s->started_at_ms > s->ended_at_ms) {
        fail("state " + std::to_string(i) + " ends before it starts");
      }
      for (std::size_t k = 0; k < s->events.size(); ++k) {
        check_event(s->events[k]);
        if (k > 0 && s->events[k].timestamp_ms < s->events[k - 1].timestamp_ms) {
          fail("state " + std::to_string(i) + " events not time-ordered");
        }
      }
      for (const auto& a : s->annotations) {
        if (a.key.empty()) fail("annotation with empty key");
      }
    } else {
      const auto* t = std::get_if<Transition>(&trace.sequence[i]);
      if (t == nullptr) fail("element " + std::to_string(i) + " should be a transition");
      if (t->trigger_events.empty()) fail("transition " + std::to_string(i) + " has no trigger");
      for (const auto& e : t->trigger_events) check_event(e);
      if (i + 1 >= trace.sequence.size()) fail("sequence ends with a transition");
      const auto& left = std::get<State>(trace.sequence[i - 1]);
      const auto* right = std::get_if<State>(&trace.sequence[i + 1]);
      if (right == nullptr) fail("element " + std::to_string(i + 1) + " should be a state");
      if (t->from_activity != left.activity || t->to_activity != right->activity) {
        fail("transition " + std::to_string(i) + " does not link its neighbouring states");
      }
      for (const auto& a : t->annotations) {
        if (a.key.empty()) fail("annotation with empty key");
      }
    }
  }
  for (const auto& q : trace.quarantined) check_event(q.event);
}

/// Returns a copy of `trace` with `annotation` appended to the element at
/// `index` (state or transition). Events are never touched.
inline Trace annotate(Trace trace, std::size_t index, Annotation annotation) {
  if (index >= trace.sequence.size()) {
    throw Error(ErrorCode::PathOutOfBounds, "index " + std::to_string(index) + " on sequence of " +
                                                std::to_string(trace.sequence.size()));
  }
  if (annotation.key.empty()) {
    throw Error(ErrorCode::InvariantViolation, "annotation key must be non-empty");
  }
  std::visit([&](auto& element) { element.annotations.push_back(std::move(annotation)); },
             trace.sequence[index]);
  return trace;
}

}  // namespace forumtrace
