#pragma once

// nlohmann/json bindings for every document the library reads or writes:
// use-model documents, trace exports, the ClientBatch wire body and server
// events. Key names are the domain field names.

#include <string>
#include <utility>
#include <variant>
#include <vector>

#include <json.hpp>

#include "forumtrace/error.hpp"
#include "forumtrace/sync.hpp"
#include "forumtrace/types.hpp"

namespace forumtrace {

using nlohmann::json;

namespace detail {

template <typename T>
T required(const json& j, const char* key) {
  if (!j.is_object() || !j.contains(key)) {
    throw Error(ErrorCode::ParseError, std::string("missing key '") + key + "'");
  }
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ParseError, std::string("key '") + key + "': " + e.what());
  }
}

template <typename T>
T optional_or(const json& j, const char* key, T fallback) {
  if (!j.is_object() || !j.contains(key) || j.at(key).is_null()) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ParseError, std::string("key '") + key + "': " + e.what());
  }
}

inline const json& required_array(const json& j, const char* key) {
  if (!j.is_object() || !j.contains(key) || !j.at(key).is_array()) {
    throw Error(ErrorCode::ParseError, std::string("missing array '") + key + "'");
  }
  return j.at(key);
}

inline Attributes attributes_from(const json& j, const char* key) {
  Attributes out;
  if (!j.contains(key)) return out;
  const auto& obj = j.at(key);
  if (!obj.is_object()) throw Error(ErrorCode::ParseError, std::string("'") + key + "' not an object");
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    if (!it.value().is_string()) {
      throw Error(ErrorCode::ParseError, "attribute '" + it.key() + "' is not a string");
    }
    out.emplace(it.key(), it.value().get<std::string>());
  }
  return out;
}

}  // namespace detail

// --- use model --------------------------------------------------------------

inline json to_json_value(const UseModel& model) {
  json activities = json::array();
  for (const auto& a : model.activities) {
    json observables = json::array();
    for (const auto& o : a.observables) {
      json events = json::array();
      for (auto k : o.events) events.push_back(std::string(to_token(k)));
      observables.push_back({{"object",
                              {{"object_id", o.object.object_id},
                               {"object_class", std::string(to_token(o.object.object_class))}}},
                             {"events", events}});
    }
    activities.push_back({{"name", a.name}, {"observables", observables}});
  }
  json rules = json::array();
  for (const auto& r : model.rules) {
    rules.push_back({{"from_activity", r.from_activity},
                     {"trigger",
                      {{"object_id", r.trigger.object_id},
                       {"kind", std::string(to_token(r.trigger.kind))}}},
                     {"to_activity", r.to_activity}});
  }
  return {{"activities", activities}, {"rules", rules}, {"initial", model.initial_activities}};
}

inline UseModel use_model_from_json(const json& j) {
  using detail::required;
  UseModel m;
  for (const auto& a : detail::required_array(j, "activities")) {
    ActivityType activity;
    activity.name = required<std::string>(a, "name");
    for (const auto& o : detail::required_array(a, "observables")) {
      ObservableObject obs;
      const auto& obj = o.contains("object") ? o.at("object") : json();
      obs.object.object_id = required<std::string>(obj, "object_id");
      obs.object.object_class = parse_object_class(required<std::string>(obj, "object_class"));
      for (const auto& k : detail::required_array(o, "events")) {
        if (!k.is_string()) throw Error(ErrorCode::ParseError, "event kind must be a string");
        obs.events.push_back(parse_event_kind(k.get<std::string>()));
      }
      activity.observables.push_back(std::move(obs));
    }
    m.activities.push_back(std::move(activity));
  }
  for (const auto& r : detail::required_array(j, "rules")) {
    TransitionRule rule;
    rule.from_activity = required<std::string>(r, "from_activity");
    rule.to_activity = required<std::string>(r, "to_activity");
    const auto& trig = r.contains("trigger") ? r.at("trigger") : json();
    rule.trigger.object_id = required<std::string>(trig, "object_id");
    rule.trigger.kind = parse_event_kind(required<std::string>(trig, "kind"));
    m.rules.push_back(std::move(rule));
  }
  m.initial_activities = required<std::vector<std::string>>(j, "initial");
  return m;
}

// --- events -----------------------------------------------------------------

inline json to_json_value(const RawEvent& e) {
  json j = {{"event_id", e.event_id},
            {"session_id", e.session_id},
            {"actor_id", e.actor_id},
            {"source", {{"side", std::string(to_token(e.source.side))},
                        {"collector_id", e.source.collector_id}}},
            {"seq", e.seq},
            {"timestamp_ms", e.timestamp_ms},
            {"object_id", e.object_id},
            {"kind", std::string(to_token(e.kind))},
            {"attributes", e.attributes}};
  if (e.activity_hint) j["activity_hint"] = *e.activity_hint;
  return j;
}

inline RawEvent raw_event_from_json(const json& j) {
  using detail::required;
  RawEvent e;
  e.event_id = required<std::string>(j, "event_id");
  e.session_id = required<std::string>(j, "session_id");
  e.actor_id = required<std::string>(j, "actor_id");
  if (j.contains("source")) {
    const auto& src = j.at("source");
    e.source.side = parse_side(required<std::string>(src, "side"));
    e.source.collector_id = detail::optional_or<std::string>(src, "collector_id", "");
  } else {
    e.source = EventSource{Side::Server, "tc-server"};
  }
  e.seq = detail::optional_or<std::uint64_t>(j, "seq", 0);
  e.timestamp_ms = required<TimestampMs>(j, "timestamp_ms");
  if (j.contains("activity_hint") && !j.at("activity_hint").is_null()) {
    e.activity_hint = required<std::string>(j, "activity_hint");
  }
  e.object_id = required<std::string>(j, "object_id");
  e.kind = parse_event_kind(required<std::string>(j, "kind"));
  e.attributes = detail::attributes_from(j, "attributes");
  return e;
}

/// Parses the POST /api/v1/events/batch body. Events inherit session, actor
/// and client side from the batch envelope.
inline ClientBatch client_batch_from_json(const json& j) {
  using detail::required;
  ClientBatch b;
  b.batch_id = required<std::string>(j, "batch_id");
  b.session_id = required<std::string>(j, "session_id");
  b.actor_id = required<std::string>(j, "actor_id");
  if (j.contains("client_clock_offset_ms") && !j.at("client_clock_offset_ms").is_null()) {
    b.client_clock_offset_ms = required<std::int64_t>(j, "client_clock_offset_ms");
  }
  const auto collector = detail::optional_or<std::string>(j, "collector_id", "tc-client");
  for (const auto& ej : detail::required_array(j, "events")) {
    RawEvent e;
    e.event_id = required<std::string>(ej, "event_id");
    e.session_id = b.session_id;
    e.actor_id = b.actor_id;
    e.source = EventSource{Side::Client, collector};
    e.seq = required<std::uint64_t>(ej, "seq");
    e.timestamp_ms = required<TimestampMs>(ej, "timestamp_ms");
    if (ej.contains("activity_hint") && !ej.at("activity_hint").is_null()) {
      e.activity_hint = required<std::string>(ej, "activity_hint");
    }
    e.object_id = required<std::string>(ej, "object_id");
    e.kind = parse_event_kind(required<std::string>(ej, "kind"));
    e.attributes = detail::attributes_from(ej, "attributes");
    b.events.push_back(std::move(e));
  }
  return b;
}

inline json to_json_value(const ClientBatch& b) {
  json events = json::array();
  for (const auto& e : b.events) {
    json ej = {{"event_id", e.event_id},
               {"seq", e.seq},
               {"timestamp_ms", e.timestamp_ms},
               {"object_id", e.object_id},
               {"kind", std::string(to_token(e.kind))},
               {"attributes", e.attributes}};
    if (e.activity_hint) ej["activity_hint"] = *e.activity_hint;
    events.push_back(std::move(ej));
  }
  json j = {{"batch_id", b.batch_id},
            {"session_id", b.session_id},
            {"actor_id", b.actor_id},
            {"events", events}};
  if (b.client_clock_offset_ms) j["client_clock_offset_ms"] = *b.client_clock_offset_ms;
  return j;
}

// --- traces -----------------------------------------------------------------

inline json to_json_value(const Annotation& a) {
  return {{"key", a.key}, {"value", a.value}, {"author", a.author},
          {"created_at_ms", a.created_at_ms}};
}

inline Annotation annotation_from_json(const json& j) {
  using detail::required;
  return Annotation{required<std::string>(j, "key"), required<std::string>(j, "value"),
                    required<std::string>(j, "author"), required<TimestampMs>(j, "created_at_ms")};
}

inline json to_json_value(const Trace& t) {
  json sequence = json::array();
  for (const auto& el : t.sequence) {
    json annotations = json::array();
    if (const auto* s = std::get_if<State>(&el)) {
      json events = json::array();
      for (const auto& e : s->events) events.push_back(to_json_value(e));
      for (const auto& a : s->annotations) annotations.push_back(to_json_value(a));
      sequence.push_back({{"type", "state"},
                          {"activity", s->activity},
                          {"started_at_ms", s->started_at_ms},
                          {"ended_at_ms", s->ended_at_ms},
                          {"censored", s->censored},
                          {"events", events},
                          {"attributes", s->attributes},
                          {"annotations", annotations}});
    } else {
      const auto& tr = std::get<Transition>(el);
      json events = json::array();
      for (const auto& e : tr.trigger_events) events.push_back(to_json_value(e));
      for (const auto& a : tr.annotations) annotations.push_back(to_json_value(a));
      sequence.push_back({{"type", "transition"},
                          {"trigger_events", events},
                          {"occurred_at_ms", tr.occurred_at_ms},
                          {"from_activity", tr.from_activity},
                          {"to_activity", tr.to_activity},
                          {"annotations", annotations}});
    }
  }
  json quarantined = json::array();
  for (const auto& q : t.quarantined) {
    quarantined.push_back({{"event", to_json_value(q.event)}, {"reason", q.reason}});
  }
  return {{"trace_id", t.trace_id},   {"session_id", t.session_id},
          {"actor_id", t.actor_id},   {"model_version", t.model_version},
          {"sequence", sequence},     {"quarantined", quarantined}};
}

inline Trace trace_from_json(const json& j) {
  using detail::required;
  Trace t;
  t.trace_id = required<std::string>(j, "trace_id");
  t.session_id = required<std::string>(j, "session_id");
  t.actor_id = required<std::string>(j, "actor_id");
  t.model_version = required<std::uint32_t>(j, "model_version");
  for (const auto& el : detail::required_array(j, "sequence")) {
    const auto type = required<std::string>(el, "type");
    if (type == "state") {
      State s;
      s.activity = required<std::string>(el, "activity");
      s.started_at_ms = required<TimestampMs>(el, "started_at_ms");
      s.ended_at_ms = required<TimestampMs>(el, "ended_at_ms");
      s.censored = required<bool>(el, "censored");
      for (const auto& e : detail::required_array(el, "events")) {
        s.events.push_back(raw_event_from_json(e));
      }
      s.attributes = detail::attributes_from(el, "attributes");
      for (const auto& a : detail::required_array(el, "annotations")) {
        s.annotations.push_back(annotation_from_json(a));
      }
      t.sequence.emplace_back(std::move(s));
    } else if (type == "transition") {
      Transition tr;
      for (const auto& e : detail::required_array(el, "trigger_events")) {
        tr.trigger_events.push_back(raw_event_from_json(e));
      }
      tr.occurred_at_ms = required<TimestampMs>(el, "occurred_at_ms");
      tr.from_activity = required<std::string>(el, "from_activity");
      tr.to_activity = required<std::string>(el, "to_activity");
      for (const auto& a : detail::required_array(el, "annotations")) {
        tr.annotations.push_back(annotation_from_json(a));
      }
      t.sequence.emplace_back(std::move(tr));
    } else {
      throw Error(ErrorCode::ParseError, "unknown sequence element type '" + type + "'");
    }
  }
  for (const auto& q : detail::required_array(j, "quarantined")) {
    t.quarantined.push_back({raw_event_from_json(q.contains("event") ? q.at("event") : json()),
                             required<std::string>(q, "reason")});
  }
  return t;
}

/// Parses text as JSON, mapping syntax errors to ErrorCode::ParseError.
inline json parse_json_text(const std::string& text) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::ParseError, e.what());
  }
}

}  // namespace forumtrace
