#pragma once

// Builders and independent oracles shared by the unit suites and the
// acceptance binary. The oracles deliberately avoid the library's own
// query/analysis code: they walk the raw events in an ingested session and
// recompute the answer from scratch.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include <unistd.h>

#include "forumtrace/analysis.hpp"
#include "forumtrace/repository.hpp"
#include "forumtrace/scenario.hpp"
#include "forumtrace/service.hpp"
#include "forumtrace/structure.hpp"
#include "forumtrace/use_model.hpp"

namespace forumtrace::testing {

inline RawEvent ev(std::string id, TimestampMs ts, Side side, std::string object, EventKind kind,
                   std::optional<std::string> hint = std::nullopt, Attributes attrs = {},
                   std::string session = "s1", std::string actor = "u1") {
  RawEvent e;
  e.event_id = std::move(id);
  e.session_id = std::move(session);
  e.actor_id = std::move(actor);
  e.source = {side, side == Side::Client ? "tc-client" : "tc-server"};
  e.seq = static_cast<std::uint64_t>(ts);
  e.timestamp_ms = ts;
  e.activity_hint = std::move(hint);
  e.object_id = std::move(object);
  e.kind = kind;
  e.attributes = std::move(attrs);
  return e;
}

inline RawEvent display(std::string id, TimestampMs ts, std::string activity, Attributes attrs = {}) {
  return ev(std::move(id), ts, Side::Server, "page", EventKind::Display, std::move(activity),
            std::move(attrs));
}

inline RawEvent click(std::string id, TimestampMs ts, std::string object, Attributes attrs = {}) {
  return ev(std::move(id), ts, Side::Client, std::move(object), EventKind::Click, std::nullopt,
            std::move(attrs));
}

inline RawEvent scroll(std::string id, TimestampMs ts, std::string ratio) {
  return ev(std::move(id), ts, Side::Client, "page", EventKind::Scroll, std::nullopt,
            {{"scroll_ratio", std::move(ratio)}});
}

/// The post-a-message flow: form display, typing, scrolling, submit, posted page.
inline std::vector<RawEvent> post_message_flow() {
  return {display("e1", 1000, "ComposeMessage"),
          ev("e2", 2000, Side::Client, "message_form", EventKind::EditText),
          scroll("e3", 3000, "0.400"),
          click("e4", 4000, "submit_button"),
          display("e5", 4100, "DisplayPostedMessage", {{"message_id", "p1"}})};
}

/// Random but well-formed session stream for property tests. The first event
/// always opens an initial activity; later events mix legal in-state events,
/// rule triggers and a few objects the model has never heard of.
inline std::vector<RawEvent> random_stream(std::uint64_t seed, const UseModel& model,
                                           std::size_t max_len = 60) {
  std::mt19937_64 rng(seed);
  auto pick = [&](std::size_t n) { return static_cast<std::size_t>(rng() % n); };
  std::vector<RawEvent> out;
  const auto& initial = model.initial_activities;
  std::string current = initial[pick(initial.size())];
  TimestampMs t = 1'000'000 + static_cast<TimestampMs>(pick(1000));
  const std::string session = "s" + std::to_string(seed);
  const std::string actor = "a" + std::to_string(seed % 7);
  std::size_t n = 0;
  auto next_id = [&] { return session + ":" + std::to_string(n++); };
  out.push_back(ev(next_id(), t, Side::Server, "page", EventKind::Display, current, {}, session, actor));
  const std::size_t len = 1 + pick(max_len);
  while (out.size() < len) {
    t += static_cast<TimestampMs>(pick(3) == 0 ? 0 : pick(5000));  // ties happen
    const auto roll = pick(10);
    if (roll < 3) {
      std::vector<const TransitionRule*> rules;
      for (const auto& r : model.rules) {
        if (r.from_activity == current) rules.push_back(&r);
      }
      if (!rules.empty()) {
        const auto* r = rules[pick(rules.size())];
        out.push_back(ev(next_id(), t, Side::Client, r->trigger.object_id, r->trigger.kind,
                         std::nullopt, {}, session, actor));
        current = r->to_activity;
        continue;
      }
    }
    if (roll == 9) {
      out.push_back(ev(next_id(), t, pick(2) ? Side::Client : Side::Server, "ghost_" + std::to_string(pick(3)),
                       kAllEventKinds[pick(kAllEventKinds.size())], std::nullopt, {}, session, actor));
      continue;
    }
    // Any observable of any activity: within-state, a trigger or unmatched.
    const auto& a = model.activities[pick(model.activities.size())];
    const auto& o = a.observables[pick(a.observables.size())];
    auto kind = o.events[pick(o.events.size())];
    Attributes attrs;
    if (kind == EventKind::Scroll) attrs["scroll_ratio"] = std::to_string(pick(1001) / 1000.0);
    out.push_back(ev(next_id(), t, pick(4) ? Side::Client : Side::Server, o.object.object_id, kind,
                     std::nullopt, attrs, session, actor));
  }
  for (std::size_t i = 0; i < out.size(); ++i) out[i].seq = i;
  std::stable_sort(out.begin(), out.end(), canonical_event_less);
  return out;
}

/// Strings that stress the export encoders: markup characters, separators,
/// percent signs, whitespace control characters and multi-byte UTF-8.
inline const std::vector<std::string>& awkward_strings() {
  static const std::vector<std::string> v = {
      "plain", "a&b", "<tag attr=\"x\">", "it's", "tab\there", "line\nbreak", "cr\rx",
      "50% off", "k=v&x=y", "caf\xC3\xA9", "\xE2\x9C\x93 done", "", " lead and trail ", "]]>"};
  return v;
}

/// A structured trace with awkward attribute values, annotations on random
/// elements and whatever quarantine the random stream produced.
inline Trace random_trace(std::uint64_t seed, const ValidatedUseModel& model) {
  std::mt19937_64 rng(seed ^ 0xA5A5A5A5ULL);
  const auto& words = awkward_strings();
  auto word = [&] { return words[rng() % words.size()]; };
  auto events = random_stream(seed, model.model(), 40);
  for (auto& e : events) {
    if (rng() % 3 == 0) e.attributes["note"] = word();
    if (rng() % 5 == 0) e.attributes[word() + "_k"] = word();
    if (rng() % 4 == 0) e.attributes["message_id"] = std::to_string(rng() % 30);
  }
  auto trace = structure_trace(model, events.front().session_id, events.front().actor_id, events);
  const auto notes = rng() % 4;
  for (std::uint64_t i = 0; i < notes; ++i) {
    auto key = word();
    if (key.empty()) key = "k";
    trace = annotate(trace, rng() % trace.sequence.size(),
                     {key, word(), "tutor " + word(), static_cast<TimestampMs>(rng() % 2'000'000'000'000ULL)});
  }
  trace.model_version = 1 + static_cast<std::uint32_t>(rng() % 3);
  return trace;
}

/// Every event of the input appears exactly once across states, transition
/// triggers and the quarantine list.
inline bool conserves(const Trace& trace, const std::vector<RawEvent>& input) {
  std::multiset<std::string> seen;
  for (const auto& el : trace.sequence) {
    if (const auto* s = std::get_if<State>(&el)) {
      for (const auto& e : s->events) seen.insert(e.event_id);
    } else {
      for (const auto& e : std::get<Transition>(el).trigger_events) seen.insert(e.event_id);
    }
  }
  for (const auto& q : trace.quarantined) seen.insert(q.event.event_id);
  std::multiset<std::string> expected;
  for (const auto& e : input) expected.insert(e.event_id);
  return seen == expected;
}

inline bool alternates(const Trace& trace) {
  if (trace.sequence.empty() || trace.sequence.size() % 2 == 0) return false;
  for (std::size_t i = 0; i < trace.sequence.size(); ++i) {
    const bool is_state = std::holds_alternative<State>(trace.sequence[i]);
    if (is_state != (i % 2 == 0)) return false;
  }
  return true;
}

inline bool linked(const Trace& trace) {
  for (std::size_t i = 1; i + 1 < trace.sequence.size(); i += 2) {
    const auto& t = std::get<Transition>(trace.sequence[i]);
    if (t.from_activity != std::get<State>(trace.sequence[i - 1]).activity) return false;
    if (t.to_activity != std::get<State>(trace.sequence[i + 1]).activity) return false;
  }
  return true;
}

// --- raw-event oracles -----------------------------------------------------
//
// These recompute answers from the stored raw events of each session with a
// hand-rolled walk over the default use model's click rules. They share no
// code with structure_trace or the analysis functions.

struct OracleState {
  std::string activity;
  TimestampMs start = 0;
  TimestampMs end = 0;
  bool censored = false;
  std::map<std::string, std::string> display_attrs;
  bool has_display = false;
  bool scrolled = false;
  double max_ratio = 0.0;
  std::set<std::pair<std::string, std::string>> attrs_seen;  // state + event attributes
  TimestampMs last = 0;
};

struct OracleSession {
  std::string actor;
  std::vector<OracleState> states;
  std::vector<std::pair<std::string, TimestampMs>> entered;  // (activity, at) for every transition
};

/// Sorts raw events with a hand-written comparator and walks them through a
/// transition table rebuilt from the rule list.
inline OracleSession oracle_walk(const UseModel& model, std::vector<RawEvent> events,
                                 TimestampMs idle_cutoff_ms = 1'800'000) {
  std::sort(events.begin(), events.end(), [](const RawEvent& a, const RawEvent& b) {
    if (a.timestamp_ms != b.timestamp_ms) return a.timestamp_ms < b.timestamp_ms;
    const int sa = a.source.side == Side::Server ? 0 : 1;
    const int sb = b.source.side == Side::Server ? 0 : 1;
    if (sa != sb) return sa < sb;
    if (a.seq != b.seq) return a.seq < b.seq;
    return a.event_id < b.event_id;
  });
  std::map<std::tuple<std::string, std::string, EventKind>, std::string> table;
  for (const auto& r : model.rules) table[{r.from_activity, r.trigger.object_id, r.trigger.kind}] = r.to_activity;
  auto observable = [&](const std::string& activity, const RawEvent& e) {
    for (const auto& a : model.activities) {
      if (a.name != activity) continue;
      for (const auto& o : a.observables) {
        if (o.object.object_id == e.object_id &&
            std::find(o.events.begin(), o.events.end(), e.kind) != o.events.end()) {
          return true;
        }
      }
    }
    return false;
  };
  auto absorb = [](OracleState& s, const RawEvent& e) {
    if (e.kind == EventKind::Display && !s.has_display) {
      s.has_display = true;
      s.display_attrs = e.attributes;
    }
    if (e.kind == EventKind::Scroll) {
      s.scrolled = true;
      s.max_ratio = std::max(s.max_ratio, std::stod(e.attributes.at("scroll_ratio")));
    }
    for (const auto& kv : e.attributes) s.attrs_seen.insert(kv);
    s.last = std::max(s.last, e.timestamp_ms);
  };

  OracleSession out;
  if (events.empty()) return out;
  out.actor = events.front().actor_id;
  OracleState cur;
  cur.activity = *events.front().activity_hint;
  cur.start = cur.last = events.front().timestamp_ms;
  absorb(cur, events.front());
  bool ended_with_session_end = events.front().kind == EventKind::SessionEnd;
  for (std::size_t i = 1; i < events.size(); ++i) {
    const auto& e = events[i];
    auto it = table.find({cur.activity, e.object_id, e.kind});
    if (it != table.end()) {
      if (e.timestamp_ms - cur.last > idle_cutoff_ms) {
        cur.end = cur.last;
        cur.censored = true;
      } else {
        cur.end = e.timestamp_ms;
      }
      out.states.push_back(cur);
      out.entered.emplace_back(it->second, e.timestamp_ms);
      cur = OracleState{};
      cur.activity = it->second;
      cur.start = cur.last = e.timestamp_ms;
      ended_with_session_end = false;
    } else if (observable(cur.activity, e)) {
      absorb(cur, e);
      ended_with_session_end = e.kind == EventKind::SessionEnd;
    }
  }
  cur.end = cur.last;
  cur.censored = !ended_with_session_end;
  out.states.push_back(cur);
  for (auto& s : out.states) {
    for (const auto& kv : s.display_attrs) s.attrs_seen.insert(kv);
  }
  return out;
}

inline std::map<std::string, OracleSession> oracle_sessions(const Repository& repo) {
  std::map<std::string, OracleSession> out;
  auto model = repo.current_model();
  for (const auto& id : repo.session_ids()) {
    auto s = repo.session_events(id);
    out[id] = oracle_walk(model, s->events);
  }
  return out;
}

/// Trace ids (as minted by finalize) whose sessions match the filter.
inline std::vector<std::string> oracle_query(const std::map<std::string, OracleSession>& sessions,
                                             const QueryFilter& f) {
  std::vector<std::pair<TimestampMs, std::string>> hits;
  for (const auto& [id, s] : sessions) {
    if (f.actor_id && s.actor != *f.actor_id) continue;
    bool any = false;
    for (const auto& st : s.states) {
      if (f.window.from_ms && st.end < *f.window.from_ms) continue;
      if (f.window.to_ms && st.start > *f.window.to_ms) continue;
      if (f.activity && st.activity != *f.activity) continue;
      if (f.object_attr && !st.attrs_seen.count(*f.object_attr)) continue;
      any = true;
      break;
    }
    if (any) hits.emplace_back(s.states.front().start, "trace-" + id);
  }
  std::sort(hits.begin(), hits.end());
  std::vector<std::string> ids;
  for (auto& h : hits) ids.push_back(h.second);
  return ids;
}

inline std::vector<ReadingRecord> oracle_readings(const std::map<std::string, OracleSession>& sessions,
                                                  const std::optional<std::string>& message_id,
                                                  TimestampMs from, TimestampMs to, double threshold) {
  std::vector<ReadingRecord> out;
  for (const auto& [_, s] : sessions) {
    for (const auto& st : s.states) {
      if (st.activity != "DisplayMessage" || st.start < from || st.start > to) continue;
      auto m = st.display_attrs.count("message_id") ? st.display_attrs.at("message_id") : std::string();
      if (message_id && m != *message_id) continue;
      ReadingRecord r;
      r.actor_id = s.actor;
      r.message_id = m;
      r.started_at_ms = st.start;
      r.duration_ms = st.end - st.start;
      r.censored = st.censored;
      r.completeness = !st.scrolled ? Completeness::Orange
                       : st.max_ratio >= threshold ? Completeness::Green
                                                   : Completeness::Blue;
      r.max_scroll_ratio = st.max_ratio;
      out.push_back(r);
    }
  }
  std::sort(out.begin(), out.end(), [](const ReadingRecord& a, const ReadingRecord& b) {
    return std::tie(a.started_at_ms, a.actor_id) < std::tie(b.started_at_ms, b.actor_id);
  });
  return out;
}

inline std::map<std::string, std::pair<std::size_t, std::size_t>> oracle_participation(
    const std::map<std::string, OracleSession>& sessions, TimestampMs from, TimestampMs to) {
  std::map<std::string, std::pair<std::size_t, std::size_t>> out;  // actor -> (reads, posts)
  for (const auto& [_, s] : sessions) {
    for (const auto& st : s.states) {
      if ((st.activity == "DisplayMessage" || st.activity == "DisplayThread") && st.start >= from &&
          st.start <= to) {
        ++out[s.actor].first;
      }
    }
    for (const auto& [activity, at] : s.entered) {
      if (activity == "DisplayPostedMessage" && at >= from && at <= to) ++out[s.actor].second;
    }
  }
  return out;
}

/// Replays a generated scenario into a fresh in-memory repository.
struct SeededStore {
  Repository repo;
  std::unique_ptr<IngestService> service;
  ReplayReport report;
};

inline ServiceConfig event_clock_config() {
  ServiceConfig cfg;
  cfg.clock = ClockMode::Event;
  cfg.tokens = {{"inst", Principal::instructor("prof")}, {"stu-u1", Principal::student("u1")}};
  return cfg;
}

inline void seed_store(SeededStore& store, const ScenarioSpec& spec, const ReplayOptions& opts = {}) {
  store.service = std::make_unique<IngestService>(store.repo, event_clock_config());
  store.service->set_autocommit(false);
  DirectTarget target(*store.service);
  store.report = replay(parse_event_file(generate(spec)), target, opts);
}

inline std::filesystem::path fresh_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("forumtrace-" + name + "-" + std::to_string(::getpid()));
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace forumtrace::testing
