#pragma once

// Deterministic synthetic forum sessions (active members, lurkers, mixed
// cohorts) and a replayer that feeds them to the ingest service the way the
// in-page collector and the forum server would.

#include <algorithm>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <type_traits>
#include <utility>
#include <variant>
#include <vector>

#include "forumtrace/error.hpp"
#include "forumtrace/export.hpp"
#include "forumtrace/json_codec.hpp"
#include "forumtrace/service.hpp"
#include "forumtrace/types.hpp"

namespace forumtrace {

enum class ScenarioKind { Active, Lurker, Mixed };

inline std::string_view to_token(ScenarioKind k) {
  switch (k) {
    case ScenarioKind::Active: return "active";
    case ScenarioKind::Lurker: return "lurker";
    case ScenarioKind::Mixed: return "mixed";
  }
  return "?";
}

inline ScenarioKind parse_scenario_kind(std::string_view token) {
  if (token == "active") return ScenarioKind::Active;
  if (token == "lurker") return ScenarioKind::Lurker;
  if (token == "mixed") return ScenarioKind::Mixed;
  throw Error(ErrorCode::InvalidSpec, "scenario kind '" + std::string(token) + "'");
}

/// How far a reader scrolls through a displayed message.
enum class ScrollBehavior { Full, DisplayOnly, Partial };

inline std::string_view to_token(ScrollBehavior b) {
  switch (b) {
    case ScrollBehavior::Full: return "full";
    case ScrollBehavior::DisplayOnly: return "display_only";
    case ScrollBehavior::Partial: return "partial";
  }
  return "?";
}

inline ScrollBehavior parse_scroll_behavior(std::string_view token) {
  if (token == "full") return ScrollBehavior::Full;
  if (token == "display_only") return ScrollBehavior::DisplayOnly;
  if (token == "partial") return ScrollBehavior::Partial;
  throw Error(ErrorCode::InvalidSpec, "scroll behavior '" + std::string(token) + "'");
}

struct ScenarioSpec {
  ScenarioKind kind = ScenarioKind::Mixed;
  int actors = 4;
  int messages = 3;
  int first_message_id = 1;
  std::uint64_t seed = 1;
  TimestampMs from_ms = 1'149'073'971'000;  // 2006-05-31 11:12:51 UTC
  TimestampMs to_ms = 1'149'117'764'000;    // 2006-05-31 23:22:44 UTC
  TimestampMs read_duration_min_ms = 5'000;
  TimestampMs read_duration_max_ms = 180'000;
  // Relative weights of full / display-only / partial readings. The first
  // reading of actor i is always behavior (i mod 3) in that order, so any
  // cohort of three or more covers all three colors.
  double weight_full = 1.0;
  double weight_display_only = 1.0;
  double weight_partial = 1.0;
  TimestampMs max_clock_offset_ms = 2'000;

  bool operator==(const ScenarioSpec&) const = default;
};

struct PlannedReading {
  std::string actor_id;
  std::string message_id;
  ScrollBehavior behavior = ScrollBehavior::Full;

  bool operator==(const PlannedReading&) const = default;
};

/// A parsed event file: header plus flat event lines.
struct EventFile {
  std::optional<ScenarioSpec> spec;
  std::vector<std::string> lurkers;
  std::vector<PlannedReading> readings;
  std::map<std::string, std::int64_t> clock_offsets;  // per actor
  std::vector<TxtLine> lines;
};

inline json to_json_value(const ScenarioSpec& s) {
  return {{"kind", std::string(to_token(s.kind))},
          {"actors", s.actors},
          {"messages", s.messages},
          {"first_message_id", s.first_message_id},
          {"seed", s.seed},
          {"window", {{"from_ms", s.from_ms}, {"to_ms", s.to_ms}}},
          {"read_duration_range_ms", {s.read_duration_min_ms, s.read_duration_max_ms}},
          {"scroll_behavior_mix",
           {{"full", s.weight_full},
            {"display_only", s.weight_display_only},
            {"partial", s.weight_partial}}},
          {"max_clock_offset_ms", s.max_clock_offset_ms}};
}

inline ScenarioSpec scenario_spec_from_json(const json& j) {
  using detail::optional_or;
  ScenarioSpec s;
  s.kind = parse_scenario_kind(optional_or<std::string>(j, "kind", "mixed"));
  s.actors = optional_or<int>(j, "actors", s.actors);
  s.messages = optional_or<int>(j, "messages", s.messages);
  s.first_message_id = optional_or<int>(j, "first_message_id", s.first_message_id);
  s.seed = optional_or<std::uint64_t>(j, "seed", s.seed);
  if (j.contains("window")) {
    s.from_ms = detail::required<TimestampMs>(j.at("window"), "from_ms");
    s.to_ms = detail::required<TimestampMs>(j.at("window"), "to_ms");
  }
  if (j.contains("read_duration_range_ms")) {
    auto range = j.at("read_duration_range_ms").get<std::vector<TimestampMs>>();
    if (range.size() != 2) throw Error(ErrorCode::InvalidSpec, "read_duration_range_ms needs 2 values");
    s.read_duration_min_ms = range[0];
    s.read_duration_max_ms = range[1];
  }
  if (j.contains("scroll_behavior_mix")) {
    const auto& mix = j.at("scroll_behavior_mix");
    s.weight_full = optional_or<double>(mix, "full", s.weight_full);
    s.weight_display_only = optional_or<double>(mix, "display_only", s.weight_display_only);
    s.weight_partial = optional_or<double>(mix, "partial", s.weight_partial);
  }
  s.max_clock_offset_ms = optional_or<TimestampMs>(j, "max_clock_offset_ms", s.max_clock_offset_ms);
  return s;
}

inline void check_spec(const ScenarioSpec& s) {
  auto fail = [](const std::string& why) { throw Error(ErrorCode::InvalidSpec, why); };
  if (s.actors < 1) fail("actors must be >= 1");
  if (s.messages < 1) fail("messages must be >= 1");
  if (s.kind == ScenarioKind::Mixed && s.actors < 2) fail("a mixed cohort needs >= 2 actors");
  if (s.from_ms < 0 || s.from_ms > s.to_ms) fail("invalid window");
  if (s.read_duration_min_ms < 0 || s.read_duration_min_ms > s.read_duration_max_ms) {
    fail("invalid read duration range");
  }
  if (s.weight_full < 0 || s.weight_display_only < 0 || s.weight_partial < 0 ||
      s.weight_full + s.weight_display_only + s.weight_partial <= 0) {
    fail("scroll behavior weights must be non-negative with a positive sum");
  }
  if (s.max_clock_offset_ms < 0) fail("max_clock_offset_ms must be >= 0");
}

inline std::string actor_name(int index) { return "u" + std::to_string(index + 1); }

/// Which actors a spec designates as lurkers. Mixed cohorts make every fourth
/// actor a lurker, and the last actor when that rule would pick none.
inline std::vector<std::string> designated_lurkers(const ScenarioSpec& s) {
  std::vector<std::string> out;
  for (int i = 0; i < s.actors; ++i) {
    bool lurker = s.kind == ScenarioKind::Lurker ||
                  (s.kind == ScenarioKind::Mixed && (i % 4 == 3 || (i == s.actors - 1 && s.actors < 4)));
    if (lurker) out.push_back(actor_name(i));
  }
  return out;
}

namespace detail {

/// splitmix64: portable and fully specified, unlike std distributions.
class ScenarioRng {
 public:
  explicit ScenarioRng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next() {
    std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  /// Uniform integer in [lo, hi].
  std::int64_t range(std::int64_t lo, std::int64_t hi) {
    if (hi <= lo) return lo;
    return lo + static_cast<std::int64_t>(next() % static_cast<std::uint64_t>(hi - lo + 1));
  }

  /// Uniform double in [0, 1).
  double unit() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

 private:
  std::uint64_t state_;
};

inline std::string ratio_text(int thousandths) {
  std::string digits = std::to_string(thousandths % 1000);
  while (digits.size() < 3) digits.insert(digits.begin(), '0');
  return std::to_string(thousandths / 1000) + "." + digits;
}

/// Builds one actor's session on a relative clock starting at 0.
class SessionBuilder {
 public:
  SessionBuilder(std::string session, std::string actor, ScenarioRng& rng)
      : session_(std::move(session)), actor_(std::move(actor)), rng_(rng) {}

  void server_display(const std::string& activity, Attributes attrs = {}) {
    push(Side::Server, activity, "page", EventKind::Display, std::move(attrs));
  }

  void client(const std::string& object, EventKind kind, Attributes attrs = {}) {
    push(Side::Client, "-", object, kind, std::move(attrs));
  }

  void advance(TimestampMs lo, TimestampMs hi) { t_ += rng_.range(lo, hi); }
  void think() { advance(1'500, 8'000); }
  void latency() { advance(40, 400); }

  /// Click on a link or button, then the server renders the next page.
  void navigate(const std::string& object, const std::string& activity, Attributes click_attrs,
                Attributes page_attrs) {
    client(object, EventKind::Click, std::move(click_attrs));
    latency();
    server_display(activity, std::move(page_attrs));
  }

  TimestampMs now() const { return t_; }
  void set_now(TimestampMs t) { t_ = t; }
  std::vector<TxtLine>& lines() { return lines_; }

 private:
  void push(Side side, std::string activity, std::string object, EventKind kind, Attributes attrs) {
    lines_.push_back({t_, session_, actor_, side, std::move(activity), std::move(object), kind,
                      std::move(attrs)});
    t_ += 1;  // strictly increasing within a session
  }

  std::string session_;
  std::string actor_;
  ScenarioRng& rng_;
  TimestampMs t_ = 0;
  std::vector<TxtLine> lines_;
};

}  // namespace detail

struct GeneratedScenario {
  ScenarioSpec spec;
  std::vector<std::string> lurkers;
  std::vector<PlannedReading> readings;
  std::map<std::string, std::int64_t> clock_offsets;
  std::vector<TxtLine> lines;  // absolute timestamps, server clock frame
};

inline GeneratedScenario generate_scenario(const ScenarioSpec& spec) {
  check_spec(spec);
  GeneratedScenario out;
  out.spec = spec;
  out.lurkers = designated_lurkers(spec);
  const std::set<std::string> lurker_set(out.lurkers.begin(), out.lurkers.end());
  const double weight_sum = spec.weight_full + spec.weight_display_only + spec.weight_partial;

  for (int i = 0; i < spec.actors; ++i) {
    const auto actor = actor_name(i);
    const auto session = "s" + std::to_string(spec.seed) + "-" + actor;
    const bool lurker = lurker_set.count(actor) > 0;
    detail::ScenarioRng rng(spec.seed * 0x100000001B3ULL + static_cast<std::uint64_t>(i) * 7919 + 1);
    detail::SessionBuilder b(session, actor, rng);

    out.clock_offsets[actor] = rng.range(-spec.max_clock_offset_ms, spec.max_clock_offset_ms);

    // Which messages this actor reads (at least one), ascending.
    std::vector<int> pool;
    for (int m = 0; m < spec.messages; ++m) pool.push_back(spec.first_message_id + m);
    const auto count = static_cast<std::size_t>(rng.range(1, spec.messages));
    for (std::size_t k = 0; k < count; ++k) {
      std::swap(pool[k], pool[k + static_cast<std::size_t>(rng.range(0, static_cast<std::int64_t>(pool.size() - k - 1)))]);
    }
    std::vector<int> reads(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(count));
    std::sort(reads.begin(), reads.end());

    const Attributes thread = {{"thread_id", "t1"}};
    b.server_display("DisplayForumIndex");
    b.think();
    b.navigate("thread_link", "DisplayThread", thread, thread);

    int posts = 0;
    for (std::size_t r = 0; r < reads.size(); ++r) {
      const auto msg = std::to_string(reads[r]);
      const Attributes msg_attr = {{"message_id", msg}};
      b.think();
      b.client("message_link", EventKind::Click, msg_attr);
      const TimestampMs read_start = b.now() - 1;
      b.latency();
      b.server_display("DisplayMessage", msg_attr);

      ScrollBehavior behavior;
      if (r == 0) {
        behavior = static_cast<ScrollBehavior>(i % 3);
      } else {
        double u = rng.unit() * weight_sum;
        behavior = u < spec.weight_full                               ? ScrollBehavior::Full
                   : u < spec.weight_full + spec.weight_display_only ? ScrollBehavior::DisplayOnly
                                                                     : ScrollBehavior::Partial;
      }
      out.readings.push_back({actor, msg, behavior});

      const auto duration = std::max<TimestampMs>(
          rng.range(spec.read_duration_min_ms, spec.read_duration_max_ms), b.now() - read_start + 64);
      const TimestampMs read_end = read_start + duration;
      const TimestampMs body = read_end - b.now() - 8;  // room for in-page events
      if (behavior == ScrollBehavior::DisplayOnly) {
        if (body > 16 && rng.range(0, 1) == 1) {
          b.advance(1, body / 2);
          b.client("message_image", EventKind::Mouseover, msg_attr);
        }
      } else {
        const int steps = static_cast<int>(rng.range(2, 5));
        const int top = behavior == ScrollBehavior::Full ? 1000 : static_cast<int>(rng.range(200, 900));
        for (int s = 1; s <= steps; ++s) {
          int ratio = top * s / steps;
          if (behavior == ScrollBehavior::Full && s == steps) ratio = 1000;
          if (body > 8 * steps) b.advance(1, body / (steps + 1));
          b.client("page", EventKind::Scroll, {{"scroll_ratio", detail::ratio_text(ratio)}});
        }
      }
      b.set_now(std::max(b.now(), read_end));

      const bool reply = !lurker && (posts == 0 || rng.range(0, 3) == 0);
      if (reply) {
        b.navigate("reply_link", "ComposeMessage", msg_attr, {{"parent_id", msg}});
        b.advance(500, 3'000);
        b.client("message_form", EventKind::Focus);
        const int edits = static_cast<int>(rng.range(3, 8));
        for (int e = 0; e < edits; ++e) {
          b.advance(800, 4'000);
          b.client("message_form", EventKind::EditText);
        }
        b.advance(500, 3'000);
        ++posts;
        const auto posted = actor + "-p" + std::to_string(posts);
        b.navigate("submit_button", "DisplayPostedMessage", {},
                   {{"message_id", posted}, {"parent_id", msg}});
        b.think();
      }
      b.navigate("thread_link", "DisplayThread", thread, thread);
    }

    b.think();
    if (rng.range(0, 1) == 1) {
      b.navigate("logout_link", "Logout", {}, {});
      b.advance(100, 1'000);
    }
    b.client("page", EventKind::SessionEnd);

    auto& lines = b.lines();
    const TimestampMs length = lines.back().timestamp_ms;
    if (length > spec.to_ms - spec.from_ms) {
      throw Error(ErrorCode::InvalidSpec, "window too short for session of " + actor);
    }
    const TimestampMs start = spec.from_ms + rng.range(0, spec.to_ms - spec.from_ms - length);
    for (auto& l : lines) {
      l.timestamp_ms += start;
      out.lines.push_back(std::move(l));
    }
  }

  std::stable_sort(out.lines.begin(), out.lines.end(), [](const TxtLine& a, const TxtLine& b) {
    if (a.timestamp_ms != b.timestamp_ms) return a.timestamp_ms < b.timestamp_ms;
    return a.session_id < b.session_id;
  });
  return out;
}

inline std::string event_file_text(const GeneratedScenario& g) {
  json readings = json::array();
  for (const auto& r : g.readings) {
    readings.push_back({{"actor_id", r.actor_id},
                        {"message_id", r.message_id},
                        {"behavior", std::string(to_token(r.behavior))}});
  }
  json header = {{"format", "forumtrace-events"},
                 {"version", 1},
                 {"spec", to_json_value(g.spec)},
                 {"lurkers", g.lurkers},
                 {"readings", readings},
                 {"clock_offsets", g.clock_offsets}};
  std::string out = header.dump() + "\n";
  for (const auto& l : g.lines) {
    out += format_txt_line(l);
    out += '\n';
  }
  return out;
}

/// generate(): the event-file bytes for a spec. Pure function of the spec.
inline std::string generate(const ScenarioSpec& spec) { return event_file_text(generate_scenario(spec)); }

/// Parses an event file. The JSON header line is optional, so a plain TXT
/// export is also a valid (offset-free) event file.
inline EventFile parse_event_file(std::string_view text) {
  EventFile f;
  bool first = true;
  std::size_t line_no = 0;
  while (!text.empty()) {
    auto nl = text.find('\n');
    auto line = text.substr(0, nl);
    text.remove_prefix(nl == std::string_view::npos ? text.size() : nl + 1);
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty()) continue;
    if (first && line.front() == '{') {
      auto h = parse_json_text(std::string(line));
      if (h.contains("spec")) f.spec = scenario_spec_from_json(h.at("spec"));
      if (h.contains("lurkers")) f.lurkers = h.at("lurkers").get<std::vector<std::string>>();
      if (h.contains("readings")) {
        for (const auto& r : h.at("readings")) {
          f.readings.push_back({detail::required<std::string>(r, "actor_id"),
                                detail::required<std::string>(r, "message_id"),
                                parse_scroll_behavior(detail::required<std::string>(r, "behavior"))});
        }
      }
      if (h.contains("clock_offsets")) {
        f.clock_offsets = h.at("clock_offsets").get<std::map<std::string, std::int64_t>>();
      }
      first = false;
      continue;
    }
    first = false;
    try {
      f.lines.push_back(parse_txt_line(line));
    } catch (const Error& e) {
      throw Error(ErrorCode::ParseError, "line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return f;
}

// --- replay -------------------------------------------------------------------

/// Where replayed deliveries go: the library directly or a running service.
class ReplayTarget {
 public:
  virtual ~ReplayTarget() = default;
  virtual Ack submit_batch(const ClientBatch& batch) = 0;
  virtual Ack submit_server_event(const RawEvent& event) = 0;
  virtual std::string finalize(const std::string& session_id) = 0;
};

class DirectTarget : public ReplayTarget {
 public:
  explicit DirectTarget(IngestService& service) : service_(service) {}

  Ack submit_batch(const ClientBatch& batch) override { return service_.handle_client_batch(batch); }
  Ack submit_server_event(const RawEvent& event) override {
    return service_.handle_server_event(event);
  }
  std::string finalize(const std::string& session_id) override {
    return service_.finalize_session(session_id);
  }

 private:
  IngestService& service_;
};

using Delivery = std::variant<ClientBatch, RawEvent>;

/// Turns event lines into what the collectors would send: server events one
/// by one, client events buffered and flushed at every click and at session
/// end. Ids and sequence numbers are derived from line order, so the same
/// file always yields the same deliveries.
inline std::vector<Delivery> plan_deliveries(const EventFile& file) {
  std::vector<Delivery> out;
  std::map<std::string, std::uint64_t> ordinal;
  std::map<std::string, std::uint64_t> batch_no;
  std::map<std::string, ClientBatch> pending;

  auto flush = [&](const std::string& session) {
    auto it = pending.find(session);
    if (it == pending.end() || it->second.events.empty()) return;
    auto& batch = it->second;
    batch.batch_id = session + ":b" + std::to_string(++batch_no[session]);
    out.emplace_back(std::move(batch));
    pending.erase(it);
  };

  for (const auto& l : file.lines) {
    const auto n = ordinal[l.session_id]++;
    RawEvent e;
    e.event_id = l.session_id + ":" + std::to_string(n);
    e.session_id = l.session_id;
    e.actor_id = l.actor_id;
    e.source = EventSource{l.side, l.side == Side::Client ? "tc-client" : "tc-server"};
    e.seq = n;
    e.timestamp_ms = l.timestamp_ms;
    if (l.activity != "-") e.activity_hint = l.activity;
    e.object_id = l.object_id;
    e.kind = l.kind;
    e.attributes = l.attributes;

    if (l.side == Side::Server) {
      out.emplace_back(std::move(e));
      continue;
    }
    auto offset_it = file.clock_offsets.find(l.actor_id);
    const std::int64_t offset = offset_it == file.clock_offsets.end() ? 0 : offset_it->second;
    auto& batch = pending[l.session_id];
    batch.session_id = l.session_id;
    batch.actor_id = l.actor_id;
    batch.client_clock_offset_ms = offset;
    e.timestamp_ms += offset;  // the client's own clock
    const bool boundary = e.kind == EventKind::Click || e.kind == EventKind::SessionEnd;
    batch.events.push_back(std::move(e));
    if (boundary) flush(l.session_id);
  }
  std::vector<std::string> leftovers;
  for (const auto& [session, _] : pending) leftovers.push_back(session);
  for (const auto& s : leftovers) flush(s);
  return out;
}

struct ReplayOptions {
  bool shuffle_batches = false;
  std::uint64_t shuffle_seed = 1;
  bool finalize = true;
};

struct ReplayReport {
  std::size_t deliveries = 0;
  std::size_t accepted = 0;
  std::size_t duplicates = 0;
  std::size_t rejected = 0;
  std::size_t events_accepted = 0;
  std::size_t sessions = 0;
  std::vector<std::string> trace_ids;
  std::vector<std::string> failures;
};

inline json to_json_value(const ReplayReport& r) {
  return {{"deliveries", r.deliveries},   {"accepted", r.accepted},
          {"duplicates", r.duplicates},   {"rejected", r.rejected},
          {"events_accepted", r.events_accepted},
          {"sessions", r.sessions},       {"trace_ids", r.trace_ids},
          {"failures", r.failures}};
}

inline ReplayReport replay(const EventFile& file, ReplayTarget& target, const ReplayOptions& options = {}) {
  auto deliveries = plan_deliveries(file);
  if (options.shuffle_batches) {
    detail::ScenarioRng rng(options.shuffle_seed);
    std::vector<Delivery> noisy;
    for (const auto& d : deliveries) {
      const auto copies = rng.range(1, 3);
      for (std::int64_t c = 0; c < copies; ++c) noisy.push_back(d);
    }
    for (std::size_t i = noisy.size(); i > 1; --i) {
      std::swap(noisy[i - 1], noisy[static_cast<std::size_t>(rng.range(0, static_cast<std::int64_t>(i - 1)))]);
    }
    deliveries = std::move(noisy);
  }

  ReplayReport report;
  std::set<std::string> sessions;
  for (const auto& d : deliveries) {
    Ack ack = std::visit(
        [&](const auto& item) {
          sessions.insert(item.session_id);
          if constexpr (std::is_same_v<std::decay_t<decltype(item)>, ClientBatch>) {
            return target.submit_batch(item);
          } else {
            return target.submit_server_event(item);
          }
        },
        d);
    ++report.deliveries;
    switch (ack.status) {
      case AckStatus::Accepted:
        ++report.accepted;
        report.events_accepted += ack.accepted_count;
        break;
      case AckStatus::Duplicate: ++report.duplicates; break;
      case AckStatus::Rejected:
        ++report.rejected;
        report.failures.push_back(ack.message.value_or("rejected"));
        break;
    }
  }
  report.sessions = sessions.size();
  if (options.finalize) {
    for (const auto& s : sessions) {
      try {
        report.trace_ids.push_back(target.finalize(s));
      } catch (const Error& e) {
        if (e.code() == ErrorCode::TargetUnreachable) throw;
        report.failures.push_back(s + ": " + e.what());
      }
    }
  }
  return report;
}

}  // namespace forumtrace
