#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <shared_mutex>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "forumtrace/error.hpp"
#include "forumtrace/export.hpp"
#include "forumtrace/json_codec.hpp"
#include "forumtrace/structure.hpp"
#include "forumtrace/sync.hpp"
#include "forumtrace/types.hpp"
#include "forumtrace/use_model.hpp"

namespace forumtrace {

enum class Role { Instructor, Student };

inline std::string_view to_token(Role r) { return r == Role::Instructor ? "instructor" : "student"; }

inline Role parse_role(std::string_view token) {
  if (token == "instructor") return Role::Instructor;
  if (token == "student") return Role::Student;
  throw Error(ErrorCode::UnknownToken, "role '" + std::string(token) + "'");
}

struct Principal {
  Role role = Role::Student;
  std::string actor_id;

  static Principal instructor(std::string actor = "instructor") {
    return {Role::Instructor, std::move(actor)};
  }
  static Principal student(std::string actor) { return {Role::Student, std::move(actor)}; }
};

inline void require_instructor(const Principal& p, std::string_view what) {
  if (p.role != Role::Instructor) {
    throw Error(ErrorCode::Unauthorized, std::string(what) + " requires the instructor role");
  }
}

struct QueryFilter {
  std::optional<std::string> actor_id;
  std::optional<std::string> activity;
  std::optional<std::pair<std::string, std::string>> object_attr;
  TimeWindow window;
};

/// True when `state` satisfies every present field of `filter`. The
/// object_attr pair may sit on the state itself or on any event inside it.
inline bool state_matches(const State& state, const QueryFilter& filter) {
  if (!filter.window.overlaps(state.started_at_ms, state.ended_at_ms)) return false;
  if (filter.activity && state.activity != *filter.activity) return false;
  if (filter.object_attr) {
    const auto& [key, value] = *filter.object_attr;
    auto it = state.attributes.find(key);
    bool found = it != state.attributes.end() && it->second == value;
    for (std::size_t i = 0; !found && i < state.events.size(); ++i) {
      auto a = state.events[i].attributes.find(key);
      found = a != state.events[i].attributes.end() && a->second == value;
    }
    if (!found) return false;
  }
  return true;
}

inline bool trace_matches(const Trace& trace, const QueryFilter& filter) {
  if (filter.actor_id && trace.actor_id != *filter.actor_id) return false;
  for (const auto& el : trace.sequence) {
    if (const auto* s = std::get_if<State>(&el); s != nullptr && state_matches(*s, filter)) return true;
  }
  return false;
}

inline TimestampMs first_state_start(const Trace& t) {
  for (const auto& el : t.sequence) {
    if (const auto* s = std::get_if<State>(&el)) return s->started_at_ms;
  }
  return 0;
}

/// Bookkeeping for a finalized session so unchanged sessions finalize as a
/// no-op and changed ones re-structure under their original model version.
struct FinalizedSession {
  std::string trace_id;
  std::size_t event_count = 0;
  std::uint32_t model_version = 1;

  bool operator==(const FinalizedSession&) const = default;
};

struct SessionEvents {
  std::string actor_id;
  std::vector<RawEvent> events;  // arrival order
};

/// The trace store: structured traces with secondary indexes, the raw events
/// awaiting structuring, the batch ledger and the versioned use model.
///
/// In-memory tables guarded by a reader/writer lock. When constructed with a
/// directory, commit() writes an atomic JSON snapshot there and the
/// constructor reloads it.
class Repository {
 public:
  Repository() : models_{default_forum_use_model()} {}

  explicit Repository(UseModel initial_model) : models_{std::move(initial_model)} {
    validate_use_model(models_.front());
  }

  explicit Repository(std::filesystem::path dir, std::optional<UseModel> initial_model = {})
      : dir_(std::move(dir)) {
    if (std::filesystem::exists(snapshot_path())) {
      load();
    } else {
      models_.push_back(initial_model ? std::move(*initial_model) : default_forum_use_model());
      validate_use_model(models_.front());
    }
  }

  Repository(const Repository&) = delete;
  Repository& operator=(const Repository&) = delete;

  // --- use model --------------------------------------------------------

  std::uint32_t model_version() const {
    std::shared_lock lock(mu_);
    return static_cast<std::uint32_t>(models_.size());
  }

  UseModel current_model() const {
    std::shared_lock lock(mu_);
    return models_.back();
  }

  UseModel model(std::uint32_t version) const {
    std::shared_lock lock(mu_);
    if (version == 0 || version > models_.size()) {
      throw Error(ErrorCode::ValidationFailed, "unknown model version " + std::to_string(version));
    }
    return models_[version - 1];
  }

  UseModel admin_add_activity_type(const Principal& who, const std::string& name,
                                   std::vector<ObservableObject> observables) {
    require_instructor(who, "adding an activity type");
    std::unique_lock lock(mu_);
    UseModel next = models_.back();
    next.activities.push_back(ActivityType{name, std::move(observables)});
    try {
      validate_use_model(next);
    } catch (const Error& e) {
      throw Error(ErrorCode::ValidationFailed, e.what());
    }
    models_.push_back(next);
    return next;
  }

  UseModel admin_remove_activity_type(const Principal& who, const std::string& name) {
    require_instructor(who, "removing an activity type");
    std::unique_lock lock(mu_);
    UseModel next = models_.back();
    auto it = std::find_if(next.activities.begin(), next.activities.end(),
                           [&](const ActivityType& a) { return a.name == name; });
    if (it == next.activities.end()) {
      throw Error(ErrorCode::ValidationFailed, "activity '" + name + "' is not declared");
    }
    for (const auto& r : next.rules) {
      if (r.from_activity == name || r.to_activity == name) {
        throw Error(ErrorCode::ActivityInUse, "'" + name + "' is referenced by a transition rule");
      }
    }
    if (next.is_initial(name)) {
      throw Error(ErrorCode::ActivityInUse, "'" + name + "' is an initial activity");
    }
    if (activity_index_.count(name) > 0 && !activity_index_.at(name).empty()) {
      throw Error(ErrorCode::ActivityInUse, "'" + name + "' is referenced by stored traces");
    }
    next.activities.erase(it);
    try {
      validate_use_model(next);
    } catch (const Error& e) {
      throw Error(ErrorCode::ValidationFailed, e.what());
    }
    models_.push_back(next);
    return next;
  }

  // --- traces -----------------------------------------------------------

  std::string store_trace(Trace trace) {
    if (trace.trace_id.empty()) trace.trace_id = trace_id_for_session(trace.session_id);
    check_trace_invariants(trace);
    std::unique_lock lock(mu_);
    if (traces_.count(trace.trace_id) > 0) {
      throw Error(ErrorCode::DuplicateTraceId, trace.trace_id);
    }
    auto id = trace.trace_id;
    insert_locked(std::move(trace));
    return id;
  }

  /// Inserts or overwrites a trace (session re-finalization).
  std::string put_trace(Trace trace) {
    check_trace_invariants(trace);
    std::unique_lock lock(mu_);
    auto id = trace.trace_id;
    if (traces_.count(id) > 0) erase_locked(id);
    insert_locked(std::move(trace));
    return id;
  }

  std::optional<Trace> get_trace(const std::string& trace_id) const {
    std::shared_lock lock(mu_);
    auto it = traces_.find(trace_id);
    if (it == traces_.end()) return std::nullopt;
    return it->second;
  }

  std::size_t trace_count() const {
    std::shared_lock lock(mu_);
    return traces_.size();
  }

  /// Adds an annotation to a stored trace (enrichment); events are untouched.
  Trace annotate_trace(const std::string& trace_id, std::size_t index, Annotation annotation) {
    std::unique_lock lock(mu_);
    auto it = traces_.find(trace_id);
    if (it == traces_.end()) throw Error(ErrorCode::UnknownTrace, trace_id);
    it->second = annotate(it->second, index, std::move(annotation));
    return it->second;
  }

  std::vector<Trace> query_traces(const QueryFilter& filter) const {
    require_valid(filter.window);
    std::shared_lock lock(mu_);
    std::optional<std::set<std::string>> candidates;
    auto narrow = [&](const std::map<std::string, std::set<std::string>>& index,
                      const std::string& key) {
      std::set<std::string> hits;
      if (auto it = index.find(key); it != index.end()) hits = it->second;
      if (!candidates) {
        candidates = std::move(hits);
        return;
      }
      std::set<std::string> both;
      std::set_intersection(candidates->begin(), candidates->end(), hits.begin(), hits.end(),
                            std::inserter(both, both.begin()));
      candidates = std::move(both);
    };
    if (filter.actor_id) narrow(actor_index_, *filter.actor_id);
    if (filter.activity) narrow(activity_index_, *filter.activity);
    if (filter.object_attr && filter.object_attr->first == "message_id") {
      narrow(message_index_, filter.object_attr->second);
    }

    std::vector<const Trace*> hits;
    if (candidates) {
      for (const auto& id : *candidates) {
        const auto& t = traces_.at(id);
        if (trace_matches(t, filter)) hits.push_back(&t);
      }
    } else {
      // Start-time index: a trace whose first state starts after to_ms cannot overlap.
      auto end = filter.window.to_ms ? start_index_.upper_bound(*filter.window.to_ms)
                                     : start_index_.end();
      for (auto it = start_index_.begin(); it != end; ++it) {
        const auto& t = traces_.at(it->second);
        if (trace_matches(t, filter)) hits.push_back(&t);
      }
    }
    std::sort(hits.begin(), hits.end(), [](const Trace* a, const Trace* b) {
      auto sa = first_state_start(*a);
      auto sb = first_state_start(*b);
      return sa != sb ? sa < sb : a->trace_id < b->trace_id;
    });
    std::vector<Trace> out;
    out.reserve(hits.size());
    for (const auto* t : hits) out.push_back(*t);
    return out;
  }

  /// Applies role rules: students only ever see their own traces.
  std::vector<Trace> query_traces(const QueryFilter& filter, const Principal& who) const {
    return query_traces(scope_filter(filter, who));
  }

  static QueryFilter scope_filter(QueryFilter filter, const Principal& who) {
    if (who.role == Role::Student) {
      if (filter.actor_id && *filter.actor_id != who.actor_id) {
        throw Error(ErrorCode::Unauthorized, "students may only query their own traces");
      }
      filter.actor_id = who.actor_id;
    }
    return filter;
  }

  std::string export_traces(const QueryFilter& filter, ExportFormat format,
                            const Principal& who) const {
    require_instructor(who, "export");
    auto traces = query_traces(filter);
    return export_document(TraceDocument{model_version(), std::move(traces)}, format);
  }

  std::string export_traces(const QueryFilter& filter, ExportFormat format) const {
    return export_traces(filter, format, Principal::instructor());
  }

  /// All-or-nothing: every trace is validated and checked for id clashes
  /// before any is stored.
  std::size_t import_traces(std::string_view bytes, ExportFormat format,
                            const Principal& who = Principal::instructor()) {
    require_instructor(who, "import");
    auto doc = import_document(bytes, format);
    std::set<std::string> ids;
    for (const auto& t : doc.traces) {
      check_trace_invariants(t);
      if (!ids.insert(t.trace_id).second) throw Error(ErrorCode::DuplicateTraceId, t.trace_id);
    }
    std::unique_lock lock(mu_);
    for (const auto& id : ids) {
      if (traces_.count(id) > 0) throw Error(ErrorCode::DuplicateTraceId, id);
    }
    for (auto& t : doc.traces) insert_locked(std::move(t));
    return doc.traces.size();
  }

  // --- raw events -------------------------------------------------------

  /// Atomically registers the batch id and appends its (already adjusted)
  /// events. Duplicate batches change nothing.
  Registration append_client_events(const std::string& batch_id, const std::string& session_id,
                                    const std::string& actor_id, std::vector<RawEvent> events) {
    std::unique_lock lock(mu_);
    if (ledger_.contains(batch_id)) return Registration::Duplicate;
    check_session_owner_locked(session_id, actor_id);
    for (const auto& e : events) {
      if (event_ids_.count(e.event_id) > 0) {
        throw Error(ErrorCode::MalformedBatch,
                    "event_id '" + e.event_id + "' already stored under another batch");
      }
    }
    ledger_.register_batch(batch_id);
    auto& session = sessions_[session_id];
    session.actor_id = actor_id;
    for (auto& e : events) {
      event_ids_.insert(e.event_id);
      session.events.push_back(std::move(e));
    }
    return Registration::Fresh;
  }

  Registration append_server_event(RawEvent event) {
    std::unique_lock lock(mu_);
    if (event_ids_.count(event.event_id) > 0) return Registration::Duplicate;
    check_session_owner_locked(event.session_id, event.actor_id);
    event_ids_.insert(event.event_id);
    auto& session = sessions_[event.session_id];
    session.actor_id = event.actor_id;
    session.events.push_back(std::move(event));
    return Registration::Fresh;
  }

  std::optional<SessionEvents> session_events(const std::string& session_id) const {
    std::shared_lock lock(mu_);
    auto it = sessions_.find(session_id);
    if (it == sessions_.end()) return std::nullopt;
    return it->second;
  }

  std::vector<std::string> session_ids() const {
    std::shared_lock lock(mu_);
    std::vector<std::string> out;
    for (const auto& [id, _] : sessions_) out.push_back(id);
    return out;
  }

  std::size_t event_count() const {
    std::shared_lock lock(mu_);
    return event_ids_.size();
  }

  bool batch_seen(const std::string& batch_id) const { return ledger_.contains(batch_id); }

  std::optional<FinalizedSession> finalized(const std::string& session_id) const {
    std::shared_lock lock(mu_);
    auto it = finalized_.find(session_id);
    if (it == finalized_.end()) return std::nullopt;
    return it->second;
  }

  void record_finalized(const std::string& session_id, FinalizedSession info) {
    std::unique_lock lock(mu_);
    finalized_[session_id] = std::move(info);
  }

  // --- persistence ------------------------------------------------------

  const std::optional<std::filesystem::path>& directory() const { return dir_; }

  /// Writes the snapshot (temp file + rename). No-op for in-memory stores.
  void commit() const {
    if (!dir_) return;
    std::string text;
    {
      std::shared_lock lock(mu_);
      text = snapshot_locked().dump() + "\n";
    }
    std::filesystem::create_directories(*dir_);
    auto tmp = snapshot_path();
    tmp += ".tmp";
    {
      std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
      if (!out) throw Error(ErrorCode::IoError, "cannot write " + tmp.string());
      out << text;
      out.flush();
      if (!out) throw Error(ErrorCode::IoError, "short write to " + tmp.string());
    }
    std::filesystem::rename(tmp, snapshot_path());
  }

 private:
  std::filesystem::path snapshot_path() const { return *dir_ / "store.json"; }

  void check_session_owner_locked(const std::string& session_id, const std::string& actor_id) const {
    auto it = sessions_.find(session_id);
    if (it != sessions_.end() && it->second.actor_id != actor_id) {
      throw Error(ErrorCode::MalformedBatch,
                  "session '" + session_id + "' belongs to actor '" + it->second.actor_id + "'");
    }
  }

  void insert_locked(Trace trace) {
    const auto id = trace.trace_id;
    actor_index_[trace.actor_id].insert(id);
    for (const auto& el : trace.sequence) {
      if (const auto* s = std::get_if<State>(&el)) {
        activity_index_[s->activity].insert(id);
        if (auto it = s->attributes.find("message_id"); it != s->attributes.end()) {
          message_index_[it->second].insert(id);
        }
        for (const auto& e : s->events) {
          if (auto it = e.attributes.find("message_id"); it != e.attributes.end()) {
            message_index_[it->second].insert(id);
          }
        }
      } else {
        const auto& t = std::get<Transition>(el);
        activity_index_[t.from_activity].insert(id);
        activity_index_[t.to_activity].insert(id);
      }
    }
    start_index_.emplace(first_state_start(trace), id);
    traces_.emplace(id, std::move(trace));
  }

  void erase_locked(const std::string& id) {
    auto drop = [&](std::map<std::string, std::set<std::string>>& index) {
      for (auto it = index.begin(); it != index.end();) {
        it->second.erase(id);
        it = it->second.empty() ? index.erase(it) : std::next(it);
      }
    };
    drop(actor_index_);
    drop(activity_index_);
    drop(message_index_);
    for (auto it = start_index_.begin(); it != start_index_.end();) {
      it = it->second == id ? start_index_.erase(it) : std::next(it);
    }
    traces_.erase(id);
  }

  json snapshot_locked() const {
    json models = json::array();
    for (const auto& m : models_) models.push_back(to_json_value(m));
    json traces = json::array();
    for (const auto& [_, t] : traces_) traces.push_back(to_json_value(t));
    json sessions = json::array();
    for (const auto& [id, s] : sessions_) {
      json events = json::array();
      for (const auto& e : s.events) events.push_back(to_json_value(e));
      sessions.push_back({{"session_id", id}, {"actor_id", s.actor_id}, {"events", events}});
    }
    json finalized = json::array();
    for (const auto& [id, f] : finalized_) {
      finalized.push_back({{"session_id", id},
                           {"trace_id", f.trace_id},
                           {"event_count", f.event_count},
                           {"model_version", f.model_version}});
    }
    return {{"format", "forumtrace-store"}, {"version", 1},         {"models", models},
            {"traces", traces},             {"sessions", sessions}, {"ledger", ledger_.snapshot()},
            {"finalized", finalized}};
  }

  void load() {
    std::ifstream in(snapshot_path(), std::ios::binary);
    if (!in) throw Error(ErrorCode::IoError, "cannot read " + snapshot_path().string());
    std::stringstream buf;
    buf << in.rdbuf();
    auto root = parse_json_text(buf.str());
    for (const auto& m : detail::required_array(root, "models")) models_.push_back(use_model_from_json(m));
    if (models_.empty()) throw Error(ErrorCode::ParseError, "store snapshot has no model");
    for (const auto& t : detail::required_array(root, "traces")) insert_locked(trace_from_json(t));
    for (const auto& s : detail::required_array(root, "sessions")) {
      auto& session = sessions_[detail::required<std::string>(s, "session_id")];
      session.actor_id = detail::required<std::string>(s, "actor_id");
      for (const auto& e : detail::required_array(s, "events")) {
        session.events.push_back(raw_event_from_json(e));
        event_ids_.insert(session.events.back().event_id);
      }
    }
    ledger_ = BatchLedger(detail::required<std::set<std::string>>(root, "ledger"));
    for (const auto& f : detail::required_array(root, "finalized")) {
      finalized_[detail::required<std::string>(f, "session_id")] =
          FinalizedSession{detail::required<std::string>(f, "trace_id"),
                           detail::required<std::size_t>(f, "event_count"),
                           detail::required<std::uint32_t>(f, "model_version")};
    }
  }

  mutable std::shared_mutex mu_;
  std::optional<std::filesystem::path> dir_;
  std::vector<UseModel> models_;  // version = index + 1

  std::map<std::string, Trace> traces_;
  std::map<std::string, std::set<std::string>> actor_index_;
  std::map<std::string, std::set<std::string>> activity_index_;
  std::map<std::string, std::set<std::string>> message_index_;
  std::multimap<TimestampMs, std::string> start_index_;

  std::map<std::string, SessionEvents> sessions_;
  std::set<std::string> event_ids_;
  BatchLedger ledger_;
  std::map<std::string, FinalizedSession> finalized_;
};

}  // namespace forumtrace
