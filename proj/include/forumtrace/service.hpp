#pragma once

#include <algorithm>
#include <array>
#include <chrono>
#include <cstddef>
#include <functional>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "forumtrace/analysis.hpp"
#include "forumtrace/config.hpp"
#include "forumtrace/error.hpp"
#include "forumtrace/repository.hpp"
#include "forumtrace/structure.hpp"
#include "forumtrace/sync.hpp"
#include "forumtrace/types.hpp"

namespace forumtrace {

enum class AckStatus { Accepted, Duplicate, Rejected };

inline std::string_view to_token(AckStatus s) {
  switch (s) {
    case AckStatus::Accepted: return "accepted";
    case AckStatus::Duplicate: return "duplicate";
    case AckStatus::Rejected: return "rejected";
  }
  return "?";
}

inline AckStatus parse_ack_status(std::string_view token) {
  if (token == "accepted") return AckStatus::Accepted;
  if (token == "duplicate") return AckStatus::Duplicate;
  if (token == "rejected") return AckStatus::Rejected;
  throw Error(ErrorCode::UnknownToken, "ack status '" + std::string(token) + "'");
}

struct Ack {
  AckStatus status = AckStatus::Accepted;
  std::size_t accepted_count = 0;
  std::optional<std::string> message;

  static Ack accepted(std::size_t n) { return {AckStatus::Accepted, n, std::nullopt}; }
  static Ack duplicate() { return {AckStatus::Duplicate, 0, std::nullopt}; }
  static Ack rejected(std::string why) { return {AckStatus::Rejected, 0, std::move(why)}; }

  bool operator==(const Ack&) const = default;
};

inline json to_json_value(const Ack& a) {
  json j = {{"status", std::string(to_token(a.status))}, {"accepted_count", a.accepted_count}};
  if (a.message) j["message"] = *a.message;
  return j;
}

inline Ack ack_from_json(const json& j) {
  Ack a;
  a.status = parse_ack_status(detail::required<std::string>(j, "status"));
  a.accepted_count = detail::required<std::size_t>(j, "accepted_count");
  if (j.contains("message") && j.at("message").is_string()) a.message = j.at("message").get<std::string>();
  return a;
}

inline TimestampMs system_now_ms() {
  return std::chrono::duration_cast<std::chrono::milliseconds>(
             std::chrono::system_clock::now().time_since_epoch())
      .count();
}

/// Transport-independent ingest front door: accepts client batches and
/// server events, finalizes sessions into traces and answers the
/// query/analysis requests the HTTP layer exposes.
class IngestService {
 public:
  using Clock = std::function<TimestampMs()>;

  IngestService(Repository& repo, ServiceConfig config, Clock clock = system_now_ms)
      : repo_(repo), config_(std::move(config)), clock_(std::move(clock)) {}

  const ServiceConfig& config() const { return config_; }
  Repository& repository() { return repo_; }

  /// Persist after every mutating call (off for bulk CLI ingestion).
  void set_autocommit(bool on) { autocommit_ = on; }

  Ack handle_client_batch(const ClientBatch& batch) {
    std::vector<RawEvent> adjusted;
    try {
      check_batch(batch);
      const TimestampMs receipt =
          config_.clock == ClockMode::Event ? event_clock_receipt(batch) : clock_();
      adjusted = adjust_clock(batch, receipt, SyncOptions{config_.max_clock_skew_ms});
    } catch (const Error& e) {
      return Ack::rejected(e.what());
    }
    const bool ends_session = std::any_of(adjusted.begin(), adjusted.end(), [](const RawEvent& e) {
      return e.kind == EventKind::SessionEnd;
    });
    const auto n = adjusted.size();
    Registration reg;
    {
      std::lock_guard lock(session_lock(batch.session_id));
      try {
        reg = repo_.append_client_events(batch.batch_id, batch.session_id, batch.actor_id,
                                         std::move(adjusted));
      } catch (const Error& e) {
        return Ack::rejected(e.what());
      }
    }
    if (reg == Registration::Duplicate) return Ack::duplicate();
    if (ends_session) try_finalize(batch.session_id);
    maybe_commit();
    return Ack::accepted(n);
  }

  Ack handle_server_event(const RawEvent& event) {
    if (event.source.side != Side::Server) return Ack::rejected("event is not server-side");
    if (!event.activity_hint || event.activity_hint->empty()) {
      return Ack::rejected("server event '" + event.event_id + "' lacks activity_hint");
    }
    if (event.event_id.empty() || event.session_id.empty() || event.actor_id.empty()) {
      return Ack::rejected("event_id, session_id and actor_id are required");
    }
    if (event.timestamp_ms < 0) return Ack::rejected("negative timestamp");
    if (!has_valid_scroll_ratio(event)) return Ack::rejected("scroll event needs scroll_ratio in [0,1]");
    Registration reg;
    {
      std::lock_guard lock(session_lock(event.session_id));
      try {
        reg = repo_.append_server_event(event);
      } catch (const Error& e) {
        return Ack::rejected(e.what());
      }
    }
    if (reg == Registration::Duplicate) return Ack::duplicate();
    if (event.kind == EventKind::SessionEnd) try_finalize(event.session_id);
    maybe_commit();
    return Ack::accepted(1);
  }

  /// Merges, structures and stores one session. Re-finalizing an unchanged
  /// session returns the existing trace id without touching the store.
  std::string finalize_session(const std::string& session_id) {
    std::lock_guard lock(session_lock(session_id));
    auto session = repo_.session_events(session_id);
    if (!session || session->events.empty()) {
      throw Error(ErrorCode::UnknownSession, session_id);
    }
    auto prior = repo_.finalized(session_id);
    if (prior && prior->event_count == session->events.size() && repo_.get_trace(prior->trace_id)) {
      return prior->trace_id;
    }

    const auto version = prior ? prior->model_version : repo_.model_version();
    auto model = validate_use_model(repo_.model(version));

    std::vector<RawEvent> client;
    std::vector<RawEvent> server;
    for (auto& e : session->events) {
      (e.source.side == Side::Client ? client : server).push_back(std::move(e));
    }
    std::sort(client.begin(), client.end(), canonical_event_less);
    std::sort(server.begin(), server.end(), canonical_event_less);
    auto merged = merge_streams(client, server);

    Trace trace;
    try {
      trace = structure_trace(model, session_id, session->actor_id, merged,
                              StructureOptions{config_.idle_cutoff_ms});
    } catch (const Error& e) {
      throw Error(ErrorCode::StructuringFailed, e.what());
    }
    trace.model_version = version;
    const auto id = prior ? repo_.put_trace(std::move(trace)) : repo_.store_trace(std::move(trace));
    repo_.record_finalized(session_id, FinalizedSession{id, merged.size(), version});
    maybe_commit();
    return id;
  }

  /// Finalizes every session whose newest event is older than the idle
  /// cutoff and which changed since its last finalization.
  std::vector<std::string> finalize_idle(TimestampMs now) {
    std::vector<std::string> done;
    for (const auto& id : repo_.session_ids()) {
      auto session = repo_.session_events(id);
      if (!session || session->events.empty()) continue;
      auto prior = repo_.finalized(id);
      if (prior && prior->event_count == session->events.size()) continue;
      TimestampMs last = 0;
      for (const auto& e : session->events) last = std::max(last, e.timestamp_ms);
      if (now - last <= config_.idle_cutoff_ms) continue;
      if (try_finalize(id)) done.push_back(id);
    }
    return done;
  }

  // --- exploitation -------------------------------------------------------

  std::vector<Trace> query(const QueryFilter& filter, const Principal& who) const {
    return repo_.query_traces(filter, who);
  }

  std::vector<ReadingRecord> readings(const std::optional<std::string>& message_id,
                                      const Window& window, const Principal& who) const {
    require_valid(window);
    QueryFilter filter;
    filter.window = TimeWindow{window.from_ms, window.to_ms};
    filter.activity = kDisplayMessage;
    if (message_id) filter.object_attr = std::make_pair(std::string("message_id"), *message_id);
    auto traces = repo_.query_traces(filter, who);
    return extract_readings(traces, message_id, window,
                            AnalysisOptions{config_.bottom_threshold});
  }

  std::set<std::string> lurkers(const Window& window, const Principal& who) const {
    require_instructor(who, "lurker detection");
    return detect_lurkers(traces_in(window), window);
  }

  std::vector<ParticipationSummary> participation(const Window& window, const Principal& who) const {
    require_instructor(who, "participation summary");
    return participation_summary(traces_in(window), window);
  }

  SphereTimeline spheres(const std::optional<std::string>& message_id, const Window& window,
                         std::optional<double> scale_k, std::optional<double> scale_t,
                         const Principal& who) const {
    return build_sphere_timeline(readings(message_id, window, who), window,
                                 scale_k.value_or(config_.scale_k),
                                 scale_t.value_or(config_.scale_t), message_id);
  }

 private:
  std::vector<Trace> traces_in(const Window& window) const {
    require_valid(window);
    QueryFilter filter;
    filter.window = TimeWindow{window.from_ms, window.to_ms};
    return repo_.query_traces(filter);
  }

  bool try_finalize(const std::string& session_id) {
    try {
      finalize_session(session_id);
      return true;
    } catch (const Error&) {
      // Incomplete sessions (e.g. session_end delivered before the opening
      // display) are finalized again later.
      return false;
    }
  }

  void maybe_commit() {
    if (autocommit_) repo_.commit();
  }

  std::mutex& session_lock(const std::string& session_id) {
    return session_locks_[std::hash<std::string>{}(session_id) % session_locks_.size()];
  }

  Repository& repo_;
  ServiceConfig config_;
  Clock clock_;
  bool autocommit_ = true;
  std::array<std::mutex, 64> session_locks_;
};

}  // namespace forumtrace
