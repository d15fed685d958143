#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdlib>
#include <mutex>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "forumtrace/error.hpp"
#include "forumtrace/structure.hpp"
#include "forumtrace/types.hpp"

namespace forumtrace {

/// Client-buffered events flushed in one request.
struct ClientBatch {
  std::string batch_id;
  std::string session_id;
  std::string actor_id;
  std::optional<std::int64_t> client_clock_offset_ms;  // client_now - server_now
  std::vector<RawEvent> events;

  bool operator==(const ClientBatch&) const = default;
};

struct SyncOptions {
  std::int64_t max_clock_skew_ms = 300'000;
};

/// Scroll events must carry a decimal scroll_ratio in [0,1]; other kinds pass.
inline bool has_valid_scroll_ratio(const RawEvent& e) {
  if (e.kind != EventKind::Scroll) return true;
  auto ratio = e.attribute("scroll_ratio");
  if (!ratio || ratio->empty()) return false;
  char* end = nullptr;
  double v = std::strtod(ratio->c_str(), &end);
  return *end == '\0' && v >= 0.0 && v <= 1.0;
}

/// Rejects batches that break the ClientBatch invariants.
inline void check_batch(const ClientBatch& batch) {
  auto fail = [&](const std::string& why) {
    throw Error(ErrorCode::MalformedBatch, "batch '" + batch.batch_id + "': " + why);
  };
  if (batch.batch_id.empty()) fail("empty batch_id");
  if (batch.session_id.empty() || batch.actor_id.empty()) fail("missing session_id or actor_id");
  std::set<std::string> ids;
  for (std::size_t i = 0; i < batch.events.size(); ++i) {
    const auto& e = batch.events[i];
    if (e.source.side != Side::Client) fail("event '" + e.event_id + "' is not client-side");
    if (e.event_id.empty()) fail("event with empty event_id");
    if (!ids.insert(e.event_id).second) fail("event_id '" + e.event_id + "' repeated");
    if (e.session_id != batch.session_id || e.actor_id != batch.actor_id) {
      fail("event '" + e.event_id + "' does not match batch session/actor");
    }
    if (e.timestamp_ms < 0) fail("event '" + e.event_id + "' has negative timestamp");
    if (i > 0 && e.seq <= batch.events[i - 1].seq) fail("seq not strictly increasing");
    if (!has_valid_scroll_ratio(e)) fail("scroll event '" + e.event_id + "' needs scroll_ratio in [0,1]");
  }
}

/// Receipt time for replays of recorded sessions: the latest offset-corrected
/// timestamp in the batch, i.e. the moment the flush would have happened.
inline TimestampMs event_clock_receipt(const ClientBatch& batch) {
  const auto offset = batch.client_clock_offset_ms.value_or(0);
  TimestampMs receipt = 0;
  for (const auto& e : batch.events) receipt = std::max(receipt, e.timestamp_ms - offset);
  return receipt;
}

/// Moves client timestamps into the server clock frame and clamps them to
/// [receipt - max_skew, receipt].
inline std::vector<RawEvent> adjust_clock(const ClientBatch& batch, TimestampMs receipt_ms,
                                          const SyncOptions& options = {}) {
  const auto offset = batch.client_clock_offset_ms.value_or(0);
  if (std::llabs(offset) > options.max_clock_skew_ms) {
    throw Error(ErrorCode::SkewTooLarge, "offset " + std::to_string(offset) + " ms exceeds " +
                                             std::to_string(options.max_clock_skew_ms) + " ms");
  }
  const TimestampMs lower = std::max<TimestampMs>(0, receipt_ms - options.max_clock_skew_ms);
  std::vector<RawEvent> out = batch.events;
  for (auto& e : out) {
    e.timestamp_ms = std::clamp(e.timestamp_ms - offset, lower, std::max(lower, receipt_ms));
  }
  return out;
}

/// Merges two individually ordered streams into the canonical total order.
inline std::vector<RawEvent> merge_streams(std::span<const RawEvent> client,
                                           std::span<const RawEvent> server) {
  std::vector<RawEvent> out;
  out.reserve(client.size() + server.size());
  out.insert(out.end(), client.begin(), client.end());
  out.insert(out.end(), server.begin(), server.end());
  std::stable_sort(out.begin(), out.end(), canonical_event_less);
  return out;
}

enum class Registration { Fresh, Duplicate };

/// Set of batch ids seen so far. register_batch is an atomic check-and-insert.
class BatchLedger {
 public:
  BatchLedger() = default;
  explicit BatchLedger(std::set<std::string> ids) : ids_(std::move(ids)) {}

  BatchLedger(const BatchLedger& other) : ids_(other.snapshot()) {}
  BatchLedger& operator=(const BatchLedger& other) {
    if (this != &other) {
      auto ids = other.snapshot();
      std::lock_guard lock(mu_);
      ids_ = std::move(ids);
    }
    return *this;
  }

  Registration register_batch(const std::string& batch_id) {
    std::lock_guard lock(mu_);
    return ids_.insert(batch_id).second ? Registration::Fresh : Registration::Duplicate;
  }

  bool contains(const std::string& batch_id) const {
    std::lock_guard lock(mu_);
    return ids_.count(batch_id) > 0;
  }

  std::set<std::string> snapshot() const {
    std::lock_guard lock(mu_);
    return ids_;
  }

 private:
  mutable std::mutex mu_;
  std::set<std::string> ids_;
};

inline Registration register_batch(const std::string& batch_id, BatchLedger& ledger) {
  return ledger.register_batch(batch_id);
}

}  // namespace forumtrace
