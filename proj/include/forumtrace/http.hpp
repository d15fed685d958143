#pragma once

// HTTP binding of IngestService (cpp-httplib) and the matching client used
// by `replay --target http://...`.

#include <atomic>
#include <charconv>
#include <condition_variable>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <utility>

#include <httplib.h>

#include "forumtrace/analysis.hpp"
#include "forumtrace/error.hpp"
#include "forumtrace/export.hpp"
#include "forumtrace/json_codec.hpp"
#include "forumtrace/scenario.hpp"
#include "forumtrace/service.hpp"

namespace forumtrace {

inline int http_status_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::Unauthorized: return 403;
    case ErrorCode::UnknownSession:
    case ErrorCode::UnknownTrace: return 404;
    case ErrorCode::ActivityInUse:
    case ErrorCode::DuplicateTraceId: return 409;
    case ErrorCode::ValidationFailed:
    case ErrorCode::StructuringFailed:
    case ErrorCode::InvariantViolation:
    case ErrorCode::PathOutOfBounds: return 422;
    case ErrorCode::IoError: return 500;
    default: return 400;
  }
}

class HttpApi {
 public:
  explicit HttpApi(IngestService& service) : service_(service) { install_routes(); }

  ~HttpApi() { stop(); }

  HttpApi(const HttpApi&) = delete;
  HttpApi& operator=(const HttpApi&) = delete;

  /// Binds and serves on a background thread. Port 0 picks a free port.
  int start(const std::string& host, int port) {
    int bound = port == 0 ? server_.bind_to_any_port(host) : (server_.bind_to_port(host, port) ? port : -1);
    if (bound < 0) throw Error(ErrorCode::IoError, "cannot bind " + host + ":" + std::to_string(port));
    listener_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
    if (service_.config().clock == ClockMode::System) start_idle_sweeper();
    return bound;
  }

  /// Serves on the calling thread until stop().
  void run(const std::string& host, int port) {
    if (service_.config().clock == ClockMode::System) start_idle_sweeper();
    if (!server_.listen(host, port)) {
      throw Error(ErrorCode::IoError, "cannot listen on " + host + ":" + std::to_string(port));
    }
  }

  void stop() {
    {
      std::lock_guard lock(sweep_mu_);
      stopping_ = true;
    }
    sweep_cv_.notify_all();
    if (sweeper_.joinable()) sweeper_.join();
    server_.stop();
    if (listener_.joinable()) listener_.join();
  }

  httplib::Server& server() { return server_; }

 private:
  using Req = httplib::Request;
  using Res = httplib::Response;

  static void send_json(Res& res, const json& body, int status = 200) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
  }

  static void send_error(Res& res, const Error& e) {
    send_json(res, {{"error", std::string(to_string(e.code()))}, {"message", e.what()}},
              http_status_for(e.code()));
  }

  static void send_ack(Res& res, const Ack& ack) {
    send_json(res, to_json_value(ack), ack.status == AckStatus::Rejected ? 400 : 200);
  }

  Principal authenticate(const Req& req) const {
    const auto header = req.get_header_value("Authorization");
    const std::string prefix = "Bearer ";
    if (header.compare(0, prefix.size(), prefix) == 0) {
      auto it = service_.config().tokens.find(header.substr(prefix.size()));
      if (it != service_.config().tokens.end()) return it->second;
    }
    throw Error(ErrorCode::Unauthorized, "missing or unknown bearer token");
  }

  static std::optional<std::string> param(const Req& req, const char* key) {
    if (!req.has_param(key)) return std::nullopt;
    return req.get_param_value(key);
  }

  static std::optional<std::int64_t> int_param(const Req& req, const char* key) {
    auto text = param(req, key);
    if (!text) return std::nullopt;
    std::int64_t v = 0;
    auto [ptr, ec] = std::from_chars(text->data(), text->data() + text->size(), v);
    if (ec != std::errc() || ptr != text->data() + text->size()) {
      throw Error(ErrorCode::ParseError, std::string("query parameter '") + key + "' is not an integer");
    }
    return v;
  }

  static std::optional<double> double_param(const Req& req, const char* key) {
    auto text = param(req, key);
    if (!text) return std::nullopt;
    try {
      std::size_t used = 0;
      double v = std::stod(*text, &used);
      if (used != text->size()) throw std::invalid_argument(key);
      return v;
    } catch (const std::exception&) {
      throw Error(ErrorCode::ParseError, std::string("query parameter '") + key + "' is not a number");
    }
  }

  static Window required_window(const Req& req) {
    auto from = int_param(req, "from_ms");
    auto to = int_param(req, "to_ms");
    if (!from || !to) throw Error(ErrorCode::InvalidWindow, "from_ms and to_ms are required");
    return Window{*from, *to};
  }

  static QueryFilter filter_from(const Req& req) {
    QueryFilter f;
    f.actor_id = param(req, "actor");
    f.activity = param(req, "activity");
    if (auto m = param(req, "message_id")) f.object_attr = std::make_pair(std::string("message_id"), *m);
    f.window = TimeWindow{int_param(req, "from_ms"), int_param(req, "to_ms")};
    return f;
  }

  template <typename Fn>
  static void guarded(Res& res, Fn&& fn) {
    try {
      fn();
    } catch (const Error& e) {
      send_error(res, e);
    } catch (const json::exception& e) {
      send_error(res, Error(ErrorCode::ParseError, e.what()));
    }
  }

  void install_routes() {
    server_.Post("/api/v1/events/batch", [this](const Req& req, Res& res) {
      guarded(res, [&] {
        ClientBatch batch;
        try {
          batch = client_batch_from_json(parse_json_text(req.body));
        } catch (const Error& e) {
          send_ack(res, Ack::rejected(e.what()));
          return;
        }
        send_ack(res, service_.handle_client_batch(batch));
      });
    });

    server_.Post("/api/v1/events/server", [this](const Req& req, Res& res) {
      guarded(res, [&] {
        RawEvent event;
        try {
          event = raw_event_from_json(parse_json_text(req.body));
        } catch (const Error& e) {
          send_ack(res, Ack::rejected(e.what()));
          return;
        }
        send_ack(res, service_.handle_server_event(event));
      });
    });

    server_.Post(R"(/api/v1/sessions/([^/]+)/finalize)", [this](const Req& req, Res& res) {
      guarded(res, [&] {
        require_instructor(authenticate(req), "finalize");
        send_json(res, {{"trace_id", service_.finalize_session(req.matches[1])}});
      });
    });

    server_.Get("/api/v1/traces", [this](const Req& req, Res& res) {
      guarded(res, [&] {
        auto traces = service_.query(filter_from(req), authenticate(req));
        json out = json::array();
        for (const auto& t : traces) out.push_back(to_json_value(t));
        send_json(res, out);
      });
    });

    server_.Post(R"(/api/v1/traces/([^/]+)/annotations)", [this](const Req& req, Res& res) {
      guarded(res, [&] {
        auto who = authenticate(req);
        require_instructor(who, "annotation");
        auto body = parse_json_text(req.body);
        Annotation a{detail::required<std::string>(body, "key"),
                     detail::required<std::string>(body, "value"), who.actor_id,
                     detail::optional_or<TimestampMs>(body, "created_at_ms", system_now_ms())};
        auto index = detail::required<std::size_t>(body, "index");
        auto trace = service_.repository().annotate_trace(req.matches[1], index, std::move(a));
        service_.repository().commit();
        send_json(res, to_json_value(trace));
      });
    });

    server_.Get("/api/v1/analysis/readings", [this](const Req& req, Res& res) {
      guarded(res, [&] {
        auto readings = service_.readings(param(req, "message_id"), required_window(req), authenticate(req));
        json out = json::array();
        for (const auto& r : readings) out.push_back(to_json_value(r));
        send_json(res, out);
      });
    });

    server_.Get("/api/v1/analysis/lurkers", [this](const Req& req, Res& res) {
      guarded(res, [&] {
        send_json(res, service_.lurkers(required_window(req), authenticate(req)));
      });
    });

    server_.Get("/api/v1/analysis/participation", [this](const Req& req, Res& res) {
      guarded(res, [&] {
        json out = json::array();
        for (const auto& s : service_.participation(required_window(req), authenticate(req))) {
          out.push_back(to_json_value(s));
        }
        send_json(res, out);
      });
    });

    server_.Get("/api/v1/viz/spheres", [this](const Req& req, Res& res) {
      guarded(res, [&] {
        auto tl = service_.spheres(param(req, "message_id"), required_window(req),
                                   double_param(req, "scale_k"), double_param(req, "scale_t"),
                                   authenticate(req));
        send_json(res, to_json_value(tl));
      });
    });

    server_.Get("/api/v1/export", [this](const Req& req, Res& res) {
      guarded(res, [&] {
        auto who = authenticate(req);
        auto format = parse_export_format(param(req, "format").value_or("xml"));
        auto body = service_.repository().export_traces(filter_from(req), format, who);
        const char* type = format == ExportFormat::Xml    ? "application/xml"
                           : format == ExportFormat::Json ? "application/json"
                                                          : "text/plain";
        res.set_content(body, type);
      });
    });

    server_.Get("/api/v1/admin/model", [this](const Req& req, Res& res) {
      guarded(res, [&] {
        require_instructor(authenticate(req), "model administration");
        auto& repo = service_.repository();
        send_json(res, {{"version", repo.model_version()}, {"model", to_json_value(repo.current_model())}});
      });
    });

    server_.Post("/api/v1/admin/activities", [this](const Req& req, Res& res) {
      guarded(res, [&] {
        auto who = authenticate(req);
        auto body = parse_json_text(req.body);
        // Reuse the model-document parser for the observables list.
        auto parsed = use_model_from_json(
            {{"activities", json::array({body})}, {"rules", json::array()}, {"initial", json::array()}});
        auto& repo = service_.repository();
        auto model = repo.admin_add_activity_type(who, parsed.activities.front().name,
                                                  parsed.activities.front().observables);
        repo.commit();
        send_json(res, {{"version", repo.model_version()}, {"model", to_json_value(model)}});
      });
    });

    server_.Delete(R"(/api/v1/admin/activities/([^/]+))", [this](const Req& req, Res& res) {
      guarded(res, [&] {
        auto& repo = service_.repository();
        auto model = repo.admin_remove_activity_type(authenticate(req), req.matches[1]);
        repo.commit();
        send_json(res, {{"version", repo.model_version()}, {"model", to_json_value(model)}});
      });
    });
  }

  void start_idle_sweeper() {
    sweeper_ = std::thread([this] {
      std::unique_lock lock(sweep_mu_);
      while (!sweep_cv_.wait_for(lock, std::chrono::seconds(30), [this] { return stopping_; })) {
        lock.unlock();
        service_.finalize_idle(system_now_ms());
        lock.lock();
      }
    });
  }

  IngestService& service_;
  httplib::Server server_;
  std::thread listener_;
  std::thread sweeper_;
  std::mutex sweep_mu_;
  std::condition_variable sweep_cv_;
  bool stopping_ = false;
};

/// Replay target that talks to a running service over HTTP.
class HttpTarget : public ReplayTarget {
 public:
  HttpTarget(const std::string& base_url, std::string token)
      : client_(base_url), token_(std::move(token)) {
    client_.set_connection_timeout(5);
    client_.set_read_timeout(30);
  }

  Ack submit_batch(const ClientBatch& batch) override {
    return post_ack("/api/v1/events/batch", to_json_value(batch).dump());
  }

  Ack submit_server_event(const RawEvent& event) override {
    return post_ack("/api/v1/events/server", to_json_value(event).dump());
  }

  std::string finalize(const std::string& session_id) override {
    auto res = client_.Post("/api/v1/sessions/" + session_id + "/finalize", headers(), "",
                            "application/json");
    auto body = check(res);
    if (res->status != 200) throw_remote(body);
    return detail::required<std::string>(body, "trace_id");
  }

  httplib::Client& client() { return client_; }

  httplib::Headers headers() const {
    httplib::Headers h;
    if (!token_.empty()) h.emplace("Authorization", "Bearer " + token_);
    return h;
  }

 private:
  json check(const httplib::Result& res) {
    if (!res) {
      throw Error(ErrorCode::TargetUnreachable, httplib::to_string(res.error()));
    }
    return parse_json_text(res->body);
  }

  [[noreturn]] static void throw_remote(const json& body) {
    throw Error(ErrorCode::StructuringFailed,
                detail::optional_or<std::string>(body, "message", "remote error"));
  }

  Ack post_ack(const std::string& path, const std::string& body) {
    auto res = client_.Post(path, headers(), body, "application/json");
    return ack_from_json(check(res));
  }

  httplib::Client client_;
  std::string token_;
};

}  // namespace forumtrace
