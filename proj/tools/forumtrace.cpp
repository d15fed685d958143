// forumtrace: command-line front end for the trace store, the ingest
// service and the scenario simulator.

#include <csignal>
#include <ctime>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include <CLI11.hpp>

#include "forumtrace/analysis.hpp"
#include "forumtrace/config.hpp"
#include "forumtrace/export.hpp"
#include "forumtrace/http.hpp"
#include "forumtrace/repository.hpp"
#include "forumtrace/scenario.hpp"
#include "forumtrace/service.hpp"

namespace fs = std::filesystem;
using namespace forumtrace;

namespace {

/// Accepts epoch milliseconds or "YYYY-MM-DD HH:MM:SS" / "YYYY-MM-DDTHH:MM:SS" (UTC).
TimestampMs parse_time(const std::string& text) {
  if (!text.empty() && text.find_first_not_of("-0123456789") == std::string::npos) {
    return detail::parse_int(text, "time");
  }
  std::string s = text;
  if (!s.empty() && s.back() == 'Z') s.pop_back();
  for (auto& c : s) {
    if (c == 'T') c = ' ';
  }
  std::tm tm{};
  std::istringstream in(s);
  in >> std::get_time(&tm, "%Y-%m-%d %H:%M:%S");
  if (in.fail() || in.peek() != std::char_traits<char>::eof()) {
    throw Error(ErrorCode::ParseError, "cannot parse time '" + text + "'");
  }
  return static_cast<TimestampMs>(timegm(&tm)) * 1000;
}

struct Common {
  std::string config_path;
  std::string store_dir = "forumtrace-store";
};

ServiceConfig load_common(const Common& c) {
  ServiceConfig cfg = c.config_path.empty() ? ServiceConfig{} : load_config(c.config_path);
  if (!cfg.store) cfg.store = c.store_dir;
  return cfg;
}

std::optional<UseModel> model_for(const ServiceConfig& cfg) {
  if (!cfg.use_model) return std::nullopt;
  return load_use_model(*cfg.use_model);
}

struct FilterArgs {
  std::string actor;
  std::string activity;
  std::string message_id;
  std::string from;
  std::string to;

  void attach(CLI::App* app) {
    app->add_option("--actor", actor, "Actor id");
    app->add_option("--activity", activity, "Activity type name");
    app->add_option("--message-id", message_id, "message_id attribute value");
    app->add_option("--from", from, "Window start (epoch ms or YYYY-MM-DD HH:MM:SS UTC)");
    app->add_option("--to", to, "Window end (inclusive)");
  }

  QueryFilter filter() const {
    QueryFilter f;
    if (!actor.empty()) f.actor_id = actor;
    if (!activity.empty()) f.activity = activity;
    if (!message_id.empty()) f.object_attr = std::make_pair(std::string("message_id"), message_id);
    if (!from.empty()) f.window.from_ms = parse_time(from);
    if (!to.empty()) f.window.to_ms = parse_time(to);
    return f;
  }

  Window window() const {
    if (from.empty() || to.empty()) throw Error(ErrorCode::InvalidWindow, "--from and --to are required");
    return Window{parse_time(from), parse_time(to)};
  }
};

void emit(const std::string& bytes, const std::string& out_path) {
  if (out_path.empty() || out_path == "-") {
    std::cout << bytes;
  } else {
    write_file(out_path, bytes);
  }
}

HttpApi* g_api = nullptr;

extern "C" void on_signal(int) {
  if (g_api != nullptr) g_api->server().stop();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"forumtrace: forum user-activity traces"};
  app.require_subcommand(1);
  Common common;
  app.add_option("--config", common.config_path, "Service config (JSON)");
  app.add_option("--store", common.store_dir, "Store directory")->capture_default_str();

  // serve
  auto* serve = app.add_subcommand("serve", "Run the HTTP ingest service");

  // ingest
  auto* ingest = app.add_subcommand("ingest", "Load an event file into the store");
  std::string ingest_file;
  bool ingest_finalize = false;
  ingest->add_option("events-file", ingest_file)->required();
  ingest->add_flag("--finalize", ingest_finalize, "Finalize every session afterwards");

  // finalize
  auto* finalize = app.add_subcommand("finalize", "Structure a session into a trace");
  std::string session;
  finalize->add_option("--session", session, "Session id")->required();

  // query
  auto* query = app.add_subcommand("query", "Query stored traces (JSON)");
  FilterArgs query_args;
  query_args.attach(query);

  // export
  auto* exp = app.add_subcommand("export", "Export traces");
  FilterArgs export_args;
  std::string export_format = "xml";
  std::string export_out;
  export_args.attach(exp);
  exp->add_option("--format", export_format, "xml | json | txt")->capture_default_str();
  exp->add_option("--out", export_out, "Output file (default stdout)");

  // import
  auto* imp = app.add_subcommand("import", "Import an xml or json export");
  std::string import_file;
  std::string import_format = "xml";
  imp->add_option("file", import_file)->required();
  imp->add_option("--format", import_format, "xml | json")->capture_default_str();

  // simulate
  auto* simulate = app.add_subcommand("simulate", "Generate a synthetic event file");
  ScenarioSpec spec;
  std::string kind = "mixed";
  std::string sim_from;
  std::string sim_to;
  std::string sim_out;
  simulate->add_option("--kind", kind, "active | lurker | mixed")->capture_default_str();
  simulate->add_option("--actors", spec.actors)->capture_default_str();
  simulate->add_option("--messages", spec.messages)->capture_default_str();
  simulate->add_option("--first-message-id", spec.first_message_id)->capture_default_str();
  simulate->add_option("--seed", spec.seed)->capture_default_str();
  simulate->add_option("--from", sim_from, "Window start");
  simulate->add_option("--to", sim_to, "Window end");
  simulate->add_option("--out", sim_out, "Output file (default stdout)");

  // replay
  auto* rep = app.add_subcommand("replay", "Replay an event file into a store or a running service");
  std::string replay_file;
  std::string target = "direct";
  std::string token;
  ReplayOptions replay_opts;
  bool no_finalize = false;
  rep->add_option("file", replay_file)->required();
  rep->add_option("--target", target, "direct | http://host:port")->capture_default_str();
  rep->add_option("--token", token, "Bearer token for finalize calls");
  rep->add_flag("--shuffle", replay_opts.shuffle_batches, "Duplicate and reorder deliveries");
  rep->add_option("--shuffle-seed", replay_opts.shuffle_seed)->capture_default_str();
  rep->add_flag("--no-finalize", no_finalize, "Skip finalizing sessions");

  // analyze
  auto* analyze = app.add_subcommand("analyze", "Run an analysis over stored traces (JSON)");
  std::string what;
  FilterArgs analyze_args;
  std::optional<double> scale_k;
  std::optional<double> scale_t;
  analyze->add_option("what", what, "readings | lurkers | participation | spheres")
      ->required()
      ->check(CLI::IsMember({"readings", "lurkers", "participation", "spheres"}));
  analyze_args.attach(analyze);
  analyze->add_option("--scale-k", scale_k);
  analyze->add_option("--scale-t", scale_t);

  CLI11_PARSE(app, argc, argv);

  try {
    if (simulate->parsed()) {
      spec.kind = parse_scenario_kind(kind);
      if (!sim_from.empty()) spec.from_ms = parse_time(sim_from);
      if (!sim_to.empty()) spec.to_ms = parse_time(sim_to);
      emit(generate(spec), sim_out);
      return 0;
    }

    auto cfg = load_common(common);

    if (rep->parsed() && target != "direct") {
      HttpTarget http(target, token);
      replay_opts.finalize = !no_finalize;
      auto report = replay(parse_event_file(read_file(replay_file)), http, replay_opts);
      std::cout << to_json_value(report).dump(2) << "\n";
      return report.rejected == 0 && report.failures.empty() ? 0 : 1;
    }

    fs::create_directories(*cfg.store);
    Repository repo(*cfg.store, model_for(cfg));

    if (serve->parsed()) {
      IngestService service(repo, cfg);
      HttpApi api(service);
      g_api = &api;
      std::signal(SIGINT, on_signal);
      std::signal(SIGTERM, on_signal);
      std::cerr << "forumtrace listening on " << cfg.bind << ":" << cfg.port << "\n";
      api.run(cfg.bind, cfg.port);
      g_api = nullptr;
      repo.commit();
      return 0;
    }

    if (ingest->parsed() || rep->parsed()) {
      // Recorded files carry historical timestamps, so the receipt clock
      // comes from the events unless the config says otherwise.
      if (cfg.clock == ClockMode::System && common.config_path.empty()) cfg.clock = ClockMode::Event;
      IngestService service(repo, cfg);
      service.set_autocommit(false);
      DirectTarget direct(service);
      if (ingest->parsed()) {
        replay_opts = ReplayOptions{};
        replay_opts.finalize = ingest_finalize;
      } else {
        replay_opts.finalize = !no_finalize;
      }
      auto report = replay(parse_event_file(read_file(ingest->parsed() ? ingest_file : replay_file)),
                           direct, replay_opts);
      repo.commit();
      std::cout << to_json_value(report).dump(2) << "\n";
      return report.rejected == 0 && report.failures.empty() ? 0 : 1;
    }

    if (finalize->parsed()) {
      IngestService service(repo, cfg);
      std::cout << json{{"trace_id", service.finalize_session(session)}}.dump() << "\n";
      return 0;
    }

    if (query->parsed()) {
      json out = json::array();
      for (const auto& t : repo.query_traces(query_args.filter())) out.push_back(to_json_value(t));
      std::cout << out.dump(2) << "\n";
      return 0;
    }

    if (exp->parsed()) {
      emit(repo.export_traces(export_args.filter(), parse_export_format(export_format)), export_out);
      return 0;
    }

    if (imp->parsed()) {
      auto n = repo.import_traces(read_file(import_file), parse_export_format(import_format),
                                  Principal::instructor());
      repo.commit();
      std::cout << json{{"imported", n}}.dump() << "\n";
      return 0;
    }

    if (analyze->parsed()) {
      IngestService service(repo, cfg);
      const auto who = Principal::instructor();
      const auto window = analyze_args.window();
      std::optional<std::string> message;
      if (!analyze_args.message_id.empty()) message = analyze_args.message_id;
      json out;
      if (what == "readings") {
        out = json::array();
        for (const auto& r : service.readings(message, window, who)) out.push_back(to_json_value(r));
      } else if (what == "lurkers") {
        out = service.lurkers(window, who);
      } else if (what == "participation") {
        out = json::array();
        for (const auto& s : service.participation(window, who)) out.push_back(to_json_value(s));
      } else {
        out = to_json_value(service.spheres(message, window, scale_k, scale_t, who));
      }
      std::cout << out.dump(2) << "\n";
      return 0;
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
