#include <gtest/gtest.h>

#include <arpa/inet.h>
#include <netinet/in.h>
#include <sys/socket.h>
#include <unistd.h>

#include "forumtrace/http.hpp"
#include "support.hpp"

using namespace forumtrace;
using namespace forumtrace::testing;

namespace {

const ScenarioSpec& small_spec() {
  static const ScenarioSpec s = [] {
    ScenarioSpec spec;
    spec.actors = 4;
    spec.messages = 2;
    spec.first_message_id = 25;
    spec.seed = 11;
    return spec;
  }();
  return s;
}

std::string window_query() {
  return "from_ms=" + std::to_string(small_spec().from_ms) + "&to_ms=" + std::to_string(small_spec().to_ms);
}

/// A service on an ephemeral port, torn down with the fixture.
class HttpFixture : public ::testing::Test {
 protected:
  void SetUp() override {
    service_ = std::make_unique<IngestService>(repo_, event_clock_config());
    service_->set_autocommit(false);
    api_ = std::make_unique<HttpApi>(*service_);
    port_ = api_->start("127.0.0.1", 0);
    base_ = "http://127.0.0.1:" + std::to_string(port_);
  }

  void TearDown() override { api_->stop(); }

  httplib::Client client() const {
    httplib::Client c("127.0.0.1", port_);
    c.set_read_timeout(30);
    return c;
  }

  static httplib::Headers bearer(const std::string& token) { return {{"Authorization", "Bearer " + token}}; }

  ReplayReport seed(const ReplayOptions& opts = {}) {
    HttpTarget target(base_, "inst");
    return replay(parse_event_file(generate(small_spec())), target, opts);
  }

  Repository repo_;
  std::unique_ptr<IngestService> service_;
  std::unique_ptr<HttpApi> api_;
  int port_ = 0;
  std::string base_;
};

}  // namespace

TEST(HttpStatus, ErrorCodeMapping) {
  EXPECT_EQ(http_status_for(ErrorCode::Unauthorized), 403);
  EXPECT_EQ(http_status_for(ErrorCode::UnknownSession), 404);
  EXPECT_EQ(http_status_for(ErrorCode::UnknownTrace), 404);
  EXPECT_EQ(http_status_for(ErrorCode::ActivityInUse), 409);
  EXPECT_EQ(http_status_for(ErrorCode::ValidationFailed), 422);
  EXPECT_EQ(http_status_for(ErrorCode::InvalidWindow), 400);
}

TEST_F(HttpFixture, ReplayOverHttpMatchesDirectReplay) {
  auto report = seed();
  EXPECT_EQ(report.rejected, 0u);
  EXPECT_TRUE(report.failures.empty());
  EXPECT_EQ(report.trace_ids.size(), 4u);

  SeededStore direct;
  seed_store(direct, small_spec());
  EXPECT_EQ(repo_.export_traces({}, ExportFormat::Xml), direct.repo.export_traces({}, ExportFormat::Xml));
}

TEST_F(HttpFixture, BatchEndpointAcksAndDuplicates) {
  ClientBatch b;
  b.batch_id = "b1";
  b.session_id = "s1";
  b.actor_id = "u1";
  b.events = {scroll("e1", 100, "0.5")};
  auto c = client();
  auto first = c.Post("/api/v1/events/batch", to_json_value(b).dump(), "application/json");
  ASSERT_TRUE(first);
  EXPECT_EQ(first->status, 200);
  EXPECT_EQ(ack_from_json(parse_json_text(first->body)), Ack::accepted(1));
  auto again = c.Post("/api/v1/events/batch", to_json_value(b).dump(), "application/json");
  EXPECT_EQ(ack_from_json(parse_json_text(again->body)), Ack::duplicate());

  auto junk = c.Post("/api/v1/events/batch", "{not json", "application/json");
  EXPECT_EQ(junk->status, 400);
  EXPECT_EQ(ack_from_json(parse_json_text(junk->body)).status, AckStatus::Rejected);
}

TEST_F(HttpFixture, AuthorizationIsEnforced) {
  seed();
  auto c = client();
  auto anonymous = c.Get("/api/v1/traces");
  EXPECT_EQ(anonymous->status, 403);
  EXPECT_EQ(parse_json_text(anonymous->body).at("error"), "Unauthorized");
  EXPECT_EQ(c.Get("/api/v1/traces", bearer("wrong"))->status, 403);

  auto own = c.Get("/api/v1/traces", bearer("stu-u1"));
  ASSERT_EQ(own->status, 200);
  auto traces = parse_json_text(own->body);
  ASSERT_EQ(traces.size(), 1u);
  EXPECT_EQ(traces[0].at("actor_id"), "u1");

  EXPECT_EQ(c.Get("/api/v1/analysis/lurkers?" + window_query(), bearer("stu-u1"))->status, 403);
  EXPECT_EQ(c.Post("/api/v1/sessions/x/finalize", bearer("stu-u1"), "", "application/json")->status, 403);
  EXPECT_EQ(c.Delete("/api/v1/admin/activities/DisplayThread", bearer("stu-u1"))->status, 403);
}

TEST_F(HttpFixture, AnalysisEndpointsMatchLibrary) {
  seed();
  auto c = client();
  const Window w{small_spec().from_ms, small_spec().to_ms};

  auto lurkers = c.Get("/api/v1/analysis/lurkers?" + window_query(), bearer("inst"));
  ASSERT_EQ(lurkers->status, 200);
  EXPECT_EQ(parse_json_text(lurkers->body).get<std::set<std::string>>(),
            service_->lurkers(w, Principal::instructor()));
  EXPECT_EQ(parse_json_text(lurkers->body).get<std::set<std::string>>(),
            (std::set<std::string>{"u4"}));

  auto readings = c.Get("/api/v1/analysis/readings?message_id=25&" + window_query(), bearer("inst"));
  ASSERT_EQ(readings->status, 200);
  auto expected = service_->readings(std::string("25"), w, Principal::instructor());
  auto got = parse_json_text(readings->body);
  ASSERT_EQ(got.size(), expected.size());
  for (std::size_t i = 0; i < expected.size(); ++i) EXPECT_EQ(reading_from_json(got[i]), expected[i]);

  auto spheres = c.Get("/api/v1/viz/spheres?message_id=25&scale_k=2&scale_t=3&" + window_query(), bearer("inst"));
  ASSERT_EQ(spheres->status, 200);
  auto tl = sphere_timeline_from_json(parse_json_text(spheres->body));
  EXPECT_EQ(tl, service_->spheres(std::string("25"), w, 2.0, 3.0, Principal::instructor()));
  for (const auto& s : tl.spheres) {
    EXPECT_EQ(s.diameter, 2.0 * (static_cast<double>(s.reading.duration_ms) / 1000.0));
  }

  auto part = c.Get("/api/v1/analysis/participation?" + window_query(), bearer("inst"));
  ASSERT_EQ(part->status, 200);
  EXPECT_EQ(parse_json_text(part->body).size(), 4u);
}

TEST_F(HttpFixture, ErrorsCarryCodeAndStatus) {
  seed();
  auto c = client();
  auto no_window = c.Get("/api/v1/analysis/readings", bearer("inst"));
  EXPECT_EQ(no_window->status, 400);
  EXPECT_EQ(parse_json_text(no_window->body).at("error"), "InvalidWindow");

  auto bad_scale = c.Get("/api/v1/viz/spheres?scale_k=0&" + window_query(), bearer("inst"));
  EXPECT_EQ(bad_scale->status, 400);
  EXPECT_EQ(parse_json_text(bad_scale->body).at("error"), "NonPositiveScale");

  auto unknown = c.Post("/api/v1/sessions/nope/finalize", bearer("inst"), "", "application/json");
  EXPECT_EQ(unknown->status, 404);

  auto in_use = c.Delete("/api/v1/admin/activities/DisplayThread", bearer("inst"));
  EXPECT_EQ(in_use->status, 409);
  EXPECT_EQ(parse_json_text(in_use->body).at("error"), "ActivityInUse");

  auto csv = c.Get("/api/v1/export?format=csv", bearer("inst"));
  EXPECT_EQ(csv->status, 400);
  EXPECT_EQ(parse_json_text(csv->body).at("error"), "UnsupportedFormat");
}

TEST_F(HttpFixture, AnnotationAndAdminRoundTrip) {
  auto report = seed();
  auto c = client();
  const auto& id = report.trace_ids.front();
  json note = {{"key", "tutor_note"}, {"value", "good"}, {"index", 0}, {"created_at_ms", 7}};
  auto res = c.Post("/api/v1/traces/" + id + "/annotations", bearer("inst"), note.dump(), "application/json");
  ASSERT_EQ(res->status, 200);
  auto trace = trace_from_json(parse_json_text(res->body));
  ASSERT_EQ(trace.states().front()->annotations.size(), 1u);
  EXPECT_EQ(repo_.get_trace(id), trace);

  note["index"] = 10'000;
  EXPECT_EQ(c.Post("/api/v1/traces/" + id + "/annotations", bearer("inst"), note.dump(), "application/json")->status,
            422);

  json activity = {{"name", "DisplayAttachment"},
                   {"observables",
                    json::array({{{"object", {{"object_id", "attachment"}, {"object_class", "page"}}},
                                  {"events", json::array({"display"})}}})}};
  auto add = c.Post("/api/v1/admin/activities", bearer("inst"), activity.dump(), "application/json");
  ASSERT_EQ(add->status, 200) << add->body;
  EXPECT_EQ(parse_json_text(add->body).at("version"), 2);
  auto del = c.Delete("/api/v1/admin/activities/DisplayAttachment", bearer("inst"));
  ASSERT_EQ(del->status, 200);
  EXPECT_EQ(parse_json_text(del->body).at("version"), 3);
}

TEST_F(HttpFixture, ExportFormats) {
  seed();
  auto c = client();
  auto xml_res = c.Get("/api/v1/export?format=xml", bearer("inst"));
  ASSERT_EQ(xml_res->status, 200);
  EXPECT_EQ(xml_res->body, repo_.export_traces({}, ExportFormat::Xml));
  auto txt_res = c.Get("/api/v1/export?format=txt&actor=u1", bearer("inst"));
  ASSERT_EQ(txt_res->status, 200);
  EXPECT_EQ(txt_res->body.find("\tu2\t"), std::string::npos);
}

TEST(HttpTarget, ClosedPortIsTargetUnreachable) {
  // Grab a free port and release it again, so nothing is listening there.
  int port = 0;
  {
    int fd = ::socket(AF_INET, SOCK_STREAM, 0);
    ASSERT_GE(fd, 0);
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
    ASSERT_EQ(::bind(fd, reinterpret_cast<sockaddr*>(&addr), sizeof addr), 0);
    socklen_t len = sizeof addr;
    ::getsockname(fd, reinterpret_cast<sockaddr*>(&addr), &len);
    port = ntohs(addr.sin_port);
    ::close(fd);
  }
  HttpTarget target("http://127.0.0.1:" + std::to_string(port), "inst");
  try {
    target.submit_server_event(display("e1", 1, "DisplayThread"));
    FAIL() << "delivered to a closed port";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::TargetUnreachable);
  }
}
