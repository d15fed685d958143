#include <gtest/gtest.h>

#include "forumtrace/export.hpp"
#include "forumtrace/json_codec.hpp"
#include "forumtrace/xml.hpp"
#include "support.hpp"

using namespace forumtrace;
using namespace forumtrace::testing;

namespace {

const ValidatedUseModel& forum() {
  static const ValidatedUseModel m = validate_use_model(default_forum_use_model());
  return m;
}

ErrorCode code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "expected an Error";
  return ErrorCode::IoError;
}

TraceDocument sample_document(std::size_t n, std::uint64_t base = 0) {
  TraceDocument doc;
  doc.model_version = 2;
  for (std::size_t i = 0; i < n; ++i) doc.traces.push_back(random_trace(base + i, forum()));
  return doc;
}

}  // namespace

// --- json --------------------------------------------------------------------

TEST(JsonCodec, UseModelRoundTrip) {
  auto m = default_forum_use_model();
  EXPECT_EQ(use_model_from_json(to_json_value(m)), m);
}

TEST(JsonCodec, RawEventRoundTrip) {
  auto e = display("e1", 42, "DisplayMessage", {{"message_id", "25"}, {"x", "a&b"}});
  EXPECT_EQ(raw_event_from_json(to_json_value(e)), e);
  auto c = click("e2", 43, "reply_link");
  EXPECT_EQ(raw_event_from_json(to_json_value(c)), c);
}

TEST(JsonCodec, UnknownKindRejected) {
  auto j = to_json_value(click("e2", 43, "reply_link"));
  j["kind"] = "doubleclick";
  EXPECT_EQ(code_of([&] { raw_event_from_json(j); }), ErrorCode::UnknownToken);
}

TEST(JsonCodec, MissingFieldIsParseError) {
  auto j = to_json_value(click("e2", 43, "reply_link"));
  j.erase("timestamp_ms");
  EXPECT_EQ(code_of([&] { raw_event_from_json(j); }), ErrorCode::ParseError);
  EXPECT_EQ(code_of([&] { parse_json_text("{\"a\": "); }), ErrorCode::ParseError);
}

TEST(JsonCodec, ClientBatchWireDocument) {
  const char* doc = R"({"batch_id":"b1","session_id":"s1","actor_id":"u1","client_clock_offset_ms":-250,
    "events":[{"event_id":"e1","seq":0,"timestamp_ms":1000,"object_id":"page","kind":"scroll",
               "attributes":{"scroll_ratio":"0.5"}},
              {"event_id":"e2","seq":1,"timestamp_ms":1100,"object_id":"thread_link","kind":"click",
               "attributes":{}}]})";
  auto b = client_batch_from_json(parse_json_text(doc));
  EXPECT_EQ(b.batch_id, "b1");
  EXPECT_EQ(b.client_clock_offset_ms, std::optional<std::int64_t>(-250));
  ASSERT_EQ(b.events.size(), 2u);
  EXPECT_EQ(b.events[0].session_id, "s1");  // filled from the envelope
  EXPECT_EQ(b.events[0].source.side, Side::Client);
  EXPECT_EQ(b.events[1].kind, EventKind::Click);
  EXPECT_EQ(client_batch_from_json(to_json_value(b)), b);
}

TEST(JsonCodec, TraceRoundTrip) {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    auto t = random_trace(seed, forum());
    ASSERT_EQ(trace_from_json(to_json_value(t)), t) << seed;
  }
}

// --- xml ---------------------------------------------------------------------

TEST(Xml, EscapesAndParsesBack) {
  for (const auto& s : awkward_strings()) {
    xml::Writer w;
    w.leaf("x", {{"v", s}});
    auto node = xml::parse(w.take());
    EXPECT_EQ(node.at("v"), s);
  }
}

TEST(Xml, RejectsTruncatedAndStray) {
  EXPECT_EQ(code_of([] { xml::parse("<a><b/>"); }), ErrorCode::ParseError);
  EXPECT_EQ(code_of([] { xml::parse("<a>text</a>"); }), ErrorCode::ParseError);
  EXPECT_EQ(code_of([] { xml::parse("<a x=\"1></a>"); }), ErrorCode::ParseError);
  EXPECT_EQ(code_of([] { xml::parse("<a></b>"); }), ErrorCode::ParseError);
  EXPECT_EQ(code_of([] { xml::parse("<a/><b/>"); }), ErrorCode::ParseError);
  EXPECT_EQ(code_of([] { xml::parse("<a x=\"&bogus;\"/>"); }), ErrorCode::ParseError);
}

TEST(Xml, AcceptsPrologCommentsAndCharacterReferences) {
  auto n = xml::parse("<?xml version=\"1.0\"?>\n<!-- hi -->\n<a v=\"&#233;&#x41;&lt;\"><!-- c --><b/></a>\n");
  EXPECT_EQ(n.at("v"), "\xC3\xA9" "A<");
  ASSERT_EQ(n.children.size(), 1u);
  EXPECT_EQ(n.children[0].name, "b");
}

// --- export / import ---------------------------------------------------------

TEST(Export, XmlShapeUsesDocumentedNames) {
  TraceDocument doc{1, {structure_trace(forum(), "s1", "u1", post_message_flow())}};
  doc.traces[0] = annotate(doc.traces[0], 0, {"tutor_note", "ok", "prof", 5});
  auto text = traces_to_xml(doc);
  auto root = xml::parse(text);
  EXPECT_EQ(root.name, "traces");
  EXPECT_EQ(root.at("model_version"), "1");
  const auto& trace = root.children.at(0);
  EXPECT_EQ(trace.name, "trace");
  EXPECT_EQ(trace.at("id"), "trace-s1");
  EXPECT_EQ(trace.at("session"), "s1");
  EXPECT_EQ(trace.at("actor"), "u1");
  const auto& state = trace.children.at(0);
  EXPECT_EQ(state.name, "state");
  EXPECT_EQ(state.at("activity"), "ComposeMessage");
  EXPECT_EQ(state.at("start_ms"), "1000");
  EXPECT_EQ(state.at("end_ms"), "4000");
  EXPECT_EQ(state.at("censored"), "false");
  std::set<std::string> kids;
  for (const auto& c : state.children) kids.insert(c.name);
  EXPECT_EQ(kids, (std::set<std::string>{"event", "annotation"}));
  const auto& transition = trace.children.at(1);
  EXPECT_EQ(transition.name, "transition");
  EXPECT_EQ(transition.at("at_ms"), "4000");
  EXPECT_EQ(transition.at("from"), "ComposeMessage");
  EXPECT_EQ(transition.at("to"), "DisplayPostedMessage");
}

TEST(Export, OneTraceXmlReimportsEqual) {
  TraceDocument doc{1, {structure_trace(forum(), "s1", "u1", post_message_flow())}};
  EXPECT_EQ(traces_from_xml(traces_to_xml(doc)).traces, doc.traces);
}

TEST(Export, EmptyJsonIsParseable) {
  TraceDocument doc{3, {}};
  auto text = traces_to_json(doc);
  auto back = traces_from_json(text);
  EXPECT_EQ(back.model_version, 3u);
  EXPECT_TRUE(back.traces.empty());
  EXPECT_TRUE(parse_json_text(text).at("traces").is_array());
}

TEST(Export, XmlAndJsonRoundTripAwkwardTraces) {
  auto doc = sample_document(40);
  for (auto format : {ExportFormat::Xml, ExportFormat::Json}) {
    auto bytes = export_document(doc, format);
    auto back = import_document(bytes, format);
    EXPECT_EQ(back.model_version, doc.model_version);
    EXPECT_EQ(back.traces, doc.traces) << to_token(format);
    EXPECT_EQ(export_document(back, format), bytes) << to_token(format);
  }
}

TEST(Export, TxtIsLossyAndNotImportable) {
  auto trace = structure_trace(forum(), "s1", "u1", post_message_flow());
  trace = annotate(trace, 0, {"tutor_note", "secret", "prof", 5});
  auto text = export_document(TraceDocument{1, {trace}}, ExportFormat::Txt);
  EXPECT_EQ(text.find("tutor_note"), std::string::npos);
  EXPECT_EQ(text.find("secret"), std::string::npos);
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 5);
  EXPECT_EQ(code_of([&] { import_document(text, ExportFormat::Txt); }), ErrorCode::UnsupportedFormat);
}

TEST(Export, TxtLineFormat) {
  auto trace = structure_trace(forum(), "s1", "u1", post_message_flow());
  auto lines = trace_to_txt_lines(trace);
  ASSERT_EQ(lines.size(), 5u);
  EXPECT_EQ(format_txt_line(lines[3]), "4000\ts1\tu1\tclient\tComposeMessage\tsubmit_button\tclick\t");
  EXPECT_EQ(format_txt_line(lines[4]),
            "4100\ts1\tu1\tserver\tDisplayPostedMessage\tpage\tdisplay\tmessage_id=p1");
  for (const auto& l : lines) EXPECT_EQ(parse_txt_line(format_txt_line(l)), l);
}

TEST(Export, TxtAttributesSurviveEncoding) {
  TxtLine l{7, "s", "u", Side::Client, "-", "page", EventKind::Scroll, {}};
  for (const auto& s : awkward_strings()) l.attributes["k" + s] = s;
  EXPECT_EQ(parse_txt_line(format_txt_line(l)), l);
  EXPECT_EQ(code_of([] { parse_txt_line("1\ts\tu\tclient\t-\tpage"); }), ErrorCode::ParseError);
  EXPECT_EQ(code_of([] { url_decode("%4"); }), ErrorCode::ParseError);
}

TEST(Export, TruncatedDocumentsAreParseErrors) {
  auto doc = sample_document(3);
  for (auto format : {ExportFormat::Xml, ExportFormat::Json}) {
    auto bytes = export_document(doc, format);
    for (std::size_t cut : {bytes.size() / 3, bytes.size() / 2, bytes.size() - 3}) {
      EXPECT_EQ(code_of([&] { import_document(bytes.substr(0, cut), format); }), ErrorCode::ParseError)
          << to_token(format) << " cut " << cut;
    }
  }
}

TEST(Export, FormatTokens) {
  EXPECT_EQ(parse_export_format("xml"), ExportFormat::Xml);
  EXPECT_EQ(parse_export_format("json"), ExportFormat::Json);
  EXPECT_EQ(parse_export_format("txt"), ExportFormat::Txt);
  EXPECT_EQ(code_of([] { parse_export_format("csv"); }), ErrorCode::UnsupportedFormat);
}
