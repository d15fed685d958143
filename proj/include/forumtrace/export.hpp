#pragma once

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "forumtrace/error.hpp"
#include "forumtrace/json_codec.hpp"
#include "forumtrace/structure.hpp"
#include "forumtrace/types.hpp"
#include "forumtrace/xml.hpp"

namespace forumtrace {

enum class ExportFormat { Xml, Txt, Json };

inline std::string_view to_token(ExportFormat f) {
  switch (f) {
    case ExportFormat::Xml: return "xml";
    case ExportFormat::Txt: return "txt";
    case ExportFormat::Json: return "json";
  }
  return "?";
}

inline ExportFormat parse_export_format(std::string_view token) {
  if (token == "xml") return ExportFormat::Xml;
  if (token == "txt") return ExportFormat::Txt;
  if (token == "json") return ExportFormat::Json;
  throw Error(ErrorCode::UnsupportedFormat, "format '" + std::string(token) + "'");
}

/// A decoded export document.
struct TraceDocument {
  std::uint32_t model_version = 1;
  std::vector<Trace> traces;
};

// --- txt --------------------------------------------------------------------

inline std::string url_encode(std::string_view in) {
  static constexpr char kHex[] = "0123456789ABCDEF";
  std::string out;
  for (unsigned char c : in) {
    if ((c >= 'A' && c <= 'Z') || (c >= 'a' && c <= 'z') || (c >= '0' && c <= '9') || c == '-' ||
        c == '.' || c == '_' || c == '~') {
      out += static_cast<char>(c);
    } else {
      out += '%';
      out += kHex[c >> 4];
      out += kHex[c & 0xF];
    }
  }
  return out;
}

inline std::string url_decode(std::string_view in) {
  auto hex = [](char c) -> int {
    if (c >= '0' && c <= '9') return c - '0';
    if (c >= 'a' && c <= 'f') return c - 'a' + 10;
    if (c >= 'A' && c <= 'F') return c - 'A' + 10;
    return -1;
  };
  std::string out;
  for (std::size_t i = 0; i < in.size(); ++i) {
    if (in[i] == '%') {
      if (i + 2 >= in.size()) {
        throw Error(ErrorCode::ParseError, "truncated percent escape");
      }
      int hi = hex(in[i + 1]);
      int lo = hex(in[i + 2]);
      if (hi < 0 || lo < 0) throw Error(ErrorCode::ParseError, "bad percent escape");
      out += static_cast<char>(hi * 16 + lo);
      i += 2;
    } else {
      out += in[i];
    }
  }
  return out;
}

inline std::string encode_attributes(const Attributes& attrs) {
  std::string out;
  for (const auto& [k, v] : attrs) {
    if (!out.empty()) out += '&';
    out += url_encode(k);
    out += '=';
    out += url_encode(v);
  }
  return out;
}

inline Attributes decode_attributes(std::string_view text) {
  Attributes out;
  while (!text.empty()) {
    auto amp = text.find('&');
    auto pair = text.substr(0, amp);
    auto eq = pair.find('=');
    if (eq == std::string_view::npos) {
      throw Error(ErrorCode::ParseError, "attribute pair without '='");
    }
    out[url_decode(pair.substr(0, eq))] = url_decode(pair.substr(eq + 1));
    if (amp == std::string_view::npos) break;
    text.remove_prefix(amp + 1);
  }
  return out;
}

/// One flat event-log line (no trailing newline).
struct TxtLine {
  TimestampMs timestamp_ms = 0;
  std::string session_id;
  std::string actor_id;
  Side side = Side::Server;
  std::string activity;  // "-" when unknown
  std::string object_id;
  EventKind kind = EventKind::Display;
  Attributes attributes;

  bool operator==(const TxtLine&) const = default;
};

inline std::string format_txt_line(const TxtLine& l) {
  std::string out = std::to_string(l.timestamp_ms);
  for (std::string_view field : {std::string_view(l.session_id), std::string_view(l.actor_id),
                                 to_token(l.side), std::string_view(l.activity),
                                 std::string_view(l.object_id), to_token(l.kind)}) {
    out += '\t';
    out += field;
  }
  out += '\t';
  out += encode_attributes(l.attributes);
  return out;
}

namespace detail {

inline std::int64_t parse_int(std::string_view text, const char* what) {
  std::int64_t v = 0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size()) {
    throw Error(ErrorCode::ParseError, std::string("bad ") + what + " '" + std::string(text) + "'");
  }
  return v;
}

}  // namespace detail

inline TxtLine parse_txt_line(std::string_view line) {
  std::vector<std::string_view> fields;
  for (;;) {
    auto tab = line.find('\t');
    fields.push_back(line.substr(0, tab));
    if (tab == std::string_view::npos) break;
    line.remove_prefix(tab + 1);
  }
  if (fields.size() != 8) {
    throw Error(ErrorCode::ParseError,
                "expected 8 tab-separated fields, got " + std::to_string(fields.size()));
  }
  TxtLine l;
  l.timestamp_ms = detail::parse_int(fields[0], "timestamp_ms");
  l.session_id = std::string(fields[1]);
  l.actor_id = std::string(fields[2]);
  try {
    l.side = parse_side(fields[3]);
    l.kind = parse_event_kind(fields[6]);
  } catch (const Error& e) {
    throw Error(ErrorCode::ParseError, e.what());
  }
  l.activity = std::string(fields[4]);
  l.object_id = std::string(fields[5]);
  l.attributes = decode_attributes(fields[7]);
  return l;
}

/// Flattens a trace into its events in canonical order, labelled with the
/// activity each one was observed in (transition triggers carry the source
/// activity, quarantined events carry "-").
inline std::vector<TxtLine> trace_to_txt_lines(const Trace& trace) {
  std::vector<std::pair<const RawEvent*, std::string>> labelled;
  for (const auto& el : trace.sequence) {
    if (const auto* s = std::get_if<State>(&el)) {
      for (const auto& e : s->events) labelled.emplace_back(&e, s->activity);
    } else {
      const auto& t = std::get<Transition>(el);
      for (const auto& e : t.trigger_events) labelled.emplace_back(&e, t.from_activity);
    }
  }
  for (const auto& q : trace.quarantined) labelled.emplace_back(&q.event, "-");
  std::stable_sort(labelled.begin(), labelled.end(), [](const auto& a, const auto& b) {
    return canonical_event_less(*a.first, *b.first);
  });
  std::vector<TxtLine> out;
  out.reserve(labelled.size());
  for (const auto& [e, activity] : labelled) {
    out.push_back({e->timestamp_ms, e->session_id, e->actor_id, e->source.side, activity,
                   e->object_id, e->kind, e->attributes});
  }
  return out;
}

// --- xml --------------------------------------------------------------------

namespace detail {

using XmlAttrs = std::vector<std::pair<std::string, std::string>>;

inline XmlAttrs event_xml_attrs(const RawEvent& e) {
  XmlAttrs a = {{"event_id", e.event_id},
                {"seq", std::to_string(e.seq)},
                {"timestamp_ms", std::to_string(e.timestamp_ms)},
                {"side", std::string(to_token(e.source.side))},
                {"collector_id", e.source.collector_id}};
  if (e.activity_hint) a.emplace_back("activity_hint", *e.activity_hint);
  a.emplace_back("object_id", e.object_id);
  a.emplace_back("kind", std::string(to_token(e.kind)));
  return a;
}

inline void write_event(xml::Writer& w, const RawEvent& e) {
  if (e.attributes.empty()) {
    w.leaf("event", event_xml_attrs(e));
    return;
  }
  w.open("event", event_xml_attrs(e));
  for (const auto& [k, v] : e.attributes) w.leaf("attr", {{"key", k}, {"value", v}});
  w.close();
}

inline void write_annotation(xml::Writer& w, const Annotation& a) {
  w.leaf("annotation", {{"key", a.key},
                        {"value", a.value},
                        {"author", a.author},
                        {"created_at_ms", std::to_string(a.created_at_ms)}});
}

inline RawEvent event_from_xml(const xml::Node& n, const Trace& owner) {
  if (n.name != "event") throw Error(ErrorCode::ParseError, "expected <event>, got <" + n.name + ">");
  RawEvent e;
  e.event_id = n.at("event_id");
  e.session_id = owner.session_id;
  e.actor_id = owner.actor_id;
  e.seq = static_cast<std::uint64_t>(parse_int(n.at("seq"), "seq"));
  e.timestamp_ms = parse_int(n.at("timestamp_ms"), "timestamp_ms");
  try {
    e.source.side = parse_side(n.at("side"));
    e.kind = parse_event_kind(n.at("kind"));
  } catch (const Error& err) {
    if (err.code() == ErrorCode::ParseError) throw;
    throw Error(ErrorCode::ParseError, err.what());
  }
  e.source.collector_id = n.at("collector_id");
  if (const auto* hint = n.find("activity_hint")) e.activity_hint = *hint;
  e.object_id = n.at("object_id");
  for (const auto& c : n.children) {
    if (c.name != "attr") throw Error(ErrorCode::ParseError, "unexpected <" + c.name + "> in <event>");
    e.attributes[c.at("key")] = c.at("value");
  }
  return e;
}

inline Annotation annotation_from_xml(const xml::Node& n) {
  return Annotation{n.at("key"), n.at("value"), n.at("author"),
                    parse_int(n.at("created_at_ms"), "created_at_ms")};
}

inline bool parse_bool(const std::string& s) {
  if (s == "true") return true;
  if (s == "false") return false;
  throw Error(ErrorCode::ParseError, "bad boolean '" + s + "'");
}

}  // namespace detail

inline std::string traces_to_xml(const TraceDocument& doc) {
  xml::Writer w;
  w.open("traces", {{"model_version", std::to_string(doc.model_version)}});
  for (const auto& t : doc.traces) {
    w.open("trace", {{"id", t.trace_id},
                     {"session", t.session_id},
                     {"actor", t.actor_id},
                     {"model_version", std::to_string(t.model_version)}});
    for (const auto& el : t.sequence) {
      if (const auto* s = std::get_if<State>(&el)) {
        w.open("state", {{"activity", s->activity},
                         {"start_ms", std::to_string(s->started_at_ms)},
                         {"end_ms", std::to_string(s->ended_at_ms)},
                         {"censored", s->censored ? "true" : "false"}});
        for (const auto& [k, v] : s->attributes) w.leaf("attribute", {{"key", k}, {"value", v}});
        for (const auto& e : s->events) detail::write_event(w, e);
        for (const auto& a : s->annotations) detail::write_annotation(w, a);
        w.close();
      } else {
        const auto& tr = std::get<Transition>(el);
        w.open("transition", {{"at_ms", std::to_string(tr.occurred_at_ms)},
                              {"from", tr.from_activity},
                              {"to", tr.to_activity}});
        for (const auto& e : tr.trigger_events) detail::write_event(w, e);
        for (const auto& a : tr.annotations) detail::write_annotation(w, a);
        w.close();
      }
    }
    if (!t.quarantined.empty()) {
      w.open("quarantine", {});
      for (const auto& q : t.quarantined) {
        w.open("quarantined", {{"reason", q.reason}});
        detail::write_event(w, q.event);
        w.close();
      }
      w.close();
    }
    w.close();
  }
  w.close();
  return w.take();
}

inline TraceDocument traces_from_xml(std::string_view text) {
  auto root = xml::parse(text);
  if (root.name != "traces") throw Error(ErrorCode::ParseError, "root element must be <traces>");
  TraceDocument doc;
  doc.model_version = static_cast<std::uint32_t>(detail::parse_int(root.at("model_version"), "model_version"));
  for (const auto& tn : root.children) {
    if (tn.name != "trace") throw Error(ErrorCode::ParseError, "unexpected <" + tn.name + "> in <traces>");
    Trace t;
    t.trace_id = tn.at("id");
    t.session_id = tn.at("session");
    t.actor_id = tn.at("actor");
    t.model_version = static_cast<std::uint32_t>(detail::parse_int(tn.at("model_version"), "model_version"));
    for (const auto& en : tn.children) {
      if (en.name == "state") {
        State s;
        s.activity = en.at("activity");
        s.started_at_ms = detail::parse_int(en.at("start_ms"), "start_ms");
        s.ended_at_ms = detail::parse_int(en.at("end_ms"), "end_ms");
        s.censored = detail::parse_bool(en.at("censored"));
        for (const auto& c : en.children) {
          if (c.name == "attribute") s.attributes[c.at("key")] = c.at("value");
          else if (c.name == "event") s.events.push_back(detail::event_from_xml(c, t));
          else if (c.name == "annotation") s.annotations.push_back(detail::annotation_from_xml(c));
          else throw Error(ErrorCode::ParseError, "unexpected <" + c.name + "> in <state>");
        }
        t.sequence.emplace_back(std::move(s));
      } else if (en.name == "transition") {
        Transition tr;
        tr.occurred_at_ms = detail::parse_int(en.at("at_ms"), "at_ms");
        tr.from_activity = en.at("from");
        tr.to_activity = en.at("to");
        for (const auto& c : en.children) {
          if (c.name == "event") tr.trigger_events.push_back(detail::event_from_xml(c, t));
          else if (c.name == "annotation") tr.annotations.push_back(detail::annotation_from_xml(c));
          else throw Error(ErrorCode::ParseError, "unexpected <" + c.name + "> in <transition>");
        }
        t.sequence.emplace_back(std::move(tr));
      } else if (en.name == "quarantine") {
        for (const auto& q : en.children) {
          if (q.name != "quarantined" || q.children.size() != 1) {
            throw Error(ErrorCode::ParseError, "malformed <quarantine> entry");
          }
          t.quarantined.push_back({detail::event_from_xml(q.children.front(), t), q.at("reason")});
        }
      } else {
        throw Error(ErrorCode::ParseError, "unexpected <" + en.name + "> in <trace>");
      }
    }
    doc.traces.push_back(std::move(t));
  }
  return doc;
}

// --- json -------------------------------------------------------------------

inline std::string traces_to_json(const TraceDocument& doc) {
  json traces = json::array();
  for (const auto& t : doc.traces) traces.push_back(to_json_value(t));
  json root = {{"model_version", doc.model_version}, {"traces", traces}};
  return root.dump(2) + "\n";
}

inline TraceDocument traces_from_json(std::string_view text) {
  auto root = parse_json_text(std::string(text));
  TraceDocument doc;
  doc.model_version = detail::required<std::uint32_t>(root, "model_version");
  for (const auto& t : detail::required_array(root, "traces")) doc.traces.push_back(trace_from_json(t));
  return doc;
}

// --- dispatch ---------------------------------------------------------------

inline std::string export_document(const TraceDocument& doc, ExportFormat format) {
  switch (format) {
    case ExportFormat::Xml: return traces_to_xml(doc);
    case ExportFormat::Json: return traces_to_json(doc);
    case ExportFormat::Txt: {
      std::string out;
      for (const auto& t : doc.traces) {
        for (const auto& line : trace_to_txt_lines(t)) {
          out += format_txt_line(line);
          out += '\n';
        }
      }
      return out;
    }
  }
  return {};
}

inline TraceDocument import_document(std::string_view bytes, ExportFormat format) {
  switch (format) {
    case ExportFormat::Xml: return traces_from_xml(bytes);
    case ExportFormat::Json: return traces_from_json(bytes);
    case ExportFormat::Txt: break;
  }
  throw Error(ErrorCode::UnsupportedFormat, "txt is a lossy event log and cannot be imported");
}

}  // namespace forumtrace
