#include "moesteer/trace.hpp"

#include <cmath>
#include <fstream>
#include <functional>
#include <ostream>
#include <unordered_set>

#include <json.hpp>

#include "moesteer/error.hpp"
#include "moesteer/version.hpp"
#include "steering_detail.hpp"
#include "text_util.hpp"

namespace moesteer {

namespace {

constexpr double kWeightSumTolerance = 1e-9;

using detail::append_double;
using detail::append_int;
using detail::append_json_string;
using detail::append_uint;
using detail::LineCursor;

}  // namespace

MarkerSet MarkerSet::defaults() {
  return MarkerSet{{{"<think>", 1.0}, {"</think>", -1.0}, {"Alternatively", -1.0}}};
}

int MarkerSet::index_of(std::string_view token) const {
  for (std::size_t i = 0; i < entries.size(); ++i) {
    if (entries[i].first == token) return static_cast<int>(i);
  }
  return -1;
}

std::uint64_t TraceCorpus::total_tokens() const {
  std::uint64_t t = 0;
  for (const auto& inst : instances) t += inst.events.size();
  return t;
}

// ---------------------------------------------------------------------------
// Event records.

void parse_event_view(std::string_view line, EventView& out,
                      std::vector<WeightedExpert>& selections,
                      EventScratch& scratch, std::size_t line_number) {
  LineCursor cur(line, line_number);
  selections.clear();

  cur.expect('{');
  cur.expect_literal("\"i\":");
  out.instance_id = cur.parse_string(scratch.id);
  cur.expect(',');

  // Optional "d" (domain) field, present on the first record of an instance.
  out.domain = {};
  cur.expect('"');
  char key = cur.peek();
  if (key == 'd') {
    cur.expect_literal("d\":");
    out.domain = cur.parse_string(scratch.domain);
    cur.expect(',');
    cur.expect_literal("\"p\":");
  } else if (key == 'p') {
    cur.expect_literal("p\":");
  } else {
    cur.fail("expected \"d\" or \"p\" key");
  }

  out.position = cur.parse_int();
  cur.expect(',');
  cur.expect_literal("\"t\":");
  out.token = cur.parse_string(scratch.token);
  cur.expect(',');
  cur.expect_literal("\"s\":[");

  while (true) {
    cur.expect('[');
    WeightedExpert sel;
    sel.key.layer = static_cast<int>(cur.parse_int());
    cur.expect(',');
    sel.key.expert = static_cast<int>(cur.parse_int());
    cur.expect(',');
    sel.weight = cur.parse_double();
    cur.expect(']');
    selections.push_back(sel);
    if (!cur.consume(',')) break;
  }
  cur.expect(']');
  cur.expect('}');
  if (!cur.at_end()) cur.fail("trailing characters after record");
  if (selections.empty()) {
    throw parse_error("event record has no selections", line_number);
  }
}

namespace {

// Walks the layer groups of a selection list and reports every invariant
// breach through `sink`. Shape-dependent checks run only when `shape` is
// given; the weight-sum check is skipped for unrenormalized steered traces.
void collect_selection_violations(const std::vector<WeightedExpert>& selections,
                                  const ModelShape* shape, bool sum_check,
                                  const std::function<void(std::string)>& sink) {
  std::size_t i = 0;
  int prev_layer = -1;
  while (i < selections.size()) {
    int layer = selections[i].key.layer;
    if (layer <= prev_layer) {
      sink("layer " + std::to_string(layer) +
           ": selections not grouped by ascending layer");
      return;
    }
    prev_layer = layer;
    std::size_t begin = i;
    double sum = 0.0;
    while (i < selections.size() && selections[i].key.layer == layer) {
      const auto& sel = selections[i];
      if (!std::isfinite(sel.weight) || sel.weight <= 0.0) {
        sink("layer " + std::to_string(layer) + ": weight " +
             detail::format_double(sel.weight) + " for expert " +
             std::to_string(sel.key.expert) + " must be positive and finite");
      }
      for (std::size_t j = begin; j < i; ++j) {
        if (selections[j].key == sel.key) {
          sink("layer " + std::to_string(layer) + ": duplicate expert " +
               std::to_string(sel.key.expert));
        }
      }
      if (shape != nullptr && !shape->contains(sel.key)) {
        sink("expert " + to_string(sel.key) + " outside model shape");
      }
      sum += sel.weight;
      ++i;
    }
    if (shape != nullptr &&
        i - begin != static_cast<std::size_t>(shape->experts_per_token)) {
      sink("layer " + std::to_string(layer) + ": expected " +
           std::to_string(shape->experts_per_token) + " selections, got " +
           std::to_string(i - begin));
    }
    if (sum_check && std::abs(sum - 1.0) > kWeightSumTolerance) {
      sink("layer " + std::to_string(layer) + ": selection weights sum to " +
           detail::format_double(sum) + ", expected 1");
    }
  }
}

void append_event_record(std::string& out, const RoutingEvent& event,
                         std::string_view instance_id, std::string_view domain) {
  out += "{\"i\":";
  append_json_string(out, instance_id);
  if (!domain.empty()) {
    out += ",\"d\":";
    append_json_string(out, domain);
  }
  out += ",\"p\":";
  append_int(out, event.position);
  out += ",\"t\":";
  append_json_string(out, event.token);
  out += ",\"s\":[";
  for (std::size_t i = 0; i < event.selections.size(); ++i) {
    const auto& sel = event.selections[i];
    if (i > 0) out.push_back(',');
    out.push_back('[');
    append_int(out, sel.key.layer);
    out.push_back(',');
    append_int(out, sel.key.expert);
    out.push_back(',');
    append_double(out, sel.weight);
    out.push_back(']');
  }
  out += "]}";
}

}  // namespace

RoutingEvent parse_event(std::string_view line) {
  EventView view;
  std::vector<WeightedExpert> selections;
  EventScratch scratch;
  parse_event_view(line, view, selections, scratch);

  RoutingEvent event;
  event.position = view.position;
  event.token = std::string(view.token);
  event.selections = std::move(selections);
  if (event.position < 0) {
    throw validation_error("negative token position " +
                           std::to_string(event.position));
  }
  collect_selection_violations(event.selections, nullptr, /*sum_check=*/true,
                               [](std::string msg) {
                                 throw validation_error(std::move(msg));
                               });
  return event;
}

std::string format_event(const RoutingEvent& event, std::string_view instance_id,
                         std::string_view domain) {
  std::string out;
  append_event_record(out, event, instance_id, domain);
  return out;
}

std::string format_header(const TraceHeader& header) {
  std::string out = "{\"v\":";
  append_int(out, header.version);
  out += ",\"shape\":{\"L\":";
  append_int(out, header.shape.layers);
  out += ",\"N\":";
  append_int(out, header.shape.experts_per_layer);
  out += ",\"O\":";
  append_int(out, header.shape.experts_per_token);
  out += "},\"markers\":[";
  for (std::size_t i = 0; i < header.markers.entries.size(); ++i) {
    if (i > 0) out.push_back(',');
    out.push_back('[');
    append_json_string(out, header.markers.entries[i].first);
    out.push_back(',');
    append_double(out, header.markers.entries[i].second);
    out.push_back(']');
  }
  out += "]";
  if (header.steering.has_value()) {
    out += ",\"steer\":";
    out += config_to_json(*header.steering);
  }
  out += "}";
  return out;
}

TraceHeader parse_header(std::string_view line) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw parse_error(std::string("invalid trace header: ") + e.what(), 1);
  }
  if (!j.is_object() || !j.contains("v") || !j["v"].is_number_integer()) {
    throw parse_error("trace header missing format version", 1);
  }
  TraceHeader header;
  header.version = j["v"].get<int>();
  if (header.version != kTraceFormatVersion) {
    throw parse_error("unsupported trace format version " +
                          std::to_string(header.version) + " (expected " +
                          std::to_string(kTraceFormatVersion) + ")",
                      1);
  }
  if (!j.contains("shape") || !j["shape"].is_object()) {
    throw parse_error("trace header missing shape", 1);
  }
  const auto& s = j["shape"];
  header.shape.layers = s.value("L", 0);
  header.shape.experts_per_layer = s.value("N", 0);
  header.shape.experts_per_token = s.value("O", 0);
  if (!header.shape.valid()) {
    throw validation_error("invalid model shape in trace header (L=" +
                           std::to_string(header.shape.layers) + ", N=" +
                           std::to_string(header.shape.experts_per_layer) +
                           ", O=" +
                           std::to_string(header.shape.experts_per_token) + ")");
  }
  if (!j.contains("markers") || !j["markers"].is_array()) {
    throw parse_error("trace header missing markers", 1);
  }
  for (const auto& m : j["markers"]) {
    if (!m.is_array() || m.size() != 2 || !m[0].is_string() || !m[1].is_number()) {
      throw parse_error("malformed marker entry in trace header", 1);
    }
    std::string token = m[0].get<std::string>();
    if (header.markers.contains(token)) {
      throw validation_error("duplicate marker token \"" + token +
                             "\" in trace header");
    }
    header.markers.entries.emplace_back(std::move(token), m[1].get<double>());
  }
  if (j.contains("steer")) {
    header.steering = detail::config_from_json_obj(j["steer"]);
  }
  return header;
}

// ---------------------------------------------------------------------------
// Corpus validation.

namespace {

void validate_instance_order(const TraceInstance& inst,
                             const std::function<void(std::int64_t, std::string)>& sink) {
  std::int64_t prev = -1;
  for (std::size_t i = 0; i < inst.events.size(); ++i) {
    std::int64_t pos = inst.events[i].position;
    if (i == 0 && pos != 0) {
      sink(pos, "first event position is " + std::to_string(pos) +
                    ", expected 0");
    } else if (i > 0 && pos <= prev) {
      sink(pos, "event positions not strictly increasing (" +
                    std::to_string(prev) + " then " + std::to_string(pos) + ")");
    }
    prev = pos;
  }
}

}  // namespace

ValidationReport validate_corpus(const TraceCorpus& corpus) {
  ValidationReport report;
  report.instance_count = corpus.instances.size();
  for (const auto& [token, coeff] : corpus.markers.entries) {
    report.marker_occurrences.emplace_back(token, 0);
  }
  const bool sum_check = !corpus.steering.has_value() || corpus.steering->renormalize;

  std::unordered_set<std::string> seen_ids;
  for (const auto& inst : corpus.instances) {
    if (!seen_ids.insert(inst.id).second) {
      report.violations.push_back(
          {inst.id, -1, 0, "duplicate instance id \"" + inst.id + "\""});
    }
    validate_instance_order(inst, [&](std::int64_t pos, std::string msg) {
      report.violations.push_back({inst.id, pos, 0, std::move(msg)});
    });
    for (const auto& event : inst.events) {
      ++report.total_tokens;
      int mi = corpus.markers.index_of(event.token);
      if (mi >= 0) ++report.marker_occurrences[static_cast<std::size_t>(mi)].second;
      collect_selection_violations(
          event.selections, &corpus.shape, sum_check, [&](std::string msg) {
            report.violations.push_back({inst.id, event.position, 0, std::move(msg)});
          });
    }
  }
  return report;
}

ValidationReport validate_trace_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw io_error("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) {
    throw parse_error("empty trace: missing header record", 1);
  }
  const TraceHeader header = parse_header(line);
  const bool sum_check = header.sum_check_applies();

  ValidationReport report;
  for (const auto& [token, coeff] : header.markers.entries) {
    report.marker_occurrences.emplace_back(token, 0);
  }

  EventView view;
  std::vector<WeightedExpert> selections;
  EventScratch scratch;
  std::unordered_set<std::string> closed_ids;
  std::string current_id;
  bool in_instance = false;
  bool first_event_of_instance = true;
  std::int64_t prev_position = -1;
  std::size_t line_no = 1;

  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    parse_event_view(line, view, selections, scratch, line_no);

    if (!in_instance || current_id != view.instance_id) {
      if (in_instance) closed_ids.insert(current_id);
      current_id = std::string(view.instance_id);
      if (closed_ids.contains(current_id)) {
        report.violations.push_back(
            {current_id, view.position, line_no,
             "instance id \"" + current_id +
                 "\" reappears; ids must form contiguous blocks"});
      }
      ++report.instance_count;
      in_instance = true;
      first_event_of_instance = true;
    }

    ++report.total_tokens;
    const int mi = header.markers.index_of(view.token);
    if (mi >= 0) ++report.marker_occurrences[static_cast<std::size_t>(mi)].second;

    if (first_event_of_instance) {
      if (view.position != 0) {
        report.violations.push_back({current_id, view.position, line_no,
                                     "first event position is " +
                                         std::to_string(view.position) +
                                         ", expected 0"});
      }
      first_event_of_instance = false;
    } else if (view.position <= prev_position) {
      report.violations.push_back({current_id, view.position, line_no,
                                   "event positions not strictly increasing (" +
                                       std::to_string(prev_position) + " then " +
                                       std::to_string(view.position) + ")"});
    }
    prev_position = view.position;

    collect_selection_violations(
        selections, &header.shape, sum_check, [&](std::string msg) {
          report.violations.push_back({current_id, view.position, line_no, std::move(msg)});
        });
  }
  return report;
}

std::string report_to_json(const ValidationReport& report) {
  std::string out = "{\"total_tokens\":";
  append_uint(out, report.total_tokens);
  out += ",\"instances\":";
  append_uint(out, report.instance_count);
  out += ",\"markers\":{";
  for (std::size_t i = 0; i < report.marker_occurrences.size(); ++i) {
    if (i > 0) out.push_back(',');
    append_json_string(out, report.marker_occurrences[i].first);
    out.push_back(':');
    append_uint(out, report.marker_occurrences[i].second);
  }
  out += "},\"violations\":[";
  for (std::size_t i = 0; i < report.violations.size(); ++i) {
    const auto& v = report.violations[i];
    if (i > 0) out.push_back(',');
    out += "{\"instance\":";
    append_json_string(out, v.instance_id);
    out += ",\"position\":";
    append_int(out, v.position);
    out += ",\"line\":";
    append_uint(out, v.line);
    out += ",\"message\":";
    append_json_string(out, v.message);
    out += "}";
  }
  out += "]}";
  return out;
}

// ---------------------------------------------------------------------------
// Corpus I/O.

void write_corpus(const TraceCorpus& corpus, std::ostream& out) {
  TraceHeader header{kTraceFormatVersion, corpus.shape, corpus.markers,
                     corpus.steering};
  std::string buf = format_header(header);
  buf.push_back('\n');
  for (const auto& inst : corpus.instances) {
    bool first = true;
    for (const auto& event : inst.events) {
      append_event_record(buf, event, inst.id, first ? inst.domain : std::string_view{});
      buf.push_back('\n');
      first = false;
      if (buf.size() >= (1u << 20)) {
        out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
        buf.clear();
      }
    }
  }
  if (!buf.empty()) {
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  }
  if (!out) throw io_error("failed writing trace stream");
}

void write_corpus_file(const TraceCorpus& corpus, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw io_error("cannot open " + path.string() + " for writing");
  write_corpus(corpus, out);
}

namespace {

TraceCorpus read_impl(std::istream& in, std::vector<Violation>* sink) {
  std::string line;
  if (!std::getline(in, line)) {
    throw parse_error("empty trace: missing header record", 1);
  }
  TraceHeader header = parse_header(line);

  TraceCorpus corpus;
  corpus.shape = header.shape;
  corpus.markers = header.markers;
  corpus.steering = header.steering;
  const bool sum_check = header.sum_check_applies();

  auto report = [&](const std::string& instance_id, std::int64_t position,
                    std::size_t line_no, std::string msg) {
    if (sink == nullptr) {
      throw validation_error("line " + std::to_string(line_no) + " (instance \"" +
                             instance_id + "\"): " + std::move(msg));
    }
    sink->push_back({instance_id, position, line_no, std::move(msg)});
  };

  std::unordered_set<std::string> closed_ids;
  EventView view;
  std::vector<WeightedExpert> selections;
  EventScratch scratch;
  std::size_t line_no = 1;
  TraceInstance* current = nullptr;

  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    parse_event_view(line, view, selections, scratch, line_no);

    if (current == nullptr || current->id != view.instance_id) {
      if (current != nullptr) closed_ids.insert(current->id);
      if (closed_ids.contains(std::string(view.instance_id))) {
        report(std::string(view.instance_id), view.position, line_no,
               "instance id \"" + std::string(view.instance_id) +
                   "\" reappears; ids must form contiguous blocks");
      }
      corpus.instances.emplace_back();
      current = &corpus.instances.back();
      current->id = std::string(view.instance_id);
      current->domain = std::string(view.domain);
    }

    RoutingEvent event;
    event.position = view.position;
    event.token = std::string(view.token);
    event.selections = selections;
    collect_selection_violations(
        event.selections, &corpus.shape, sum_check, [&](std::string msg) {
          report(current->id, event.position, line_no, std::move(msg));
        });
    if (!current->events.empty() &&
        event.position <= current->events.back().position) {
      report(current->id, event.position, line_no,
             "event positions not strictly increasing (" +
                 std::to_string(current->events.back().position) + " then " +
                 std::to_string(event.position) + ")");
    } else if (current->events.empty() && event.position != 0) {
      report(current->id, event.position, line_no,
             "first event position is " + std::to_string(event.position) +
                 ", expected 0");
    }
    current->events.push_back(std::move(event));
  }
  return corpus;
}

}  // namespace

TraceCorpus read_corpus(std::istream& in) { return read_impl(in, nullptr); }

TraceCorpus read_corpus_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw io_error("cannot open " + path.string());
  return read_corpus(in);
}

TraceCorpus read_corpus_lenient(std::istream& in, std::vector<Violation>& violations) {
  return read_impl(in, &violations);
}

TraceCorpus read_corpus_lenient_file(const std::filesystem::path& path,
                                     std::vector<Violation>& violations) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw io_error("cannot open " + path.string());
  return read_corpus_lenient(in, violations);
}

}  // namespace moesteer
