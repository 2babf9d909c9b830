#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "moesteer/expert_key.hpp"
#include "moesteer/steering.hpp"

namespace moesteer {

// Thinking-marker tokens and their Eq.-style signed coefficients.
// Matching is exact token-text equality on the serialized token field.
struct MarkerSet {
  std::vector<std::pair<std::string, double>> entries;

  bool operator==(const MarkerSet&) const = default;

  // {"<think>", +1}, {"</think>", -1}, {"Alternatively", -1}
  static MarkerSet defaults();

  int index_of(std::string_view token) const;
  bool contains(std::string_view token) const { return index_of(token) >= 0; }
  std::size_t size() const { return entries.size(); }
};

// Routing of one emitted token: the selected experts and gate weights of
// every traced layer, grouped by ascending layer.
struct RoutingEvent {
  std::int64_t position = 0;
  std::string token;
  std::vector<WeightedExpert> selections;

  bool operator==(const RoutingEvent&) const = default;
};

struct TraceInstance {
  std::string id;
  std::string domain;  // math / physics / chemistry / biology / synthetic
  std::vector<RoutingEvent> events;

  bool operator==(const TraceInstance&) const = default;
};

struct TraceCorpus {
  ModelShape shape;
  MarkerSet markers = MarkerSet::defaults();
  std::vector<TraceInstance> instances;
  // Present when the trace was generated under steering. With
  // renormalize=false the per-layer weight sums legitimately exceed 1 and
  // the sum check is skipped during validation.
  std::optional<SteeringConfig> steering;

  bool operator==(const TraceCorpus&) const = default;

  std::uint64_t total_tokens() const;
};

struct TraceHeader {
  int version = 1;
  ModelShape shape;
  MarkerSet markers;
  std::optional<SteeringConfig> steering;

  bool sum_check_applies() const {
    return !steering.has_value() || steering->renormalize;
  }
};

// ---------------------------------------------------------------------------
// Record-level parsing and formatting.
//
// The trace file is UTF-8, one JSON record per line, no intra-record
// whitespace. First line is the header:
//   {"v":1,"shape":{"L":4,"N":16,"O":2},"markers":[["<think>",1],...]}
// optionally extended with ,"steer":{...} for steered traces. Every other
// line is an event record:
//   {"i":"<instance>","p":<position>,"t":"<token>","s":[[layer,expert,weight],...]}
// with exactly O triples per traced layer, layers ascending. Weights are
// written with 17 significant digits, which makes round trips bit-exact.

// Strict single-record parse: enforces per-layer weight sums (within 1e-9)
// and rejects duplicate experts within a layer. Shape-dependent checks
// (O triples per layer, key ranges) require corpus context and live in
// read_corpus/validate.
RoutingEvent parse_event(std::string_view line);

// `domain` is emitted as the optional "d" field; the corpus writer sets it
// on the first record of each instance only.
std::string format_event(const RoutingEvent& event, std::string_view instance_id,
                         std::string_view domain = {});
TraceHeader parse_header(std::string_view line);
std::string format_header(const TraceHeader& header);

// Zero-copy event view for high-volume scanning. The views alias either the
// input line or the scratch buffers (when the text was escaped).
struct EventView {
  std::string_view instance_id;
  std::string_view domain;  // empty unless the record carries "d"
  std::int64_t position = 0;
  std::string_view token;
};

struct EventScratch {
  std::string id;
  std::string domain;
  std::string token;
};

// Parses one event record into `out`, reusing `selections` and `scratch`
// so a scanning loop runs allocation-free in steady state. Performs
// syntactic checks only. Throws parse_error on malformed input.
void parse_event_view(std::string_view line, EventView& out,
                      std::vector<WeightedExpert>& selections,
                      EventScratch& scratch, std::size_t line_number = 0);

// ---------------------------------------------------------------------------
// Validation.

struct Violation {
  std::string instance_id;
  std::int64_t position = -1;  // -1 for instance- or corpus-level findings
  std::size_t line = 0;        // 1-based file line, 0 when not file-sourced
  std::string message;
};

struct ValidationReport {
  std::uint64_t total_tokens = 0;   // T
  std::uint64_t instance_count = 0; // M
  // Occurrence count per marker token, in MarkerSet order.
  std::vector<std::pair<std::string, std::uint64_t>> marker_occurrences;
  std::vector<Violation> violations;

  bool ok() const { return violations.empty(); }
};

// Checks every event against the corpus shape (weight sums, duplicate
// experts, out-of-shape keys, O selections per layer), instance positions,
// and instance-id uniqueness. Violations are report content, not errors.
ValidationReport validate_corpus(const TraceCorpus& corpus);

// Same checks as validate_corpus, applied in one streaming pass over a
// trace file (with 1-based line numbers) so arbitrarily large traces
// validate in constant memory.
ValidationReport validate_trace_file(const std::filesystem::path& path);

std::string report_to_json(const ValidationReport& report);

// ---------------------------------------------------------------------------
// Streaming I/O. read_corpus(write_corpus(c)) == c for any valid corpus, and
// rewriting a parsed file reproduces it byte for byte.

void write_corpus(const TraceCorpus& corpus, std::ostream& out);
void write_corpus_file(const TraceCorpus& corpus, const std::filesystem::path& path);

// Strict: throws parse_error / validation_error on the first offence.
TraceCorpus read_corpus(std::istream& in);
TraceCorpus read_corpus_file(const std::filesystem::path& path);

// Lenient: collects rule violations instead of throwing so a validator can
// report them; still throws parse_error on syntactically unreadable input.
TraceCorpus read_corpus_lenient(std::istream& in, std::vector<Violation>& violations);
TraceCorpus read_corpus_lenient_file(const std::filesystem::path& path,
                                     std::vector<Violation>& violations);

}  // namespace moesteer
