#include "moesteer/npmi.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <thread>

#include <json.hpp>

#include "moesteer/error.hpp"
#include "text_util.hpp"

namespace moesteer {

CountStats::CountStats(ModelShape shape, std::vector<std::string> marker_tokens)
    : shape_(shape),
      markers_(std::move(marker_tokens)),
      expert_totals_(static_cast<std::size_t>(shape.total_experts()), 0),
      co_counts_(static_cast<std::size_t>(shape.total_experts()) * markers_.size(), 0),
      marker_totals_(markers_.size(), 0) {
  if (!shape.valid()) {
    throw validation_error("invalid model shape for count statistics");
  }
}

int CountStats::marker_index(std::string_view token) const {
  for (std::size_t i = 0; i < markers_.size(); ++i) {
    if (markers_[i] == token) return static_cast<int>(i);
  }
  return -1;
}

void CountStats::add_event(std::string_view token,
                           std::span<const WeightedExpert> selections) {
  ++token_count_;
  const int mi = marker_index(token);
  if (mi >= 0) ++marker_totals_[static_cast<std::size_t>(mi)];
  const std::size_t n_markers = markers_.size();
  for (const auto& sel : selections) {
    if (!shape_.contains(sel.key)) {
      throw validation_error("expert " + to_string(sel.key) +
                             " outside counting shape");
    }
    const auto flat = static_cast<std::size_t>(shape_.flat_index(sel.key));
    ++expert_totals_[flat];
    if (mi >= 0) ++co_counts_[flat * n_markers + static_cast<std::size_t>(mi)];
  }
}

std::uint64_t CountStats::activations(const ExpertKey& key) const {
  if (!shape_.contains(key)) return 0;
  return expert_totals_[static_cast<std::size_t>(shape_.flat_index(key))];
}

std::uint64_t CountStats::co_activations(const ExpertKey& key,
                                         std::string_view marker) const {
  const int mi = marker_index(marker);
  if (mi < 0 || !shape_.contains(key)) return 0;
  return co_counts_[static_cast<std::size_t>(shape_.flat_index(key)) * markers_.size() +
                    static_cast<std::size_t>(mi)];
}

std::uint64_t CountStats::marker_occurrences(std::string_view marker) const {
  const int mi = marker_index(marker);
  return mi < 0 ? 0 : marker_totals_[static_cast<std::size_t>(mi)];
}

CountStats count_stats(const TraceCorpus& corpus) {
  std::vector<std::string> marker_tokens;
  marker_tokens.reserve(corpus.markers.size());
  for (const auto& [token, coeff] : corpus.markers.entries) {
    marker_tokens.push_back(token);
  }
  CountStats stats(corpus.shape, std::move(marker_tokens));
  for (const auto& inst : corpus.instances) {
    for (const auto& event : inst.events) {
      stats.add_event(event.token, event.selections);
    }
  }
  return stats;
}

CountStats merge_stats(const CountStats& a, const CountStats& b) {
  if (a.shape_ != b.shape_) {
    throw validation_error("cannot merge count statistics with mismatched shapes");
  }
  if (a.markers_ != b.markers_) {
    throw validation_error("cannot merge count statistics with mismatched marker sets");
  }
  CountStats out = a;
  for (std::size_t i = 0; i < out.expert_totals_.size(); ++i) {
    out.expert_totals_[i] += b.expert_totals_[i];
  }
  for (std::size_t i = 0; i < out.co_counts_.size(); ++i) {
    out.co_counts_[i] += b.co_counts_[i];
  }
  for (std::size_t i = 0; i < out.marker_totals_.size(); ++i) {
    out.marker_totals_[i] += b.marker_totals_[i];
  }
  out.token_count_ += b.token_count_;
  return out;
}

// ---------------------------------------------------------------------------
// Scoring.

double npmi(std::uint64_t co_activations, std::uint64_t activations,
            std::uint64_t marker_occurrences, std::uint64_t total_tokens) {
  const std::uint64_t k = co_activations;
  const std::uint64_t K = activations;
  const std::uint64_t M = marker_occurrences;
  const std::uint64_t T = total_tokens;
  if (T == 0) throw validation_error("nPMI undefined for an empty corpus (T = 0)");
  if (k > K || k > M || K > T || M > T) {
    throw validation_error("inconsistent counts: k=" + std::to_string(k) +
                           " K=" + std::to_string(K) + " M=" + std::to_string(M) +
                           " T=" + std::to_string(T));
  }
  if (k == 0) return -1.0;  // never co-occur
  if (k == T) {
    throw validation_error(
        "marker occurs at every token (k = T = " + std::to_string(T) +
        "); nPMI denominator log2(T/k) is zero");
  }
  const double kd = static_cast<double>(k);
  const double numerator = std::log2(kd / static_cast<double>(M)) +
                           std::log2(static_cast<double>(T) / static_cast<double>(K));
  const double denominator = std::log2(static_cast<double>(T) / kd);
  return std::clamp(numerator / denominator, -1.0, 1.0);
}

double combined_score(const std::map<std::string, double>& per_marker_npmi,
                      const MarkerSet& markers) {
  double total = 0.0;
  for (const auto& [token, coeff] : markers.entries) {
    auto it = per_marker_npmi.find(token);
    if (it == per_marker_npmi.end()) {
      throw validation_error("per-marker nPMI map missing marker \"" + token + "\"");
    }
    total += coeff * it->second;
  }
  return total;
}

const ExpertScore* NpmiReport::find(const ExpertKey& key) const {
  for (const auto& e : experts) {
    if (e.key == key) return &e;
  }
  return nullptr;
}

std::pair<NpmiReport, CognitiveExpertSet> rank_experts(
    const CountStats& stats, const MarkerSet& markers, int top_l,
    std::string_view source_domain) {
  NpmiReport report;
  for (const auto& [token, coeff] : markers.entries) {
    if (std::find(stats.marker_tokens().begin(), stats.marker_tokens().end(),
                  token) == stats.marker_tokens().end()) {
      throw validation_error("marker \"" + token +
                             "\" was not counted in these statistics");
    }
    report.marker_tokens.push_back(token);
  }

  const std::uint64_t total = stats.total_tokens();
  for (int flat = 0; flat < stats.shape().total_experts(); ++flat) {
    const ExpertKey key = stats.shape().key_at(flat);
    const std::uint64_t activations = stats.activations(key);
    if (activations == 0) continue;
    ExpertScore score;
    score.key = key;
    score.per_marker.reserve(markers.size());
    double combined = 0.0;
    for (const auto& [token, coeff] : markers.entries) {
      const double v = npmi(stats.co_activations(key, token), activations,
                            stats.marker_occurrences(token), total);
      score.per_marker.push_back(v);
      combined += coeff * v;
    }
    score.combined = combined;
    report.experts.push_back(std::move(score));
  }

  std::sort(report.experts.begin(), report.experts.end(),
            [](const ExpertScore& a, const ExpertScore& b) {
              if (a.combined != b.combined) return a.combined > b.combined;
              return a.key < b.key;
            });
  for (std::size_t i = 0; i < report.experts.size(); ++i) {
    report.experts[i].rank = static_cast<int>(i) + 1;
  }

  if (top_l < 0 || static_cast<std::size_t>(top_l) > report.experts.size()) {
    throw validation_error("top-l of " + std::to_string(top_l) +
                           " exceeds the " + std::to_string(report.experts.size()) +
                           " experts with activations");
  }
  CognitiveExpertSet set;
  set.source_domain = std::string(source_domain);
  set.l = top_l;
  set.experts.reserve(static_cast<std::size_t>(top_l));
  for (int i = 0; i < top_l; ++i) {
    set.experts.push_back(report.experts[static_cast<std::size_t>(i)].key);
  }
  return {std::move(report), std::move(set)};
}

// ---------------------------------------------------------------------------
// Streaming file counts.

namespace {

// Calls `fn(line)` for every line whose first byte lies in [begin, end).
// The final such line is processed in full even when it crosses `end`.
template <typename Fn>
void scan_lines(const std::filesystem::path& path, std::uint64_t begin,
                std::uint64_t end, Fn&& fn) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw io_error("cannot open " + path.string());
  in.seekg(static_cast<std::streamoff>(begin));

  std::vector<char> buf(4u << 20);
  std::size_t fill = 0;
  std::uint64_t line_start = begin;  // absolute offset of buf[0]'s line start
  bool done = false;

  while (!done) {
    in.read(buf.data() + fill, static_cast<std::streamsize>(buf.size() - fill));
    const auto got = static_cast<std::size_t>(in.gcount());
    if (got == 0) {
      if (fill > 0 && line_start < end) {
        fn(std::string_view(buf.data(), fill));  // final line without newline
      }
      break;
    }
    fill += got;

    std::size_t consumed = 0;
    while (true) {
      const char* nl = static_cast<const char*>(
          std::memchr(buf.data() + consumed, '\n', fill - consumed));
      if (nl == nullptr) break;
      const auto len = static_cast<std::size_t>(nl - (buf.data() + consumed));
      if (line_start >= end) {
        done = true;
        break;
      }
      if (len > 0) fn(std::string_view(buf.data() + consumed, len));
      consumed += len + 1;
      line_start += len + 1;
    }
    if (done) break;

    if (consumed == 0 && fill == buf.size()) {
      buf.resize(buf.size() * 2);  // single line longer than the buffer
      continue;
    }
    std::memmove(buf.data(), buf.data() + consumed, fill - consumed);
    fill -= consumed;
  }
}

// First offset >= raw that starts a line (i.e. follows a newline).
std::uint64_t align_to_line(std::ifstream& in, std::uint64_t raw,
                            std::uint64_t file_size) {
  if (raw >= file_size) return file_size;
  in.clear();
  in.seekg(static_cast<std::streamoff>(raw));
  std::uint64_t pos = raw;
  char buf[64 * 1024];
  while (pos < file_size) {
    in.read(buf, sizeof buf);
    const auto got = static_cast<std::size_t>(in.gcount());
    if (got == 0) return file_size;
    const char* nl = static_cast<const char*>(std::memchr(buf, '\n', got));
    if (nl != nullptr) return pos + static_cast<std::uint64_t>(nl - buf) + 1;
    pos += got;
  }
  return file_size;
}

CountStats count_range(const std::filesystem::path& path, const ModelShape& shape,
                       const std::vector<std::string>& marker_tokens,
                       std::uint64_t begin, std::uint64_t end) {
  CountStats stats(shape, marker_tokens);
  EventView view;
  std::vector<WeightedExpert> selections;
  EventScratch scratch;
  scan_lines(path, begin, end, [&](std::string_view line) {
    parse_event_view(line, view, selections, scratch);
    stats.add_event(view.token, selections);
  });
  return stats;
}

}  // namespace

namespace {

CountStats count_stats_file_impl(const std::filesystem::path& path,
                                 const MarkerSet* marker_override, int threads) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw io_error("cannot open " + path.string());
  std::string header_line;
  if (!std::getline(in, header_line)) {
    throw parse_error("empty trace: missing header record", 1);
  }
  const TraceHeader header = parse_header(header_line);
  const MarkerSet& markers =
      marker_override != nullptr ? *marker_override : header.markers;
  std::vector<std::string> marker_tokens;
  marker_tokens.reserve(markers.size());
  for (const auto& [token, coeff] : markers.entries) {
    marker_tokens.push_back(token);
  }

  const std::uint64_t file_size = std::filesystem::file_size(path);
  const std::uint64_t data_start = header_line.size() + 1;
  if (data_start >= file_size) {
    return CountStats(header.shape, std::move(marker_tokens));
  }

  threads = std::max(1, threads);
  const std::uint64_t span = file_size - data_start;
  if (threads == 1 || span < (1u << 20)) {
    return count_range(path, header.shape, marker_tokens, data_start, file_size);
  }

  std::vector<std::uint64_t> bounds;
  bounds.push_back(data_start);
  for (int i = 1; i < threads; ++i) {
    const std::uint64_t raw =
        data_start + span * static_cast<std::uint64_t>(i) /
                         static_cast<std::uint64_t>(threads);
    bounds.push_back(align_to_line(in, raw, file_size));
  }
  bounds.push_back(file_size);

  std::vector<CountStats> shards(static_cast<std::size_t>(threads));
  std::vector<std::thread> workers;
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(threads));
  for (int i = 0; i < threads; ++i) {
    workers.emplace_back([&, i] {
      try {
        shards[static_cast<std::size_t>(i)] =
            count_range(path, header.shape, marker_tokens,
                        bounds[static_cast<std::size_t>(i)],
                        bounds[static_cast<std::size_t>(i) + 1]);
      } catch (...) {
        errors[static_cast<std::size_t>(i)] = std::current_exception();
      }
    });
  }
  for (auto& w : workers) w.join();
  for (const auto& err : errors) {
    if (err) std::rethrow_exception(err);
  }

  CountStats total = std::move(shards[0]);
  for (std::size_t i = 1; i < shards.size(); ++i) {
    total = merge_stats(total, shards[i]);
  }
  return total;
}

}  // namespace

CountStats count_stats_file(const std::filesystem::path& path, int threads) {
  return count_stats_file_impl(path, nullptr, threads);
}

CountStats count_stats_file(const std::filesystem::path& path,
                            const MarkerSet& markers, int threads) {
  return count_stats_file_impl(path, &markers, threads);
}

// ---------------------------------------------------------------------------
// Serialization.

std::string report_to_json(const NpmiReport& report) {
  std::string out = "{\"markers\":[";
  for (std::size_t i = 0; i < report.marker_tokens.size(); ++i) {
    if (i > 0) out.push_back(',');
    detail::append_json_string(out, report.marker_tokens[i]);
  }
  out += "],\"experts\":[";
  for (std::size_t i = 0; i < report.experts.size(); ++i) {
    const auto& e = report.experts[i];
    if (i > 0) out.push_back(',');
    out += "{\"layer\":";
    detail::append_int(out, e.key.layer);
    out += ",\"expert\":";
    detail::append_int(out, e.key.expert);
    out += ",\"rank\":";
    detail::append_int(out, e.rank);
    out += ",\"combined\":";
    detail::append_double(out, e.combined, 12);
    out += ",\"npmi\":{";
    for (std::size_t m = 0; m < report.marker_tokens.size(); ++m) {
      if (m > 0) out.push_back(',');
      detail::append_json_string(out, report.marker_tokens[m]);
      out.push_back(':');
      detail::append_double(out, e.per_marker[m], 12);
    }
    out += "}}";
  }
  out += "]}";
  return out;
}

std::string expert_set_to_json(const CognitiveExpertSet& set) {
  std::string out = "{\"source_domain\":";
  detail::append_json_string(out, set.source_domain);
  out += ",\"l\":";
  detail::append_int(out, set.l);
  out += ",\"experts\":[";
  for (std::size_t i = 0; i < set.experts.size(); ++i) {
    if (i > 0) out.push_back(',');
    out.push_back('[');
    detail::append_int(out, set.experts[i].layer);
    out.push_back(',');
    detail::append_int(out, set.experts[i].expert);
    out.push_back(']');
  }
  out += "]}";
  return out;
}

CognitiveExpertSet expert_set_from_json(std::string_view text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw parse_error(std::string("invalid expert set: ") + e.what());
  }
  if (!j.is_object() || !j.contains("experts") || !j["experts"].is_array()) {
    throw parse_error("expert set missing \"experts\" array");
  }
  CognitiveExpertSet set;
  set.source_domain = j.value("source_domain", std::string{});
  for (const auto& e : j["experts"]) {
    if (!e.is_array() || e.size() != 2 || !e[0].is_number_integer() ||
        !e[1].is_number_integer()) {
      throw parse_error("expert entry must be [layer, expert], got " + e.dump());
    }
    set.experts.push_back(ExpertKey{e[0].get<int>(), e[1].get<int>()});
  }
  set.l = j.value("l", static_cast<int>(set.experts.size()));
  if (set.l != static_cast<int>(set.experts.size())) {
    throw validation_error("expert set declares l=" + std::to_string(set.l) +
                           " but lists " + std::to_string(set.experts.size()) +
                           " experts");
  }
  return set;
}

}  // namespace moesteer
