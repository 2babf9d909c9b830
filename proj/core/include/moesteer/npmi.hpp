#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "moesteer/expert_key.hpp"
#include "moesteer/trace.hpp"

namespace moesteer {

// Mergeable sufficient statistics for nPMI scoring: per-expert activation
// totals (K_n), per-expert-per-marker co-activation counts (k_n), marker
// occurrence totals (M_x) and the token total (T). Counts are dense over
// the model shape so shards merge with a pointwise sum.
class CountStats {
 public:
  CountStats() = default;
  CountStats(ModelShape shape, std::vector<std::string> marker_tokens);

  // Counts one token: bumps T, the token's marker total when it is a
  // marker, K_n of every selected expert and k_n for marker tokens.
  void add_event(std::string_view token, std::span<const WeightedExpert> selections);

  std::uint64_t total_tokens() const { return token_count_; }
  std::uint64_t activations(const ExpertKey& key) const;
  std::uint64_t co_activations(const ExpertKey& key, std::string_view marker) const;
  std::uint64_t marker_occurrences(std::string_view marker) const;

  const ModelShape& shape() const { return shape_; }
  const std::vector<std::string>& marker_tokens() const { return markers_; }

  bool operator==(const CountStats&) const = default;

 private:
  friend CountStats merge_stats(const CountStats&, const CountStats&);

  int marker_index(std::string_view token) const;

  ModelShape shape_;
  std::vector<std::string> markers_;
  std::vector<std::uint64_t> expert_totals_;  // [flat expert]
  std::vector<std::uint64_t> co_counts_;      // [flat expert * markers + marker]
  std::vector<std::uint64_t> marker_totals_;  // [marker]
  std::uint64_t token_count_ = 0;
};

// Single-pass count over an in-memory corpus.
CountStats count_stats(const TraceCorpus& corpus);

// Streaming count over a trace file without materializing the corpus.
// threads > 1 shards the file at line granularity and merges; the result
// is identical to the sequential count. Markers default to the trace
// header's; the second overload counts a caller-supplied set instead.
CountStats count_stats_file(const std::filesystem::path& path, int threads = 1);
CountStats count_stats_file(const std::filesystem::path& path,
                            const MarkerSet& markers, int threads);

// Pointwise sum. Requires equal shapes and marker lists.
CountStats merge_stats(const CountStats& a, const CountStats& b);

// Normalized pointwise mutual information from counts:
//   (log2(k/M) + log2(T/K)) / log2(T/k)
// Returns exactly -1 when k = 0 (never co-occur) and exactly +1 when
// k = K = M (exclusive co-occurrence). Throws when k = T, where the
// normalizing denominator vanishes.
double npmi(std::uint64_t co_activations, std::uint64_t activations,
            std::uint64_t marker_occurrences, std::uint64_t total_tokens);

// Signed sum over the marker set: sum of c_x * npmi_x. Every marker of
// `markers` must have an entry (use -1 for zero-count markers).
double combined_score(const std::map<std::string, double>& per_marker_npmi,
                      const MarkerSet& markers);

struct ExpertScore {
  ExpertKey key;
  std::vector<double> per_marker;  // aligned with NpmiReport::marker_tokens
  double combined = 0.0;
  int rank = 0;

  bool operator==(const ExpertScore&) const = default;
};

// Per-expert nPMI values and the combined score, sorted by rank. Covers
// every expert with at least one activation.
struct NpmiReport {
  std::vector<std::string> marker_tokens;
  std::vector<ExpertScore> experts;

  bool operator==(const NpmiReport&) const = default;

  const ExpertScore* find(const ExpertKey& key) const;
};

// The top-l experts of a report, in rank order.
struct CognitiveExpertSet {
  std::vector<ExpertKey> experts;
  std::string source_domain;
  int l = 0;

  bool operator==(const CognitiveExpertSet&) const = default;
};

// Scores every activated expert, sorts by combined score (descending,
// ties by ExpertKey order) and returns the report plus the top-l set.
// Throws when top_l exceeds the number of scored experts; top_l = 0 is
// allowed for report-only use.
std::pair<NpmiReport, CognitiveExpertSet> rank_experts(
    const CountStats& stats, const MarkerSet& markers, int top_l,
    std::string_view source_domain = "all");

// Report file: experts sorted by rank, values with 12 significant digits.
std::string report_to_json(const NpmiReport& report);

std::string expert_set_to_json(const CognitiveExpertSet& set);
CognitiveExpertSet expert_set_from_json(std::string_view text);

}  // namespace moesteer
