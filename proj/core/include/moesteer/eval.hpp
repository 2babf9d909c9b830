#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "moesteer/expert_key.hpp"
#include "moesteer/npmi.hpp"
#include "moesteer/sim.hpp"

namespace moesteer {

// Per-generation report metrics: token usage, think-span segmentation and
// the post-think answer tokens.
struct GenerationMetrics {
  std::int64_t token_count = 0;
  int thought_count = 0;
  bool think_span_found = false;
  bool unterminated_span = false;          // "<think>" never closed
  std::vector<std::string> answer;         // tokens after "</think>", "<eos>" excluded

  bool operator==(const GenerationMetrics&) const = default;
};

// 0 without a think span, else 1 + the number of switch-marker tokens
// inside the "<think>"..."</think>" span. An unterminated span counts to
// the end of the sequence.
int thought_count(std::span<const std::string> tokens,
                  std::span<const std::string> switch_markers);

GenerationMetrics analyze_generation(std::span<const std::string> tokens,
                                     std::span<const std::string> switch_markers);

// True when the designated answer token appears after "</think>".
bool generation_passes(const GenerationMetrics& metrics,
                       std::string_view answer_token);

// Unbiased pass@k estimator 1 - C(n-c,k)/C(n,k), evaluated in exact
// rational arithmetic and rounded once on emission.
double pass_at_k(int samples, int correct, int k);

// Ground-truth evaluation of an identification run against planted experts.
struct RecoveryResult {
  double precision_at_l = 0.0;  // |identified ∩ planted| / l
  double recall = 0.0;          // |identified ∩ planted| / |planted|
  CognitiveExpertSet identified;
  std::vector<ExpertKey> planted;
};

RecoveryResult recovery(const CognitiveExpertSet& identified,
                        std::span<const ExpertKey> planted);

struct MetricsAggregate {
  std::int64_t instances = 0;
  std::int64_t passed = 0;
  double accuracy = 0.0;  // passed / instances
  double mean_thoughts = 0.0;
  double mean_tokens = 0.0;
  std::int64_t unterminated = 0;

  bool operator==(const MetricsAggregate&) const = default;
};

MetricsAggregate aggregate_metrics(std::span<const GenerationMetrics> metrics,
                                   const std::vector<bool>& passed);

struct SweepCell {
  std::string arm;          // "top1".."topN" or "random"
  double multiplier = 1.0;  // beta
  MetricsAggregate metrics;

  bool operator==(const SweepCell&) const = default;
};

struct SweepOptions {
  std::vector<double> multipliers{1, 2, 4, 8, 16, 32, 64, 128, 256, 512};
  std::vector<int> top_ls{1, 2, 3, 4, 5};
  bool random_arm = true;
  std::uint64_t random_arm_seed = 0;  // dedicated stream, never perturbs main arms
  int task_count = 30;
  int max_tokens = 48;
  bool renormalize = false;
};

struct SweepReport {
  MetricsAggregate baseline;  // no steering; equals every multiplier-1 cell
  std::vector<ExpertKey> random_arm_experts;
  std::vector<SweepCell> cells;

  bool operator==(const SweepReport&) const = default;
};

// Runs the multiplier x top-l grid over the model's seeded synthetic tasks.
// Requires multiplier 1 in the list so the baseline row exists; the random
// arm draws two experts outside the top-max(l) set from its own seed stream.
SweepReport sweep(const ToyMoeModel& model, const SweepOptions& options,
                  const NpmiReport& expert_report);

std::string sweep_to_json(const SweepReport& report);
SweepReport sweep_from_json(std::string_view text);

enum class ReportFormat { kMarkdown, kTsv };

// Two labeled metric rows plus a delta row, with Table-style 1-decimal
// accuracy/thoughts and integer token counts.
std::string compare_report(const MetricsAggregate& baseline,
                           const MetricsAggregate& steered,
                           std::string_view baseline_name,
                           std::string_view steered_name, ReportFormat format);

// Multiplier x arm grids (accuracy, thoughts, tokens) for a sweep report.
std::string render_sweep(const SweepReport& report, ReportFormat format);

}  // namespace moesteer
