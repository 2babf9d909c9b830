#include "moesteer/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <set>

#include <json.hpp>

#include "moesteer/error.hpp"
#include "moesteer/rng.hpp"
#include "text_util.hpp"

namespace moesteer {

namespace {

constexpr std::string_view kThinkToken = "<think>";
constexpr std::string_view kEndThinkToken = "</think>";
constexpr std::string_view kEosToken = "<eos>";

bool contains(std::span<const std::string> set, std::string_view token) {
  for (const auto& s : set) {
    if (s == token) return true;
  }
  return false;
}

}  // namespace

GenerationMetrics analyze_generation(std::span<const std::string> tokens,
                                     std::span<const std::string> switch_markers) {
  GenerationMetrics m;
  m.token_count = static_cast<std::int64_t>(tokens.size());

  std::size_t open = tokens.size();
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (tokens[i] == kThinkToken) {
      open = i;
      break;
    }
  }
  if (open == tokens.size()) return m;  // no think span

  m.think_span_found = true;
  std::size_t close = tokens.size();
  int switches = 0;
  for (std::size_t i = open + 1; i < tokens.size(); ++i) {
    if (tokens[i] == kEndThinkToken) {
      close = i;
      break;
    }
    if (contains(switch_markers, tokens[i])) ++switches;
  }
  m.thought_count = 1 + switches;
  if (close == tokens.size()) {
    m.unterminated_span = true;
    return m;
  }
  for (std::size_t i = close + 1; i < tokens.size(); ++i) {
    if (tokens[i] != kEosToken) m.answer.push_back(tokens[i]);
  }
  return m;
}

int thought_count(std::span<const std::string> tokens,
                  std::span<const std::string> switch_markers) {
  return analyze_generation(tokens, switch_markers).thought_count;
}

bool generation_passes(const GenerationMetrics& metrics,
                       std::string_view answer_token) {
  for (const auto& tok : metrics.answer) {
    if (tok == answer_token) return true;
  }
  return false;
}

// ---------------------------------------------------------------------------
// pass@k.

namespace {

using u128 = unsigned __int128;

u128 gcd128(u128 a, u128 b) {
  while (b != 0) {
    u128 t = a % b;
    a = b;
    b = t;
  }
  return a;
}

}  // namespace

double pass_at_k(int samples, int correct, int k) {
  if (samples < 0 || correct < 0 || correct > samples) {
    throw validation_error("pass@k requires 0 <= c <= n, got n=" +
                           std::to_string(samples) + " c=" + std::to_string(correct));
  }
  if (k < 1 || k > samples) {
    throw validation_error("pass@k requires 1 <= k <= n, got k=" +
                           std::to_string(k) + " n=" + std::to_string(samples));
  }
  if (samples > 170) {
    throw validation_error("pass@k supports up to n=170 samples");
  }
  if (correct == 0) return 0.0;
  if (samples - correct < k) return 1.0;  // every size-k draw hits a correct sample

  // C(n-c,k)/C(n,k) as a running product of (n-c-i)/(n-i), reduced at each
  // step so the 128-bit intermediates never overflow for n <= 170.
  u128 num = 1;
  u128 den = 1;
  for (int i = 0; i < k; ++i) {
    num *= static_cast<u128>(samples - correct - i);
    den *= static_cast<u128>(samples - i);
    const u128 g = gcd128(num, den);
    num /= g;
    den /= g;
  }
  return static_cast<double>(den - num) / static_cast<double>(den);
}

RecoveryResult recovery(const CognitiveExpertSet& identified,
                        std::span<const ExpertKey> planted) {
  if (identified.l < 1) {
    throw validation_error("recovery requires an identified set with l >= 1");
  }
  std::set<ExpertKey> planted_set(planted.begin(), planted.end());
  int hits = 0;
  for (const auto& key : identified.experts) {
    if (planted_set.contains(key)) ++hits;
  }
  RecoveryResult result;
  result.identified = identified;
  result.planted.assign(planted.begin(), planted.end());
  result.precision_at_l = static_cast<double>(hits) / identified.l;
  result.recall = planted_set.empty()
                      ? 0.0
                      : static_cast<double>(hits) / static_cast<double>(planted_set.size());
  return result;
}

// ---------------------------------------------------------------------------
// Sweeps.

MetricsAggregate aggregate_metrics(std::span<const GenerationMetrics> metrics,
                                   const std::vector<bool>& passed) {
  if (metrics.size() != passed.size()) {
    throw validation_error("metrics/passed size mismatch");
  }
  MetricsAggregate agg;
  agg.instances = static_cast<std::int64_t>(metrics.size());
  double thoughts = 0.0;
  double tokens = 0.0;
  for (std::size_t i = 0; i < metrics.size(); ++i) {
    if (passed[i]) ++agg.passed;
    if (metrics[i].unterminated_span) ++agg.unterminated;
    thoughts += metrics[i].thought_count;
    tokens += static_cast<double>(metrics[i].token_count);
  }
  if (agg.instances > 0) {
    agg.accuracy = static_cast<double>(agg.passed) / static_cast<double>(agg.instances);
    agg.mean_thoughts = thoughts / static_cast<double>(agg.instances);
    agg.mean_tokens = tokens / static_cast<double>(agg.instances);
  }
  return agg;
}

namespace {

const std::vector<std::string>& default_switch_markers() {
  static const std::vector<std::string> markers{"Alternatively"};
  return markers;
}

MetricsAggregate run_arm(const ToyMoeModel& model,
                         std::span<const SyntheticTask> tasks,
                         const SteeringConfig& config, int max_tokens) {
  std::vector<GenerationMetrics> metrics;
  std::vector<bool> passed;
  metrics.reserve(tasks.size());
  passed.reserve(tasks.size());
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    GenerationResult gen = generate(model, tasks[i].prompt, config, max_tokens);
    GenerationMetrics m = analyze_generation(gen.tokens, default_switch_markers());
    passed.push_back(generation_passes(m, tasks[i].answer_token));
    metrics.push_back(std::move(m));
  }
  return aggregate_metrics(metrics, passed);
}

template <typename T>
void require_unique(const std::vector<T>& values, const char* what) {
  for (std::size_t i = 0; i < values.size(); ++i) {
    for (std::size_t j = 0; j < i; ++j) {
      if (values[i] == values[j]) {
        throw validation_error(std::string("duplicate ") + what + " in sweep grid");
      }
    }
  }
}

}  // namespace

SweepReport sweep(const ToyMoeModel& model, const SweepOptions& options,
                  const NpmiReport& expert_report) {
  if (options.task_count < 1) throw validation_error("sweep needs at least one task");
  require_unique(options.multipliers, "multiplier");
  require_unique(options.top_ls, "top-l");
  if (std::find(options.multipliers.begin(), options.multipliers.end(), 1.0) ==
      options.multipliers.end()) {
    throw validation_error("multiplier list must include 1 (the baseline row)");
  }
  int max_l = 0;
  for (int l : options.top_ls) {
    if (l < 1) throw validation_error("top-l values must be >= 1");
    max_l = std::max(max_l, l);
  }
  if (static_cast<std::size_t>(max_l) > expert_report.experts.size()) {
    throw validation_error("top-l of " + std::to_string(max_l) + " exceeds the " +
                           std::to_string(expert_report.experts.size()) +
                           " scored experts");
  }

  std::vector<SyntheticTask> tasks;
  tasks.reserve(static_cast<std::size_t>(options.task_count));
  for (int i = 0; i < options.task_count; ++i) {
    tasks.push_back(make_task(model.seed, i));
  }

  SweepReport report;
  report.baseline = run_arm(model, tasks, SteeringConfig{}, options.max_tokens);

  struct Arm {
    std::string name;
    CognitiveExpertSet set;
  };
  std::vector<Arm> arms;
  for (int l : options.top_ls) {
    CognitiveExpertSet set;
    set.source_domain = "sweep";
    set.l = l;
    for (int i = 0; i < l; ++i) {
      set.experts.push_back(expert_report.experts[static_cast<std::size_t>(i)].key);
    }
    arms.push_back({"top" + std::to_string(l), std::move(set)});
  }

  if (options.random_arm) {
    // Two uniform draws outside the top-max(l) set, from a dedicated stream.
    std::set<ExpertKey> excluded;
    for (int i = 0; i < max_l; ++i) {
      excluded.insert(expert_report.experts[static_cast<std::size_t>(i)].key);
    }
    SplitMix64 rng(derive_seed(options.random_arm_seed, 0x72616e64ULL));
    CognitiveExpertSet set;
    set.source_domain = "random";
    set.l = 2;
    while (set.experts.size() < 2) {
      const ExpertKey key = model.shape.key_at(
          static_cast<int>(rng.next_below(static_cast<std::uint64_t>(model.shape.total_experts()))));
      if (excluded.contains(key)) continue;
      if (std::find(set.experts.begin(), set.experts.end(), key) != set.experts.end()) {
        continue;
      }
      set.experts.push_back(key);
    }
    report.random_arm_experts = set.experts;
    arms.push_back({"random", std::move(set)});
  }

  for (const auto& arm : arms) {
    for (double multiplier : options.multipliers) {
      const SteeringConfig config =
          from_ranked(arm.set, multiplier, options.renormalize);
      SweepCell cell;
      cell.arm = arm.name;
      cell.multiplier = multiplier;
      cell.metrics = run_arm(model, tasks, config, options.max_tokens);
      report.cells.push_back(std::move(cell));
    }
  }
  return report;
}

// ---------------------------------------------------------------------------
// Serialization and rendering.

namespace {

void append_aggregate(std::string& out, const MetricsAggregate& a) {
  out += "{\"instances\":";
  detail::append_int(out, a.instances);
  out += ",\"passed\":";
  detail::append_int(out, a.passed);
  out += ",\"accuracy\":";
  detail::append_double(out, a.accuracy);
  out += ",\"mean_thoughts\":";
  detail::append_double(out, a.mean_thoughts);
  out += ",\"mean_tokens\":";
  detail::append_double(out, a.mean_tokens);
  out += ",\"unterminated\":";
  detail::append_int(out, a.unterminated);
  out += "}";
}

MetricsAggregate aggregate_from_json(const nlohmann::json& j) {
  MetricsAggregate a;
  a.instances = j.value("instances", std::int64_t{0});
  a.passed = j.value("passed", std::int64_t{0});
  a.accuracy = j.value("accuracy", 0.0);
  a.mean_thoughts = j.value("mean_thoughts", 0.0);
  a.mean_tokens = j.value("mean_tokens", 0.0);
  a.unterminated = j.value("unterminated", std::int64_t{0});
  return a;
}

std::string format_fixed(double v, const char* spec) {
  char buf[40];
  std::snprintf(buf, sizeof buf, spec, v);
  return buf;
}

}  // namespace

std::string sweep_to_json(const SweepReport& report) {
  std::string out = "{\"baseline\":";
  append_aggregate(out, report.baseline);
  out += ",\"random_arm_experts\":[";
  for (std::size_t i = 0; i < report.random_arm_experts.size(); ++i) {
    if (i > 0) out.push_back(',');
    out.push_back('[');
    detail::append_int(out, report.random_arm_experts[i].layer);
    out.push_back(',');
    detail::append_int(out, report.random_arm_experts[i].expert);
    out.push_back(']');
  }
  out += "],\"cells\":[";
  for (std::size_t i = 0; i < report.cells.size(); ++i) {
    const auto& cell = report.cells[i];
    if (i > 0) out.push_back(',');
    out += "{\"arm\":";
    detail::append_json_string(out, cell.arm);
    out += ",\"multiplier\":";
    detail::append_double(out, cell.multiplier);
    out += ",\"metrics\":";
    append_aggregate(out, cell.metrics);
    out += "}";
  }
  out += "]}";
  return out;
}

SweepReport sweep_from_json(std::string_view text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw parse_error(std::string("invalid sweep report: ") + e.what());
  }
  if (!j.is_object() || !j.contains("baseline") || !j.contains("cells")) {
    throw parse_error("sweep report missing baseline or cells");
  }
  SweepReport report;
  report.baseline = aggregate_from_json(j["baseline"]);
  for (const auto& e : j.value("random_arm_experts", nlohmann::json::array())) {
    report.random_arm_experts.push_back(
        ExpertKey{e.at(0).get<int>(), e.at(1).get<int>()});
  }
  for (const auto& c : j["cells"]) {
    SweepCell cell;
    cell.arm = c.value("arm", std::string{});
    cell.multiplier = c.value("multiplier", 1.0);
    cell.metrics = aggregate_from_json(c.at("metrics"));
    report.cells.push_back(std::move(cell));
  }
  return report;
}

std::string compare_report(const MetricsAggregate& baseline,
                           const MetricsAggregate& steered,
                           std::string_view baseline_name,
                           std::string_view steered_name, ReportFormat format) {
  if (baseline.instances == 0 || steered.instances == 0) {
    throw validation_error("no instances to compare");
  }
  const double acc_a = baseline.accuracy * 100.0;
  const double acc_b = steered.accuracy * 100.0;

  std::string out;
  if (format == ReportFormat::kMarkdown) {
    out += "| Method | Accuracy | Thoughts | #Tokens |\n";
    out += "|---|---|---|---|\n";
    out += "| " + std::string(baseline_name) + " | " + format_fixed(acc_a, "%.1f") +
           " | " + format_fixed(baseline.mean_thoughts, "%.1f") + " | " +
           format_fixed(baseline.mean_tokens, "%.0f") + " |\n";
    out += "| " + std::string(steered_name) + " | " + format_fixed(acc_b, "%.1f") +
           " | " + format_fixed(steered.mean_thoughts, "%.1f") + " | " +
           format_fixed(steered.mean_tokens, "%.0f") + " |\n";
    out += "| delta | " + format_fixed(acc_b - acc_a, "%+.1f") + " | " +
           format_fixed(steered.mean_thoughts - baseline.mean_thoughts, "%+.1f") +
           " | " +
           format_fixed(steered.mean_tokens - baseline.mean_tokens, "%+.0f") +
           " |\n";
  } else {
    out += "method\taccuracy\tthoughts\ttokens\n";
    out += std::string(baseline_name) + "\t" + format_fixed(acc_a, "%.1f") + "\t" +
           format_fixed(baseline.mean_thoughts, "%.1f") + "\t" +
           format_fixed(baseline.mean_tokens, "%.0f") + "\n";
    out += std::string(steered_name) + "\t" + format_fixed(acc_b, "%.1f") + "\t" +
           format_fixed(steered.mean_thoughts, "%.1f") + "\t" +
           format_fixed(steered.mean_tokens, "%.0f") + "\n";
    out += "delta\t" + format_fixed(acc_b - acc_a, "%+.1f") + "\t" +
           format_fixed(steered.mean_thoughts - baseline.mean_thoughts, "%+.1f") +
           "\t" +
           format_fixed(steered.mean_tokens - baseline.mean_tokens, "%+.0f") + "\n";
  }
  return out;
}

std::string render_sweep(const SweepReport& report, ReportFormat format) {
  // Preserve first-seen order for arms and multipliers.
  std::vector<std::string> arms;
  std::vector<double> multipliers;
  for (const auto& cell : report.cells) {
    if (std::find(arms.begin(), arms.end(), cell.arm) == arms.end()) {
      arms.push_back(cell.arm);
    }
    if (std::find(multipliers.begin(), multipliers.end(), cell.multiplier) ==
        multipliers.end()) {
      multipliers.push_back(cell.multiplier);
    }
  }
  auto cell_at = [&](const std::string& arm, double multiplier) -> const SweepCell* {
    for (const auto& cell : report.cells) {
      if (cell.arm == arm && cell.multiplier == multiplier) return &cell;
    }
    return nullptr;
  };

  struct Block {
    const char* title;
    double (*value)(const MetricsAggregate&);
    const char* spec;
  };
  const Block blocks[] = {
      {"Accuracy", [](const MetricsAggregate& a) { return a.accuracy * 100.0; }, "%.1f"},
      {"Thoughts", [](const MetricsAggregate& a) { return a.mean_thoughts; }, "%.1f"},
      {"#Tokens", [](const MetricsAggregate& a) { return a.mean_tokens; }, "%.0f"},
  };

  const bool md = format == ReportFormat::kMarkdown;
  std::string out;
  for (const auto& block : blocks) {
    if (md) {
      out += "### ";
      out += block.title;
      out += "\n| Multiplier |";
      for (const auto& arm : arms) out += " " + arm + " |";
      out += "\n|---|";
      for (std::size_t i = 0; i < arms.size(); ++i) out += "---|";
      out += "\n";
    } else {
      out += block.title;
      out += "\nmultiplier";
      for (const auto& arm : arms) out += "\t" + arm;
      out += "\n";
    }
    for (double m : multipliers) {
      out += md ? "| " + format_fixed(m, "%.0f") + " |" : format_fixed(m, "%.0f");
      for (const auto& arm : arms) {
        const SweepCell* cell = cell_at(arm, m);
        const std::string value =
            cell != nullptr ? format_fixed(block.value(cell->metrics), block.spec)
                            : std::string("-");
        out += md ? " " + value + " |" : "\t" + value;
      }
      out += "\n";
    }
    out += "\n";
  }
  if (md) {
    out += "Baseline (multiplier 1): accuracy " +
           format_fixed(report.baseline.accuracy * 100.0, "%.1f") + ", thoughts " +
           format_fixed(report.baseline.mean_thoughts, "%.1f") + ", tokens " +
           format_fixed(report.baseline.mean_tokens, "%.0f") + "\n";
  } else {
    out += "baseline\t" + format_fixed(report.baseline.accuracy * 100.0, "%.1f") +
           "\t" + format_fixed(report.baseline.mean_thoughts, "%.1f") + "\t" +
           format_fixed(report.baseline.mean_tokens, "%.0f") + "\n";
  }
  return out;
}

}  // namespace moesteer
