// Acceptance suite: one pass/fail line per criterion, nonzero exit when any
// criterion fails. Criteria with a runtime budget enforce it.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <string>
#include <thread>
#include <vector>

#include <unistd.h>

#include "moesteer/error.hpp"
#include "moesteer/eval.hpp"
#include "moesteer/npmi.hpp"
#include "moesteer/rng.hpp"
#include "moesteer/sim.hpp"
#include "moesteer/steering.hpp"
#include "moesteer/trace.hpp"

namespace fs = std::filesystem;
using namespace moesteer;

namespace {

struct Failure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void require(bool ok, const std::string& what) {
  if (!ok) throw Failure(what);
}

int default_thread_count() {
  const unsigned hw = std::thread::hardware_concurrency();
  return static_cast<int>(std::min(8u, std::max(1u, hw)));
}

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
      .count();
}

// --------------------------------------------------------------------------
// Criterion 1: nPMI oracle equivalence on 200 random corpora.

struct BruteCounts {
  std::map<ExpertKey, std::uint64_t> activations;
  std::map<std::pair<ExpertKey, std::string>, std::uint64_t> co;
  std::map<std::string, std::uint64_t> marker;
  std::uint64_t total = 0;
};

BruteCounts brute_count(const TraceCorpus& corpus) {
  BruteCounts counts;
  for (const auto& inst : corpus.instances) {
    for (const auto& event : inst.events) {
      ++counts.total;
      bool is_marker = false;
      for (const auto& [token, coeff] : corpus.markers.entries) {
        if (token == event.token) {
          is_marker = true;
          ++counts.marker[token];
        }
      }
      for (const auto& sel : event.selections) {
        ++counts.activations[sel.key];
        if (is_marker) ++counts.co[{sel.key, event.token}];
      }
    }
  }
  return counts;
}

TraceCorpus random_small_corpus(SplitMix64& rng) {
  TraceCorpus corpus;
  corpus.shape = ModelShape{1, 1 + static_cast<int>(rng.next_below(5)), 1};
  const int instances = 1 + static_cast<int>(rng.next_below(4));
  int remaining = 1 + static_cast<int>(rng.next_below(200));
  for (int i = 0; i < instances && remaining > 0; ++i) {
    TraceInstance inst;
    inst.id = "i" + std::to_string(i);
    const int len = std::min(remaining, 1 + static_cast<int>(rng.next_below(60)));
    remaining -= len;
    for (int p = 0; p < len; ++p) {
      RoutingEvent event;
      event.position = p;
      const std::uint64_t choice = rng.next_below(6);
      event.token = choice == 0   ? "<think>"
                    : choice == 1 ? "</think>"
                    : choice == 2 ? "Alternatively"
                                  : "w" + std::to_string(choice);
      event.selections.push_back(
          {ExpertKey{0, static_cast<int>(rng.next_below(static_cast<std::uint64_t>(
                            corpus.shape.experts_per_layer)))},
           1.0});
      inst.events.push_back(std::move(event));
    }
    corpus.instances.push_back(std::move(inst));
  }
  return corpus;
}

void criterion_npmi_oracle() {
  const auto start = std::chrono::steady_clock::now();
  SplitMix64 rng(20240601);
  std::uint64_t comparisons = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const TraceCorpus corpus = random_small_corpus(rng);
    const CountStats stats = count_stats(corpus);
    const BruteCounts brute = brute_count(corpus);
    require(stats.total_tokens() == brute.total, "token totals disagree");
    for (int e = 0; e < corpus.shape.experts_per_layer; ++e) {
      const ExpertKey key{0, e};
      const auto a_it = brute.activations.find(key);
      if (a_it == brute.activations.end()) continue;
      for (const auto& [token, coeff] : corpus.markers.entries) {
        const auto m_it = brute.marker.find(token);
        const std::uint64_t M = m_it == brute.marker.end() ? 0 : m_it->second;
        const auto co_it = brute.co.find({key, token});
        const std::uint64_t k = co_it == brute.co.end() ? 0 : co_it->second;
        if (k == brute.total) continue;  // normalizer vanishes; npmi() rejects
        // Exhaustive probability table route (Eqs. of the PMI definition).
        double expected = -1.0;
        if (k > 0) {
          const double p_y_given_x = static_cast<double>(k) / static_cast<double>(M);
          const double p_y =
              static_cast<double>(a_it->second) / static_cast<double>(brute.total);
          const double p_xy =
              static_cast<double>(k) / static_cast<double>(brute.total);
          expected = std::log2(p_y_given_x / p_y) / -std::log2(p_xy);
        }
        const double engine =
            npmi(stats.co_activations(key, token), stats.activations(key),
                 stats.marker_occurrences(token), stats.total_tokens());
        require(std::abs(engine - expected) <= 1e-12,
                "npmi mismatch: engine " + std::to_string(engine) + " oracle " +
                    std::to_string(expected));
        ++comparisons;
      }
    }
  }
  require(comparisons > 1000, "oracle run made too few comparisons");
  const double elapsed = seconds_since(start);
  require(elapsed < 10.0, "exceeded 10 s budget: " + std::to_string(elapsed));
}

// --------------------------------------------------------------------------
// Criterion 2: nPMI boundary behavior and monotonicity.

void criterion_npmi_boundaries() {
  require(npmi(10, 10, 10, 1000) == 1.0, "exclusive co-occurrence != 1.0");
  require(npmi(0, 50, 10, 1000) == -1.0, "k=0 != -1.0");
  require(npmi(0, 0, 0, 17) == -1.0, "k=0 (inactive expert) != -1.0");

  SplitMix64 rng(31337);
  int checked = 0;
  while (checked < 1000) {
    const std::uint64_t T = 16 + rng.next_below(1000000);
    const std::uint64_t M = 2 + rng.next_below(T / 2);
    const std::uint64_t K = 2 + rng.next_below(T / 2);
    const std::uint64_t cap = std::min(M, K);
    const std::uint64_t k = 1 + rng.next_below(cap - 1);
    if (k + 1 >= T) continue;
    require(npmi(k + 1, K, M, T) > npmi(k, K, M, T),
            "npmi not strictly increasing in k");
    ++checked;
  }
}

// --------------------------------------------------------------------------
// Criterion 3: planted-expert recovery, 20 seeds, bias 20, 100 instances.

void criterion_planted_recovery() {
  const auto start = std::chrono::steady_clock::now();
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    const ExpertKey target{static_cast<int>(seed % 4),
                           static_cast<int>((seed * 7) % 16)};
    const auto model = plant(make_model(seed), PlantSpec{target, 20.0, "<think>"});
    const auto corpus = simulate_corpus(model, SteeringConfig{}, 100, 48);
    const auto stats = count_stats(corpus);
    const auto [report, set] = rank_experts(stats, corpus.markers, 2, "synthetic");
    require(set.experts[0] == target,
            "seed " + std::to_string(seed) + ": planted expert not at rank 1");
    require(report.experts[0].per_marker[0] == 1.0,
            "seed " + std::to_string(seed) + ": marker npmi != 1.0");
  }
  const double elapsed = seconds_since(start);
  require(elapsed < 30.0, "exceeded 30 s budget: " + std::to_string(elapsed));
}

// --------------------------------------------------------------------------
// Criterion 4: steering arithmetic.

void criterion_steering_arithmetic() {
  GateDecision base;
  base.layer = 0;
  base.selected = {{ExpertKey{0, 0}, 0.5}, {ExpertKey{0, 1}, 0.3}, {ExpertKey{0, 2}, 0.2}};

  SteeringConfig no_renorm;
  no_renorm.entries = {{ExpertKey{0, 2}, 4.0}};
  const auto raw = apply_steering(base, no_renorm);
  require(raw.selected[0].weight == 0.5 && raw.selected[1].weight == 0.3 &&
              raw.selected[2].weight == 0.2 * 4.0,
          "no-renorm worked example mismatch");
  require(std::abs(raw.selected[2].weight - 0.8) <= 1e-12, "0.2*4 != 0.8");

  SteeringConfig renorm = no_renorm;
  renorm.renormalize = true;
  const auto scaled = apply_steering(base, renorm);
  const double sum = 0.5 + 0.3 + 0.2 * 4.0;
  require(scaled.selected[0].weight == 0.5 / sum &&
              scaled.selected[1].weight == 0.3 / sum &&
              scaled.selected[2].weight == (0.2 * 4.0) / sum,
          "renorm worked example mismatch");
  require(std::abs(scaled.selected[0].weight - 0.3125) <= 1e-12 &&
              std::abs(scaled.selected[1].weight - 0.1875) <= 1e-12 &&
              std::abs(scaled.selected[2].weight - 0.5) <= 1e-12,
          "renorm example differs from published decimals");

  SplitMix64 rng(777);
  for (int trial = 0; trial < 1000; ++trial) {
    const int n = 4 + static_cast<int>(rng.next_below(12));
    const int o = 2 + static_cast<int>(rng.next_below(3));
    std::vector<double> logits(static_cast<std::size_t>(n));
    for (auto& l : logits) l = rng.next_double(-4.0, 4.0);
    const GateDecision decision = gate(logits, o, 0);

    // beta = 1 is a bit-for-bit identity.
    SteeringConfig identity;
    identity.renormalize = (trial % 2) == 0;
    for (const auto& sel : decision.selected) identity.entries.push_back({sel.key, 1.0});
    require(apply_steering(decision, identity) == decision,
            "beta=1 not bit-identical");

    const double beta = std::exp2(static_cast<double>(rng.next_below(10)));
    const ExpertKey target =
        decision.selected[rng.next_below(static_cast<std::uint64_t>(o))].key;
    double target_weight = 0.0;
    for (const auto& sel : decision.selected) {
      if (sel.key == target) target_weight = sel.weight;
    }

    SteeringConfig boost;
    boost.entries = {{target, beta}};
    boost.renormalize = true;
    const auto renormed = apply_steering(decision, boost);
    double renormed_sum = 0.0;
    for (const auto& sel : renormed.selected) renormed_sum += sel.weight;
    require(std::abs(renormed_sum - 1.0) <= 1e-9, "renormalized sum != 1 +- 1e-9");

    boost.renormalize = false;
    const auto unrenormed = apply_steering(decision, boost);
    double unrenormed_sum = 0.0;
    for (const auto& sel : unrenormed.selected) unrenormed_sum += sel.weight;
    require(std::abs(unrenormed_sum - (1.0 + (beta - 1.0) * target_weight)) <= 1e-9,
            "unrenormalized sum != 1 + (beta-1)w");
  }
}

// --------------------------------------------------------------------------
// Criterion 5: merge algebra over 50 random corpora and 1..8 shards.

void criterion_merge_algebra() {
  SplitMix64 rng(550);
  for (int trial = 0; trial < 50; ++trial) {
    const TraceCorpus corpus = random_small_corpus(rng);
    const CountStats whole = count_stats(corpus);
    const int shards = 1 + static_cast<int>(rng.next_below(8));
    std::vector<TraceCorpus> parts(static_cast<std::size_t>(shards));
    for (auto& part : parts) {
      part.shape = corpus.shape;
      part.markers = corpus.markers;
    }
    for (std::size_t i = 0; i < corpus.instances.size(); ++i) {
      parts[i % static_cast<std::size_t>(shards)].instances.push_back(
          corpus.instances[i]);
    }
    CountStats folded(corpus.shape, whole.marker_tokens());
    for (const auto& part : parts) folded = merge_stats(folded, count_stats(part));
    require(folded == whole, "folded shards != whole corpus (trial " +
                                 std::to_string(trial) + ")");
  }
}

// --------------------------------------------------------------------------
// Criterion 6: sweep multiplier-1 row equals the baseline bit-for-bit.

void criterion_sweep_baseline_identity() {
  const auto model = make_model(606);
  const auto corpus = simulate_corpus(model, SteeringConfig{}, 16, 48);
  const auto [report, set] = rank_experts(count_stats(corpus), corpus.markers, 5);

  SweepOptions options;  // Table-2 shape: 10 multipliers x (top1..top5 + random)
  options.multipliers = {1, 2, 4, 8, 16, 32, 64, 128, 256, 512};
  options.top_ls = {1, 2, 3, 4, 5};
  options.random_arm = true;
  options.random_arm_seed = 99;
  options.task_count = 12;

  const SweepReport sweep_report = sweep(model, options, report);
  require(sweep_report.cells.size() == 60, "unexpected grid size");
  int baseline_rows = 0;
  for (const auto& cell : sweep_report.cells) {
    require(cell.metrics.instances == 12, "cell missing metrics");
    if (cell.multiplier == 1.0) {
      require(cell.metrics == sweep_report.baseline,
              "multiplier-1 cell differs from baseline in arm " + cell.arm);
      ++baseline_rows;
    }
  }
  require(baseline_rows == 6, "expected 6 multiplier-1 cells");
}

// --------------------------------------------------------------------------
// Criterion 7: pass@k equals exhaustive subset enumeration for all n <= 12.

void criterion_pass_at_k() {
  for (int n = 1; n <= 12; ++n) {
    for (int c = 0; c <= n; ++c) {
      for (int k = 1; k <= n; ++k) {
        std::uint64_t total = 0;
        std::uint64_t hit = 0;
        for (std::uint32_t mask = 0; mask < (1u << n); ++mask) {
          if (__builtin_popcount(mask) != k) continue;
          ++total;
          if ((mask & ((1u << c) - 1)) != 0) ++hit;
        }
        const double expected =
            static_cast<double>(hit) / static_cast<double>(total);
        const double actual = pass_at_k(n, c, k);
        require(actual == expected, "pass@k(" + std::to_string(n) + "," +
                                        std::to_string(c) + "," + std::to_string(k) +
                                        ") != enumeration");
      }
    }
  }
}

// --------------------------------------------------------------------------
// Criterion 8: published-table fixtures round-trip; delta fixture reproduces.

void criterion_fixtures() {
  // R1 Math-domain identified experts, ranks 1..5.
  const std::string math_row =
      R"({"source_domain":"math","l":5,)"
      R"("experts":[[39,182],[29,126],[14,114],[27,45],[16,129]]})";
  const CognitiveExpertSet math = expert_set_from_json(math_row);
  require(math.experts.size() == 5 && math.experts[0] == ExpertKey{39, 182} &&
              math.experts[1] == ExpertKey{29, 126},
          "math fixture parse mismatch");
  require(expert_set_from_json(expert_set_to_json(math)) == math,
          "math fixture round trip");

  CognitiveExpertSet math_top2 = math;
  math_top2.experts.resize(2);
  math_top2.l = 2;
  const SteeringConfig config = from_ranked(math_top2, 64.0, false);
  require(config.entries.size() == 2 &&
              config.entries[0] == SteeringEntry{ExpertKey{39, 182}, 64.0} &&
              config.entries[1] == SteeringEntry{ExpertKey{29, 126}, 64.0},
          "from_ranked fixture mismatch");
  require(config_from_json(config_to_json(config)) == config,
          "steering config round trip");

  // Qwen3 "All"-domain five-expert row as a steering config.
  const std::string qwen_row =
      R"({"renormalize":false,)"
      R"("entries":[[25,103,64],[26,30,64],[82,29,64],[67,15,64],[37,57,64]]})";
  const SteeringConfig qwen = config_from_json(qwen_row);
  require(qwen.entries.size() == 5 && qwen.entries[0].key == ExpertKey{25, 103} &&
              qwen.entries[4].key == ExpertKey{37, 57},
          "qwen fixture parse mismatch");
  require(config_from_json(config_to_json(qwen)) == qwen, "qwen round trip");

  // Published accuracy/thoughts/token rows replayed as data.
  MetricsAggregate baseline;
  baseline.instances = 30;
  baseline.passed = 22;
  baseline.accuracy = 0.733;
  baseline.mean_thoughts = 12.0;
  baseline.mean_tokens = 9219.0;
  MetricsAggregate steered = baseline;
  steered.passed = 25;
  steered.accuracy = 0.833;
  steered.mean_thoughts = 10.2;
  steered.mean_tokens = 8317.0;
  const std::string table =
      compare_report(baseline, steered, "baseline", "steered", ReportFormat::kTsv);
  require(table.find("delta\t+10.0\t-1.8\t-902") != std::string::npos,
          "delta fixture mismatch: " + table);
}

// --------------------------------------------------------------------------
// Criterion 9: end-to-end pipeline determinism through the CLI binary.

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(in)),
                     std::istreambuf_iterator<char>());
}

void criterion_pipeline_determinism() {
  const fs::path dir =
      fs::temp_directory_path() /
      ("moe-steer-acceptance-" + std::to_string(static_cast<unsigned>(::getpid())));
  fs::create_directories(dir);
  struct Cleanup {
    fs::path dir;
    ~Cleanup() {
      std::error_code ec;
      fs::remove_all(dir, ec);
    }
  } cleanup{dir};

  auto shell = [&](const std::string& args) {
    const std::string cmd = std::string(MOE_STEER_BIN) + " " + args +
                            " > /dev/null 2> /dev/null";
    const int status = std::system(cmd.c_str());
    require(WIFEXITED(status) && WEXITSTATUS(status) == 0, "command failed: " + args);
  };

  for (const std::string tag : {"a", "b"}) {
    const auto p = [&](const std::string& stem) {
      return (dir / (stem + "-" + tag)).string();
    };
    shell("simulate --seed 42 --instances 16 --plant \"2,11,30,<think>\" --out " +
          p("trace.jsonl"));
    shell("score " + p("trace.jsonl") + " --out " + p("report.json"));
    shell("identify " + p("trace.jsonl") + " -l 2 --out " + p("experts.json") +
          " --config-out " + p("config.json"));
    shell("steer --seed 42 --instances 16 --config " + p("config.json") +
          " --trace-out " + p("steered.jsonl"));
    shell("sweep --trace " + p("trace.jsonl") +
          " --seed 42 --plant \"2,11,30,<think>\" --multipliers 1,4,64 "
          "--top-l 1,2 --random-arm --instances 8 --out " +
          p("sweep.json"));
    shell("report --sweep " + p("sweep.json") + " --format md --out " +
          p("table.md"));
  }
  for (const std::string stem : {"trace.jsonl", "report.json", "experts.json",
                                 "config.json", "steered.jsonl", "sweep.json",
                                 "table.md"}) {
    const std::string a = slurp(dir / (stem + "-a"));
    const std::string b = slurp(dir / (stem + "-b"));
    require(!a.empty(), stem + " is empty");
    require(a == b, stem + " differs between runs");
  }
}

// --------------------------------------------------------------------------
// Criterion 10: 10M-token scoring throughput and parallel/sequential equality.

void criterion_throughput() {
  const fs::path path =
      fs::temp_directory_path() /
      ("moe-steer-perf-" + std::to_string(static_cast<unsigned>(::getpid())) +
       ".jsonl");
  struct Cleanup {
    fs::path path;
    ~Cleanup() {
      std::error_code ec;
      fs::remove(path, ec);
    }
  } cleanup{path};

  constexpr std::uint64_t kTokens = 10'000'000;
  constexpr int kExperts = 16;
  // Writer doubles as the count oracle: tallies are accumulated while the
  // records are formatted.
  std::vector<std::uint64_t> expected_activations(kExperts, 0);
  std::uint64_t expected_think = 0;
  std::uint64_t expected_end = 0;
  std::uint64_t expected_switch = 0;
  std::uint64_t expected_co_think_e0 = 0;
  {
    std::ofstream out(path, std::ios::binary);
    require(static_cast<bool>(out), "cannot create perf trace");
    std::string buf;
    buf.reserve(8u << 20);
    buf += R"({"v":1,"shape":{"L":1,"N":16,"O":2},"markers":)"
           R"([["<think>",1],["</think>",-1],["Alternatively",-1]]})";
    buf += '\n';
    const char* weight_pairs[4] = {"0.5],[0,%d,0.5", "0.75],[0,%d,0.25",
                                   "0.625],[0,%d,0.375", "0.9375],[0,%d,0.0625"};
    char line[160];
    for (std::uint64_t i = 0; i < kTokens; ++i) {
      const std::uint64_t instance = i / 1000;
      const int position = static_cast<int>(i % 1000);
      const int e1 = static_cast<int>(i % kExperts);
      int e2 = static_cast<int>((i / 7 + 3) % kExperts);
      if (e2 == e1) e2 = (e2 + 1) % kExperts;
      const char* token = i % 97 == 0    ? "<think>"
                          : i % 89 == 0  ? "</think>"
                          : i % 83 == 0  ? "Alternatively"
                                         : "w07";
      if (i % 97 == 0) {
        ++expected_think;
        if (e1 == 0 || e2 == 0) ++expected_co_think_e0;
      } else if (i % 89 == 0) {
        ++expected_end;
      } else if (i % 83 == 0) {
        ++expected_switch;
      }
      ++expected_activations[static_cast<std::size_t>(e1)];
      ++expected_activations[static_cast<std::size_t>(e2)];
      char pair[64];
      std::snprintf(pair, sizeof pair, weight_pairs[i % 4], e2);
      const int len =
          std::snprintf(line, sizeof line, "{\"i\":\"i%06llu\",\"p\":%d,\"t\":\"%s\","
                                           "\"s\":[[0,%d,%s]]}\n",
                        static_cast<unsigned long long>(instance), position, token,
                        e1, pair);
      buf.append(line, static_cast<std::size_t>(len));
      if (buf.size() > (4u << 20)) {
        out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
        buf.clear();
      }
    }
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    require(static_cast<bool>(out), "failed writing perf trace");
  }

  const auto start = std::chrono::steady_clock::now();
  const int threads = default_thread_count();
  const CountStats parallel = count_stats_file(path, threads);
  const auto [report, set] =
      rank_experts(parallel, MarkerSet::defaults(), 2, "synthetic");
  const double elapsed = seconds_since(start);

  require(parallel.total_tokens() == kTokens, "token total mismatch");
  require(parallel.marker_occurrences("<think>") == expected_think,
          "<think> count mismatch");
  require(parallel.marker_occurrences("</think>") == expected_end,
          "</think> count mismatch");
  require(parallel.marker_occurrences("Alternatively") == expected_switch,
          "switch count mismatch");
  for (int e = 0; e < kExperts; ++e) {
    require(parallel.activations(ExpertKey{0, e}) ==
                expected_activations[static_cast<std::size_t>(e)],
            "activation count mismatch for expert " + std::to_string(e));
  }
  require(parallel.co_activations(ExpertKey{0, 0}, "<think>") ==
              expected_co_think_e0,
          "co-activation count mismatch");
  require(!report.experts.empty() && set.experts.size() == 2, "ranking failed");
  require(elapsed < 60.0,
          "scoring took " + std::to_string(elapsed) + " s (budget 60 s)");

  const CountStats sequential = count_stats_file(path, 1);
  require(sequential == parallel, "parallel counts differ from sequential");

  std::fprintf(stderr, "    (scored %llu tokens with %d threads in %.2f s)\n",
               static_cast<unsigned long long>(kTokens), threads, elapsed);
}

}  // namespace

int main() {
  struct Criterion {
    int id;
    const char* name;
    std::function<void()> body;
  };
  const std::vector<Criterion> criteria = {
      {1, "nPMI oracle equivalence (200 random corpora, 1e-12, <10s)",
       criterion_npmi_oracle},
      {2, "nPMI boundary behavior and monotonicity", criterion_npmi_boundaries},
      {3, "planted-expert recovery (20 seeds, bias 20, 100 instances, <30s)",
       criterion_planted_recovery},
      {4, "steering arithmetic (worked examples + 1000 random decisions)",
       criterion_steering_arithmetic},
      {5, "merge algebra (50 corpora, 1..8 shards, exact)", criterion_merge_algebra},
      {6, "sweep multiplier-1 row equals baseline bit-for-bit",
       criterion_sweep_baseline_identity},
      {7, "pass@k equals exhaustive enumeration for n <= 12", criterion_pass_at_k},
      {8, "published-table fixtures round-trip and delta fixture",
       criterion_fixtures},
      {9, "end-to-end pipeline determinism (byte-identical artifacts)",
       criterion_pipeline_determinism},
      {10, "10M-token scoring throughput and parallel equality",
       criterion_throughput},
  };

  int failures = 0;
  for (const auto& criterion : criteria) {
    const auto start = std::chrono::steady_clock::now();
    try {
      criterion.body();
      std::printf("[PASS] criterion %2d: %s (%.2fs)\n", criterion.id, criterion.name,
                  seconds_since(start));
    } catch (const std::exception& e) {
      ++failures;
      std::printf("[FAIL] criterion %2d: %s: %s\n", criterion.id, criterion.name,
                  e.what());
    }
    std::fflush(stdout);
  }
  if (failures > 0) {
    std::printf("%d of %zu acceptance criteria failed\n", failures, criteria.size());
    return 1;
  }
  std::printf("all %zu acceptance criteria passed\n", criteria.size());
  return 0;
}
