// moe-steer: command-line toolkit for routing-trace analytics and
// inference-time gate-weight steering on the bundled toy MoE simulator.
//
// Exit codes: 0 success, 1 domain error (validation failures, bad inputs,
// I/O), 2 usage error. Logs go to stderr; data goes to files or stdout.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>

#include "moesteer/error.hpp"
#include "moesteer/eval.hpp"
#include "moesteer/npmi.hpp"
#include "moesteer/rng.hpp"
#include "moesteer/sim.hpp"
#include "moesteer/steering.hpp"
#include "moesteer/trace.hpp"
#include "moesteer/version.hpp"

namespace {

using namespace moesteer;

int default_threads() {
  const unsigned hw = std::thread::hardware_concurrency();
  return static_cast<int>(std::min(8u, std::max(1u, hw)));
}

ModelShape parse_shape_flag(const std::string& text) {
  ModelShape shape;
  if (std::sscanf(text.c_str(), "%d,%d,%d", &shape.layers, &shape.experts_per_layer,
                  &shape.experts_per_token) != 3 ||
      !shape.valid()) {
    throw validation_error("--shape expects \"L,N,O\" with 1 <= O <= N, got \"" +
                           text + "\"");
  }
  return shape;
}

PlantSpec parse_plant_flag(const std::string& text) {
  PlantSpec spec;
  int layer = 0;
  int expert = 0;
  double bias = 0.0;
  char marker[128] = {0};
  if (std::sscanf(text.c_str(), "%d,%d,%lf,%127[^\n]", &layer, &expert, &bias,
                  marker) != 4) {
    throw validation_error(
        "--plant expects \"layer,expert,bias,marker\", got \"" + text + "\"");
  }
  spec.target = ExpertKey{layer, expert};
  spec.bias = bias;
  spec.marker = marker;
  return spec;
}

std::vector<double> parse_multipliers(const std::string& text) {
  std::vector<double> out;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t next = text.find(',', pos);
    if (next == std::string::npos) next = text.size();
    out.push_back(std::stod(text.substr(pos, next - pos)));
    pos = next + 1;
  }
  if (out.empty()) throw validation_error("--multipliers list is empty");
  return out;
}

// "1..5" or "1,2,3".
std::vector<int> parse_top_ls(const std::string& text) {
  std::vector<int> out;
  const std::size_t range = text.find("..");
  if (range != std::string::npos) {
    const int lo = std::stoi(text.substr(0, range));
    const int hi = std::stoi(text.substr(range + 2));
    if (lo < 1 || hi < lo) {
      throw validation_error("--top-l range \"" + text + "\" is invalid");
    }
    for (int l = lo; l <= hi; ++l) out.push_back(l);
    return out;
  }
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t next = text.find(',', pos);
    if (next == std::string::npos) next = text.size();
    out.push_back(std::stoi(text.substr(pos, next - pos)));
    pos = next + 1;
  }
  if (out.empty()) throw validation_error("--top-l list is empty");
  return out;
}

MarkerSet load_markers(const std::string& flag) {
  if (flag.empty() || flag == "default") return MarkerSet::defaults();
  std::ifstream in(flag, std::ios::binary);
  if (!in) throw io_error("cannot open markers file " + flag);
  std::string text((std::istreambuf_iterator<char>(in)),
                   std::istreambuf_iterator<char>());
  // Same shape as the header field: [["<think>",1.0],["</think>",-1.0],...]
  const std::string wrapped =
      R"({"v":1,"shape":{"L":1,"N":1,"O":1},"markers":)" + text + "}";
  return parse_header(wrapped).markers;
}

TraceHeader trace_header(const std::string& trace_path) {
  std::ifstream in(trace_path, std::ios::binary);
  if (!in) throw io_error("cannot open " + trace_path);
  std::string header_line;
  if (!std::getline(in, header_line)) {
    throw parse_error("empty trace: missing header record", 1);
  }
  return parse_header(header_line);
}

void write_text(const std::string& path, const std::string& text) {
  if (path.empty() || path == "-") {
    std::fwrite(text.data(), 1, text.size(), stdout);
    return;
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw io_error("cannot open " + path + " for writing");
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) throw io_error("failed writing " + path);
}

struct SimFlags {
  std::uint64_t seed = 42;
  int instances = 100;
  int max_tokens = 48;
  int hidden_dim = 32;
  std::string shape = "4,16,2";
  std::string domain = "synthetic";
  std::vector<std::string> plants;
  std::string steer_config;
  std::string out;
};

void add_sim_flags(CLI::App* cmd, SimFlags& flags, const std::string& out_flag) {
  cmd->add_option("--seed", flags.seed, "Model and task seed")
      ->capture_default_str();
  cmd->add_option("--instances", flags.instances, "Number of instances to generate")
      ->capture_default_str();
  cmd->add_option("--max-tokens", flags.max_tokens, "Per-instance token cap")
      ->capture_default_str();
  cmd->add_option("--hidden-dim", flags.hidden_dim, "Toy model hidden dimension")
      ->capture_default_str();
  cmd->add_option("--shape", flags.shape, "Model shape L,N,O")
      ->capture_default_str();
  cmd->add_option("--domain", flags.domain, "Instance domain tag")
      ->capture_default_str();
  cmd->add_option("--plant", flags.plants,
                  "Ground-truth plant \"layer,expert,bias,marker\" (repeatable)");
  cmd->add_option(out_flag, flags.out, "Output trace file")->required();
}

ToyMoeModel build_model(std::uint64_t seed, const std::string& shape_text,
                        int hidden_dim, const std::vector<std::string>& plant_texts) {
  ToyMoeModel model = make_model(seed, parse_shape_flag(shape_text), hidden_dim);
  for (const auto& text : plant_texts) {
    model = plant(std::move(model), parse_plant_flag(text));
  }
  return model;
}

int run_simulate(const SimFlags& flags) {
  ToyMoeModel model =
      build_model(flags.seed, flags.shape, flags.hidden_dim, flags.plants);
  SteeringConfig config;
  if (!flags.steer_config.empty()) {
    config = parse_config_file(flags.steer_config);
    validate_config(config, model.shape);
  }
  const TraceCorpus corpus =
      simulate_corpus(model, config, flags.instances, flags.max_tokens, flags.domain);
  write_corpus_file(corpus, flags.out);
  std::cerr << "wrote " << corpus.instances.size() << " instances, "
            << corpus.total_tokens() << " tokens to " << flags.out << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"cognitive-expert identification and gate-weight steering toolkit"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string("moe-steer ") + kToolkitVersion +
                                        " (trace format v" +
                                        std::to_string(kTraceFormatVersion) + ")");

  // validate ----------------------------------------------------------------
  std::string validate_trace;
  std::string validate_report_path;
  auto* validate_cmd =
      app.add_subcommand("validate", "Check a trace file against the format invariants");
  validate_cmd->add_option("trace", validate_trace, "Trace file")->required();
  validate_cmd->add_option("--report", validate_report_path,
                           "Write the ValidationReport JSON here");

  // score ---------------------------------------------------------------------
  std::string score_trace;
  std::string score_markers;
  std::string score_out;
  int score_threads = default_threads();
  auto* score_cmd =
      app.add_subcommand("score", "Compute per-expert nPMI scores from a trace");
  score_cmd->add_option("trace", score_trace, "Trace file")->required();
  score_cmd->add_option("--markers", score_markers,
                        "Marker set: a JSON file or \"default\" (default: trace header)");
  score_cmd->add_option("--out", score_out, "Report path (default: stdout)");
  score_cmd->add_option("--threads", score_threads, "Counting threads")
      ->capture_default_str();

  // identify --------------------------------------------------------------
  std::string identify_trace;
  std::string identify_markers;
  std::string identify_out;
  std::string identify_config_out;
  std::string identify_domain = "all";
  int identify_l = 2;
  double identify_beta = 64.0;
  bool identify_renormalize = false;
  int identify_threads = default_threads();
  auto* identify_cmd =
      app.add_subcommand("identify", "Rank experts and emit the top-l cognitive expert set");
  identify_cmd->add_option("trace", identify_trace, "Trace file")->required();
  identify_cmd->add_option("-l,--top-l", identify_l, "Number of experts to select")
      ->capture_default_str();
  identify_cmd->add_option("--markers", identify_markers,
                           "Marker set: a JSON file or \"default\" (default: trace header)");
  identify_cmd->add_option("--out", identify_out, "Expert set path (default: stdout only)");
  identify_cmd->add_option("--config-out", identify_config_out,
                           "Also write a steering config built from the set");
  identify_cmd->add_option("--beta", identify_beta, "Multiplier for --config-out")
      ->capture_default_str();
  identify_cmd->add_flag("--renormalize", identify_renormalize,
                         "Renormalize flag for --config-out");
  identify_cmd->add_option("--domain", identify_domain, "Source domain tag")
      ->capture_default_str();
  identify_cmd->add_option("--threads", identify_threads, "Counting threads")
      ->capture_default_str();

  // simulate / steer --------------------------------------------------------
  SimFlags sim_flags;
  auto* simulate_cmd =
      app.add_subcommand("simulate", "Generate a synthetic reasoning trace");
  add_sim_flags(simulate_cmd, sim_flags, "--out");
  simulate_cmd->add_option("--steer", sim_flags.steer_config,
                           "Steering config applied during generation");

  SimFlags steer_flags;
  auto* steer_cmd = app.add_subcommand(
      "steer", "Generate under a steering config (simulator passthrough)");
  add_sim_flags(steer_cmd, steer_flags, "--trace-out");
  steer_cmd->add_option("--config", steer_flags.steer_config, "Steering config file")
      ->required();

  // sweep -----------------------------------------------------------------
  std::string sweep_trace;
  std::string sweep_out;
  std::string sweep_multipliers = "1,2,4,8,16,32,64,128,256,512";
  std::string sweep_top_ls = "1..5";
  bool sweep_random_arm = false;
  bool sweep_renormalize = false;
  std::uint64_t sweep_seed = 42;
  std::uint64_t sweep_random_seed = 0;
  int sweep_instances = 30;
  int sweep_max_tokens = 48;
  int sweep_hidden_dim = 32;
  int sweep_threads = default_threads();
  std::vector<std::string> sweep_plants;
  auto* sweep_cmd = app.add_subcommand(
      "sweep", "Run the multiplier x top-l steering grid on the simulator");
  sweep_cmd->add_option("--trace", sweep_trace, "Identification trace")->required();
  sweep_cmd->add_option("--out", sweep_out, "Sweep report path")->required();
  sweep_cmd->add_option("--multipliers", sweep_multipliers, "Comma-separated betas")
      ->capture_default_str();
  sweep_cmd->add_option("--top-l", sweep_top_ls, "Arms, e.g. \"1..5\" or \"1,2\"")
      ->capture_default_str();
  sweep_cmd->add_flag("--random-arm", sweep_random_arm,
                      "Add the two-random-experts control arm");
  sweep_cmd->add_flag("--renormalize", sweep_renormalize,
                      "Rescale steered weights to sum to 1");
  sweep_cmd->add_option("--seed", sweep_seed, "Model and task seed (must match the trace)")
      ->capture_default_str();
  sweep_cmd->add_option("--random-seed", sweep_random_seed,
                        "Seed for the random arm (default: derived from --seed)");
  sweep_cmd->add_option("--instances", sweep_instances, "Evaluation task count")
      ->capture_default_str();
  sweep_cmd->add_option("--max-tokens", sweep_max_tokens, "Per-task token cap")
      ->capture_default_str();
  sweep_cmd->add_option("--hidden-dim", sweep_hidden_dim, "Toy model hidden dimension")
      ->capture_default_str();
  sweep_cmd->add_option("--plant", sweep_plants,
                        "Plant used when the trace was generated (repeatable)");
  sweep_cmd->add_option("--threads", sweep_threads, "Counting threads")
      ->capture_default_str();

  // report ------------------------------------------------------------------
  std::string report_sweep_path;
  std::string report_format = "md";
  std::string report_out;
  std::string report_compare_arm;
  double report_compare_multiplier = 0.0;
  auto* report_cmd =
      app.add_subcommand("report", "Render a sweep report as a table");
  report_cmd->add_option("--sweep", report_sweep_path, "sweep.json input")->required();
  report_cmd->add_option("--format", report_format, "md or tsv")
      ->check(CLI::IsMember({"md", "tsv"}))
      ->capture_default_str();
  report_cmd->add_option("--out", report_out, "Output path (default: stdout)");
  report_cmd->add_option("--compare-arm", report_compare_arm,
                         "Render a baseline-vs-cell delta table for this arm");
  report_cmd->add_option("--compare-multiplier", report_compare_multiplier,
                         "Multiplier of the cell to compare");

  try {
    app.parse(argc, argv);

    if (validate_cmd->parsed()) {
      const ValidationReport report = validate_trace_file(validate_trace);
      if (!validate_report_path.empty()) {
        write_text(validate_report_path, report_to_json(report) + "\n");
      }
      std::cerr << "tokens " << report.total_tokens << ", instances "
                << report.instance_count << ", violations "
                << report.violations.size() << "\n";
      for (const auto& v : report.violations) {
        std::cerr << "line " << v.line << " instance \"" << v.instance_id
                  << "\" position " << v.position << ": " << v.message << "\n";
      }
      return report.ok() ? 0 : 1;
    }

    if (score_cmd->parsed()) {
      MarkerSet markers;
      CountStats stats;
      if (score_markers.empty()) {
        markers = trace_header(score_trace).markers;
        stats = count_stats_file(score_trace, score_threads);
      } else {
        markers = load_markers(score_markers);
        stats = count_stats_file(score_trace, markers, score_threads);
      }
      const auto [report, set] = rank_experts(stats, markers, 0, "all");
      write_text(score_out, report_to_json(report) + "\n");
      return 0;
    }

    if (identify_cmd->parsed()) {
      MarkerSet markers;
      CountStats stats;
      if (identify_markers.empty()) {
        markers = trace_header(identify_trace).markers;
        stats = count_stats_file(identify_trace, identify_threads);
      } else {
        markers = load_markers(identify_markers);
        stats = count_stats_file(identify_trace, markers, identify_threads);
      }
      const auto [report, set] =
          rank_experts(stats, markers, identify_l, identify_domain);
      if (!identify_out.empty()) {
        write_text(identify_out, expert_set_to_json(set) + "\n");
      }
      if (!identify_config_out.empty()) {
        const SteeringConfig config =
            from_ranked(set, identify_beta, identify_renormalize);
        write_text(identify_config_out, config_to_json(config) + "\n");
      }
      std::string listing;
      for (int i = 0; i < set.l; ++i) {
        const auto& e = report.experts[static_cast<std::size_t>(i)];
        char buf[40];
        std::snprintf(buf, sizeof buf, "%.12g", e.combined);
        listing += std::to_string(e.rank) + "\t(" + std::to_string(e.key.layer) +
                   "," + std::to_string(e.key.expert) + ")\t" + buf + "\n";
      }
      std::fwrite(listing.data(), 1, listing.size(), stdout);
      return 0;
    }

    if (simulate_cmd->parsed()) return run_simulate(sim_flags);
    if (steer_cmd->parsed()) return run_simulate(steer_flags);

    if (sweep_cmd->parsed()) {
      const TraceHeader header = trace_header(sweep_trace);
      const CountStats stats = count_stats_file(sweep_trace, sweep_threads);

      SweepOptions options;
      options.multipliers = parse_multipliers(sweep_multipliers);
      options.top_ls = parse_top_ls(sweep_top_ls);
      options.random_arm = sweep_random_arm;
      options.random_arm_seed = sweep_random_seed != 0
                                    ? sweep_random_seed
                                    : derive_seed(sweep_seed, 0x72616e64ULL);
      options.task_count = sweep_instances;
      options.max_tokens = sweep_max_tokens;
      options.renormalize = sweep_renormalize;

      int max_l = 1;
      for (int l : options.top_ls) max_l = std::max(max_l, l);
      const auto [expert_report, set] =
          rank_experts(stats, header.markers, max_l, "sweep");

      const std::string shape_text =
          std::to_string(header.shape.layers) + "," +
          std::to_string(header.shape.experts_per_layer) + "," +
          std::to_string(header.shape.experts_per_token);
      const ToyMoeModel model =
          build_model(sweep_seed, shape_text, sweep_hidden_dim, sweep_plants);

      const SweepReport report = sweep(model, options, expert_report);
      write_text(sweep_out, sweep_to_json(report) + "\n");
      std::cerr << "swept " << report.cells.size() << " cells over "
                << options.task_count << " tasks\n";
      return 0;
    }

    if (report_cmd->parsed()) {
      std::ifstream in(report_sweep_path, std::ios::binary);
      if (!in) throw io_error("cannot open " + report_sweep_path);
      std::string text((std::istreambuf_iterator<char>(in)),
                       std::istreambuf_iterator<char>());
      const SweepReport report = sweep_from_json(text);
      const ReportFormat format =
          report_format == "tsv" ? ReportFormat::kTsv : ReportFormat::kMarkdown;
      std::string rendered;
      if (!report_compare_arm.empty()) {
        const SweepCell* cell = nullptr;
        for (const auto& c : report.cells) {
          if (c.arm == report_compare_arm &&
              c.multiplier == report_compare_multiplier) {
            cell = &c;
          }
        }
        if (cell == nullptr) {
          throw validation_error("no sweep cell for arm \"" + report_compare_arm +
                                 "\" multiplier " +
                                 std::to_string(report_compare_multiplier));
        }
        rendered = compare_report(report.baseline, cell->metrics, "baseline",
                                  report_compare_arm, format);
      } else {
        rendered = render_sweep(report, format);
      }
      write_text(report_out, rendered);
      return 0;
    }
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {  // --help / --version
      return app.exit(e);
    }
    app.exit(e);
    return 2;
  } catch (const moesteer::error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
