#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <map>
#include <string>

#include "moesteer/error.hpp"
#include "moesteer/npmi.hpp"
#include "moesteer/rng.hpp"
#include "moesteer/sim.hpp"
#include "moesteer/trace.hpp"

using namespace moesteer;

namespace {

RoutingEvent event_with(std::int64_t position, std::string token,
                        std::vector<ExpertKey> keys) {
  RoutingEvent e;
  e.position = position;
  e.token = std::move(token);
  const double w = 1.0 / static_cast<double>(keys.size());
  for (const auto& k : keys) e.selections.push_back({k, w});
  return e;
}

// Corpus where expert (0,5) is selected at every "<think>" token (one per
// instance) and nowhere else.
TraceCorpus exclusive_corpus(int instances, int tokens_per_instance) {
  TraceCorpus corpus;
  corpus.shape = ModelShape{1, 8, 2};
  for (int i = 0; i < instances; ++i) {
    TraceInstance inst;
    inst.id = "i" + std::to_string(i);
    inst.domain = "synthetic";
    inst.events.push_back(
        event_with(0, "<think>", {ExpertKey{0, 5}, ExpertKey{0, 1}}));
    for (int p = 1; p < tokens_per_instance; ++p) {
      inst.events.push_back(
          event_with(p, "w" + std::to_string(p % 4),
                     {ExpertKey{0, p % 2}, ExpertKey{0, 2 + p % 3}}));
    }
    corpus.instances.push_back(std::move(inst));
  }
  return corpus;
}

// Brute-force reference counter, kept independent of CountStats: walks the
// corpus with plain maps.
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

// Direct evaluation of the PMI/nPMI definitions from probabilities, the
// oracle route: p(y|x) = k/M, p(y) = K/T, p(x,y) = k/T.
double npmi_from_probabilities(std::uint64_t k, std::uint64_t K, std::uint64_t M,
                               std::uint64_t T) {
  if (k == 0) return -1.0;
  const double p_y_given_x = static_cast<double>(k) / static_cast<double>(M);
  const double p_y = static_cast<double>(K) / static_cast<double>(T);
  const double p_xy = static_cast<double>(k) / static_cast<double>(T);
  const double pmi = std::log2(p_y_given_x / p_y);
  return pmi / -std::log2(p_xy);
}

}  // namespace

TEST_CASE("count_stats sees an exclusively planted expert") {
  const auto corpus = exclusive_corpus(10, 20);
  const auto stats = count_stats(corpus);
  const ExpertKey target{0, 5};
  CHECK(stats.co_activations(target, "<think>") == 10);
  CHECK(stats.activations(target) == 10);
  CHECK(stats.marker_occurrences("<think>") == 10);
  CHECK(stats.total_tokens() == 200);
}

TEST_CASE("count_stats of an empty corpus is all-zero") {
  TraceCorpus corpus;
  corpus.shape = ModelShape{2, 4, 2};
  const auto stats = count_stats(corpus);
  CHECK(stats.total_tokens() == 0);
  CHECK(stats.activations(ExpertKey{0, 0}) == 0);
  CHECK(stats.marker_occurrences("<think>") == 0);
}

TEST_CASE("count_stats matches an independent recount of a simulator corpus") {
  const auto model = make_model(7);
  const auto corpus = simulate_corpus(model, SteeringConfig{}, 20, 48);
  const auto stats = count_stats(corpus);
  const auto brute = brute_count(corpus);

  CHECK(stats.total_tokens() == brute.total);
  for (int flat = 0; flat < corpus.shape.total_experts(); ++flat) {
    const ExpertKey key = corpus.shape.key_at(flat);
    const auto it = brute.activations.find(key);
    CHECK(stats.activations(key) == (it == brute.activations.end() ? 0 : it->second));
    for (const auto& [token, coeff] : corpus.markers.entries) {
      const auto co_it = brute.co.find({key, token});
      CHECK(stats.co_activations(key, token) ==
            (co_it == brute.co.end() ? 0 : co_it->second));
    }
  }
  for (const auto& [token, coeff] : corpus.markers.entries) {
    const auto it = brute.marker.find(token);
    CHECK(stats.marker_occurrences(token) ==
          (it == brute.marker.end() ? 0 : it->second));
  }
  // Sum of K over experts = T * O * L.
  std::uint64_t k_sum = 0;
  for (int flat = 0; flat < corpus.shape.total_experts(); ++flat) {
    k_sum += stats.activations(corpus.shape.key_at(flat));
  }
  CHECK(k_sum == stats.total_tokens() *
                     static_cast<std::uint64_t>(corpus.shape.experts_per_token) *
                     static_cast<std::uint64_t>(corpus.shape.layers));
}

TEST_CASE("merge_stats identity and commutativity") {
  const auto corpus = exclusive_corpus(6, 10);
  const auto stats = count_stats(corpus);
  CountStats empty(corpus.shape, {"<think>", "</think>", "Alternatively"});
  CHECK(merge_stats(stats, empty) == stats);
  CHECK(merge_stats(empty, stats) == stats);

  auto a = exclusive_corpus(3, 10);
  TraceCorpus b = exclusive_corpus(6, 10);
  b.instances.erase(b.instances.begin(), b.instances.begin() + 3);
  const auto sa = count_stats(a);
  const auto sb = count_stats(b);
  CHECK(merge_stats(sa, sb) == merge_stats(sb, sa));
}

TEST_CASE("sharded counting folds back to the whole-corpus stats") {
  const auto corpus = exclusive_corpus(50, 12);
  const auto whole = count_stats(corpus);
  for (int shards : {2, 5}) {
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
    for (const auto& part : parts) {
      folded = merge_stats(folded, count_stats(part));
    }
    CHECK(folded == whole);
  }
}

TEST_CASE("merge_stats rejects shape mismatches") {
  CountStats a(ModelShape{1, 4, 2}, {"<think>"});
  CountStats b(ModelShape{2, 4, 2}, {"<think>"});
  CHECK_THROWS_AS(merge_stats(a, b), validation_error);
}

TEST_CASE("npmi boundary values") {
  // Complete co-occurrence: appears exclusively together.
  CHECK(npmi(10, 10, 10, 1000) == 1.0);
  // Never co-occur.
  CHECK(npmi(0, 50, 10, 1000) == -1.0);
  CHECK(npmi(0, 0, 0, 1000) == -1.0);
}

TEST_CASE("npmi matches the direct probability evaluation") {
  // Frozen from the probability route: p(y|x)=0.5, p(y)=0.05, p(x,y)=0.005.
  const double expected = 0.43458798967609363;
  CHECK(npmi(5, 50, 10, 1000) == doctest::Approx(expected).epsilon(1e-13));
  CHECK(std::abs(npmi(5, 50, 10, 1000) - npmi_from_probabilities(5, 50, 10, 1000)) <
        1e-12);
}

TEST_CASE("npmi degenerate marker-everywhere input is an error") {
  CHECK_THROWS_AS(npmi(100, 100, 100, 100), validation_error);
}

TEST_CASE("npmi rejects inconsistent counts") {
  CHECK_THROWS_AS(npmi(5, 4, 10, 100), validation_error);   // k > K
  CHECK_THROWS_AS(npmi(5, 10, 4, 100), validation_error);   // k > M
  CHECK_THROWS_AS(npmi(1, 200, 10, 100), validation_error); // K > T
  CHECK_THROWS_AS(npmi(0, 0, 0, 0), validation_error);      // T = 0
}

TEST_CASE("npmi stays in [-1, 1] and +1 only for exclusive co-occurrence") {
  SplitMix64 rng(99);
  for (int trial = 0; trial < 2000; ++trial) {
    const std::uint64_t T = 2 + rng.next_below(100000);
    const std::uint64_t M = 1 + rng.next_below(T);
    const std::uint64_t K = 1 + rng.next_below(T);
    const std::uint64_t k = rng.next_below(std::min(M, K) + 1);
    if (k == T) continue;
    const double v = npmi(k, K, M, T);
    CHECK(v >= -1.0);
    CHECK(v <= 1.0);
    if (v == 1.0) {
      CHECK(k == K);
      CHECK(k == M);
    }
  }
}

TEST_CASE("npmi is strictly increasing in k") {
  SplitMix64 rng(123);
  int checked = 0;
  while (checked < 1000) {
    const std::uint64_t T = 16 + rng.next_below(100000);
    const std::uint64_t M = 2 + rng.next_below(T / 2);
    const std::uint64_t K = 2 + rng.next_below(T / 2);
    const std::uint64_t cap = std::min(M, K);
    const std::uint64_t k = 1 + rng.next_below(cap - 1);
    if (k + 1 >= T) continue;
    CHECK(npmi(k + 1, K, M, T) > npmi(k, K, M, T));
    ++checked;
  }
}

TEST_CASE("oracle equivalence on random small corpora") {
  SplitMix64 rng(2024);
  for (int trial = 0; trial < 25; ++trial) {
    TraceCorpus corpus;
    corpus.shape = ModelShape{1, static_cast<int>(2 + rng.next_below(4)), 1};
    const int instances = 1 + static_cast<int>(rng.next_below(4));
    const int tokens = 1 + static_cast<int>(rng.next_below(50));
    for (int i = 0; i < instances; ++i) {
      TraceInstance inst;
      inst.id = "i" + std::to_string(i);
      for (int p = 0; p < tokens; ++p) {
        const std::uint64_t choice = rng.next_below(6);
        std::string token = choice == 0   ? "<think>"
                            : choice == 1 ? "</think>"
                            : choice == 2 ? "Alternatively"
                                          : "w" + std::to_string(choice);
        inst.events.push_back(event_with(
            p, std::move(token),
            {ExpertKey{0, static_cast<int>(rng.next_below(
                              static_cast<std::uint64_t>(corpus.shape.experts_per_layer)))}}));
      }
      corpus.instances.push_back(std::move(inst));
    }
    const auto stats = count_stats(corpus);
    const auto brute = brute_count(corpus);
    for (int e = 0; e < corpus.shape.experts_per_layer; ++e) {
      const ExpertKey key{0, e};
      const auto a_it = brute.activations.find(key);
      if (a_it == brute.activations.end()) continue;
      for (const auto& [token, coeff] : corpus.markers.entries) {
        const auto m_it = brute.marker.find(token);
        const std::uint64_t M = m_it == brute.marker.end() ? 0 : m_it->second;
        if (M == brute.total) continue;  // degenerate by construction
        const auto co_it = brute.co.find({key, token});
        const std::uint64_t k = co_it == brute.co.end() ? 0 : co_it->second;
        const double direct = npmi_from_probabilities(k, a_it->second, M, brute.total);
        const double engine =
            npmi(stats.co_activations(key, token), stats.activations(key),
                 stats.marker_occurrences(token), stats.total_tokens());
        CHECK(std::abs(direct - engine) < 1e-12);
      }
    }
  }
}

TEST_CASE("file counting matches in-memory counting, sequential and sharded") {
  const auto model = make_model(21);
  const auto corpus = simulate_corpus(model, SteeringConfig{}, 400, 48);
  const auto in_memory = count_stats(corpus);

  const auto path = std::filesystem::temp_directory_path() / "moesteer-count-test.jsonl";
  write_corpus_file(corpus, path);
  REQUIRE(std::filesystem::file_size(path) > (1u << 20));  // engages the sharded path

  const auto sequential = count_stats_file(path, 1);
  const auto sharded = count_stats_file(path, 3);
  CHECK(sequential == in_memory);
  CHECK(sharded == in_memory);

  // Marker override counts a different set over the same file.
  const MarkerSet think_only{{{"<think>", 1.0}}};
  const auto overridden = count_stats_file(path, think_only, 2);
  CHECK(overridden.marker_tokens() == std::vector<std::string>{"<think>"});
  CHECK(overridden.marker_occurrences("<think>") ==
        in_memory.marker_occurrences("<think>"));
  CHECK(overridden.total_tokens() == in_memory.total_tokens());

  std::filesystem::remove(path);
}

TEST_CASE("combined_score applies the signed coefficients") {
  const MarkerSet markers = MarkerSet::defaults();
  const std::map<std::string, double> values{
      {"<think>", 0.8}, {"</think>", 0.5}, {"Alternatively", 0.1}};
  CHECK(combined_score(values, markers) == doctest::Approx(0.2).epsilon(1e-12));

  const std::map<std::string, double> zeros{
      {"<think>", 0.0}, {"</think>", 0.0}, {"Alternatively", 0.0}};
  CHECK(combined_score(zeros, markers) == 0.0);

  const std::map<std::string, double> extreme{
      {"<think>", 1.0}, {"</think>", -1.0}, {"Alternatively", -1.0}};
  CHECK(combined_score(extreme, markers) == 3.0);

  const std::map<std::string, double> missing{{"<think>", 1.0}};
  CHECK_THROWS_AS(combined_score(missing, markers), validation_error);
}

TEST_CASE("rank_experts puts the exclusive expert first with npmi 1") {
  const auto corpus = exclusive_corpus(10, 20);
  const auto stats = count_stats(corpus);
  const auto [report, set] = rank_experts(stats, corpus.markers, 2, "synthetic");

  REQUIRE(!report.experts.empty());
  CHECK(report.experts[0].key == ExpertKey{0, 5});
  CHECK(report.experts[0].rank == 1);
  CHECK(report.experts[0].per_marker[0] == 1.0);  // "<think>"
  CHECK(report.experts[0].combined == 3.0);
  CHECK(set.experts.size() == 2);
  CHECK(set.experts[0] == ExpertKey{0, 5});
  CHECK(set.l == 2);
  CHECK(set.source_domain == "synthetic");

  // Ranks are 1..n and combined scores are non-increasing.
  for (std::size_t i = 0; i < report.experts.size(); ++i) {
    CHECK(report.experts[i].rank == static_cast<int>(i) + 1);
    if (i > 0) CHECK(report.experts[i - 1].combined >= report.experts[i].combined);
  }
}

TEST_CASE("ranking ties break toward the lower (layer, expert)") {
  TraceCorpus corpus;
  corpus.shape = ModelShape{1, 4, 2};
  TraceInstance inst;
  inst.id = "i0";
  // Experts 2 and 3 have identical counts everywhere.
  inst.events.push_back(event_with(0, "<think>", {ExpertKey{0, 2}, ExpertKey{0, 3}}));
  inst.events.push_back(event_with(1, "w", {ExpertKey{0, 2}, ExpertKey{0, 3}}));
  corpus.instances.push_back(inst);
  const auto stats = count_stats(corpus);
  const auto [report, set] = rank_experts(stats, corpus.markers, 2);
  CHECK(report.experts[0].key == ExpertKey{0, 2});
  CHECK(report.experts[1].key == ExpertKey{0, 3});
}

TEST_CASE("rank_experts rejects l beyond the scored experts, naming both") {
  const auto corpus = exclusive_corpus(2, 4);
  const auto stats = count_stats(corpus);
  try {
    rank_experts(stats, corpus.markers, 1000);
    FAIL("expected validation_error");
  } catch (const validation_error& e) {
    const std::string what = e.what();
    CHECK(what.find("1000") != std::string::npos);
    CHECK(what.find("experts") != std::string::npos);
  }
}

TEST_CASE("ranking is invariant to instance order") {
  auto corpus = exclusive_corpus(8, 15);
  auto shuffled = corpus;
  std::reverse(shuffled.instances.begin(), shuffled.instances.end());
  const auto [r1, s1] = rank_experts(count_stats(corpus), corpus.markers, 3);
  const auto [r2, s2] = rank_experts(count_stats(shuffled), corpus.markers, 3);
  CHECK(r1 == r2);
  CHECK(s1 == s2);
}

TEST_CASE("expert set fixtures parse and round-trip") {
  // Math-domain top-2 fixture.
  const std::string fixture =
      R"({"source_domain":"math","l":2,"experts":[[39,182],[29,126]]})";
  const auto set = expert_set_from_json(fixture);
  REQUIRE(set.experts.size() == 2);
  CHECK(set.experts[0] == ExpertKey{39, 182});
  CHECK(set.experts[1] == ExpertKey{29, 126});
  CHECK(set.l == 2);
  CHECK(expert_set_from_json(expert_set_to_json(set)) == set);

  CHECK_THROWS_AS(expert_set_from_json(R"({"l":3,"experts":[[1,2]]})"),
                  validation_error);
}

TEST_CASE("npmi report serializes rank-ordered with 12 significant digits") {
  const auto corpus = exclusive_corpus(4, 9);
  const auto stats = count_stats(corpus);
  const auto [report, set] = rank_experts(stats, corpus.markers, 1);
  const std::string json = report_to_json(report);
  CHECK(json.find("\"rank\":1") != std::string::npos);
  CHECK(json.find("\"layer\":0") != std::string::npos);
  // Rank 1 appears before rank 2 in the byte stream.
  CHECK(json.find("\"rank\":1") < json.find("\"rank\":2"));
}
