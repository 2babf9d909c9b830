#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "moesteer/expert_key.hpp"
#include "moesteer/steering.hpp"
#include "moesteer/trace.hpp"

namespace moesteer {

// Fixed toy vocabulary: the thinking markers, an end-of-sequence token,
// answer tokens and neutral content tokens.
class Vocabulary {
 public:
  static constexpr int kThink = 0;     // "<think>"
  static constexpr int kEndThink = 1;  // "</think>"
  static constexpr int kSwitch = 2;    // "Alternatively"
  static constexpr int kEos = 3;       // "<eos>"
  static constexpr int kAnswerBase = 4;
  static constexpr int kAnswerCount = 10;  // "A0".."A9"
  static constexpr int kContentBase = 14;
  static constexpr int kContentCount = 50;  // "w00".."w49"

  Vocabulary();

  int size() const { return static_cast<int>(tokens_.size()); }
  const std::string& token(int id) const { return tokens_[static_cast<std::size_t>(id)]; }
  int id(std::string_view token) const;

  static constexpr int answer_id(int j) { return kAnswerBase + j; }
  static constexpr int content_id(int j) { return kContentBase + j; }

 private:
  std::vector<std::string> tokens_;
};

const Vocabulary& vocabulary();

// One gating decision: softmax probabilities over all N experts of a layer
// and the top-O selection with weights renormalized over the selected set.
struct GateDecision {
  int layer = 0;
  std::vector<WeightedExpert> selected;  // descending probability, ties by expert id
  std::vector<double> raw_probs;         // full softmax, length N

  bool operator==(const GateDecision&) const = default;
};

// Ground-truth injection for recovery tests: the target expert's router
// logit is raised by `bias` at steps that process `marker` and lowered by
// `bias` everywhere else, so a large bias makes the co-activation exclusive.
struct PlantSpec {
  ExpertKey target;
  double bias = 0.0;  // >= 0; 0 leaves the model unchanged
  std::string marker;
};

// Deterministic toy MoE language model. All parameters are drawn from
// SplitMix64 streams seeded by `seed` (derivation order documented in the
// README), so generation is a pure function of (seed, prompt, steering).
struct ToyMoeModel {
  ModelShape shape{4, 16, 2};
  int hidden_dim = 32;
  std::uint64_t seed = 0;

  std::vector<double> embedding;              // vocab x d, row-major
  std::vector<std::vector<double>> router;    // per layer: N x d
  std::vector<std::vector<double>> experts;   // per layer: N of d x d
  std::vector<double> emitter;                // vocab x d
  std::vector<double> initial_hidden;         // d
  std::vector<PlantSpec> plants;
};

ToyMoeModel make_model(std::uint64_t seed, ModelShape shape = ModelShape{4, 16, 2},
                       int hidden_dim = 32);

// Returns a copy of the model with the plant installed. A zero bias is a
// no-op and returns the model unchanged.
ToyMoeModel plant(ToyMoeModel model, const PlantSpec& spec);

// Softmax over all logits, then the O most probable experts (ties broken
// toward the lower expert id) with their probabilities renormalized to sum
// to 1 over the selection.
GateDecision gate(std::span<const double> logits, int experts_per_token,
                  int layer = 0);

// Multiplies the weight of every selected expert present in the config by
// its multiplier; unselected entries have no effect. When config.renormalize
// is set and any weight changed, the weights are rescaled to sum to 1.
GateDecision apply_steering(GateDecision decision, const SteeringConfig& config);

// Weighted sum of the selected experts' outputs (post-steering weights).
std::vector<double> layer_forward(const ToyMoeModel& model,
                                  std::span<const double> x, int layer,
                                  const SteeringConfig& config);

struct GenerationResult {
  std::vector<std::string> tokens;  // emitted tokens, prompt excluded
  TraceInstance trace;              // one RoutingEvent per emitted token
};

// Greedy structured decoding: emits "<think>", a hidden-state-dependent
// think span that may contain "Alternatively" switches, "</think>", one
// answer token and "<eos>", truncating at max_tokens. Every emitted token
// logs the routing of the pass that processed it, with post-steering
// weights.
GenerationResult generate(const ToyMoeModel& model,
                          std::span<const std::string> prompt,
                          const SteeringConfig& config, int max_tokens,
                          std::string_view instance_id = "gen",
                          std::string_view domain = "synthetic");

// Synthetic task: a short content-token prompt plus the designated correct
// answer token. A generation passes when the answer appears after
// "</think>".
struct SyntheticTask {
  std::vector<std::string> prompt;
  std::string answer_token;
};

SyntheticTask make_task(std::uint64_t seed, int index);

// Generates `instances` task-seeded instances under one steering config.
// The corpus records the config in its header when steering is active.
TraceCorpus simulate_corpus(const ToyMoeModel& model, const SteeringConfig& config,
                            int instances, int max_tokens,
                            std::string_view domain = "synthetic");

}  // namespace moesteer
