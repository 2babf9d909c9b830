#include "moesteer/sim.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>

#include "moesteer/error.hpp"
#include "moesteer/rng.hpp"

namespace moesteer {

namespace {

// Structured-decoder shaping constants. The think span ends when the ramped
// "</think>" logit wins, so span length and switch frequency respond to the
// hidden-state trajectory (and therefore to steering).
constexpr double kHiddenCarry = 0.5;
constexpr double kSwitchBoost = 0.4;
constexpr double kEndThinkGain = 0.75;
constexpr int kThinkBudgetBase = 8;
constexpr int kThinkBudgetSpread = 8;

constexpr double kEmbeddingScale = 1.0;
constexpr std::uint64_t kTaskStreamTag = 1000003;

double router_scale(int hidden_dim) { return std::sqrt(12.0 / hidden_dim); }
double map_scale(int hidden_dim) { return std::sqrt(3.0 / hidden_dim); }

void rms_normalize(std::vector<double>& v) {
  double ss = 0.0;
  for (double x : v) ss += x * x;
  const double rms = std::sqrt(ss / static_cast<double>(v.size()));
  const double inv = 1.0 / std::max(rms, 1e-12);
  for (double& x : v) x *= inv;
}

// rows x cols, row-major.
void matvec(const double* m, int rows, int cols, const double* x, double* out) {
  for (int r = 0; r < rows; ++r) {
    const double* row = m + static_cast<std::size_t>(r) * cols;
    double acc = 0.0;
    for (int c = 0; c < cols; ++c) acc += row[c] * x[c];
    out[r] = acc;
  }
}

}  // namespace

Vocabulary::Vocabulary() {
  tokens_ = {"<think>", "</think>", "Alternatively", "<eos>"};
  char buf[8];
  for (int i = 0; i < kAnswerCount; ++i) {
    std::snprintf(buf, sizeof buf, "A%d", i);
    tokens_.emplace_back(buf);
  }
  for (int i = 0; i < kContentCount; ++i) {
    std::snprintf(buf, sizeof buf, "w%02d", i);
    tokens_.emplace_back(buf);
  }
}

int Vocabulary::id(std::string_view token) const {
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    if (tokens_[i] == token) return static_cast<int>(i);
  }
  return -1;
}

const Vocabulary& vocabulary() {
  static const Vocabulary vocab;
  return vocab;
}

ToyMoeModel make_model(std::uint64_t seed, ModelShape shape, int hidden_dim) {
  if (!shape.valid()) throw validation_error("invalid model shape");
  if (hidden_dim < 1) throw validation_error("hidden dimension must be >= 1");

  ToyMoeModel model;
  model.shape = shape;
  model.hidden_dim = hidden_dim;
  model.seed = seed;

  const int d = hidden_dim;
  const int vocab_size = vocabulary().size();
  SplitMix64 rng(seed);

  // Parameter draw order: embedding, then per layer the router followed by
  // the expert maps, then the emitter, then the initial hidden state.
  model.embedding.resize(static_cast<std::size_t>(vocab_size) * d);
  for (double& w : model.embedding) {
    w = rng.next_double(-kEmbeddingScale, kEmbeddingScale);
  }

  const double rs = router_scale(d);
  const double ms = map_scale(d);
  model.router.resize(static_cast<std::size_t>(shape.layers));
  model.experts.resize(static_cast<std::size_t>(shape.layers));
  for (int layer = 0; layer < shape.layers; ++layer) {
    auto& r = model.router[static_cast<std::size_t>(layer)];
    r.resize(static_cast<std::size_t>(shape.experts_per_layer) * d);
    for (double& w : r) w = rng.next_double(-rs, rs);
    auto& e = model.experts[static_cast<std::size_t>(layer)];
    e.resize(static_cast<std::size_t>(shape.experts_per_layer) * d * d);
    for (double& w : e) w = rng.next_double(-ms, ms);
  }

  model.emitter.resize(static_cast<std::size_t>(vocab_size) * d);
  for (double& w : model.emitter) w = rng.next_double(-ms, ms);

  model.initial_hidden.resize(static_cast<std::size_t>(d));
  for (double& w : model.initial_hidden) w = rng.next_double(-1.0, 1.0);
  rms_normalize(model.initial_hidden);

  return model;
}

ToyMoeModel plant(ToyMoeModel model, const PlantSpec& spec) {
  if (!model.shape.contains(spec.target)) {
    throw validation_error("plant target " + to_string(spec.target) +
                           " outside model shape");
  }
  if (!(spec.bias >= 0.0) || !std::isfinite(spec.bias)) {
    throw validation_error("plant bias must be finite and >= 0");
  }
  if (spec.bias == 0.0) return model;
  model.plants.push_back(spec);
  return model;
}

GateDecision gate(std::span<const double> logits, int experts_per_token, int layer) {
  const int n = static_cast<int>(logits.size());
  if (experts_per_token < 1 || experts_per_token > n) {
    throw validation_error("experts-per-token " + std::to_string(experts_per_token) +
                           " out of range for " + std::to_string(n) + " experts");
  }
  double max_logit = -std::numeric_limits<double>::infinity();
  for (double v : logits) {
    if (!std::isfinite(v)) throw validation_error("non-finite router logit");
    max_logit = std::max(max_logit, v);
  }

  GateDecision decision;
  decision.layer = layer;
  decision.raw_probs.resize(static_cast<std::size_t>(n));
  double sum = 0.0;
  for (int i = 0; i < n; ++i) {
    // Exponent floor: unrenormalized steering can inflate hidden magnitudes
    // until logit gaps exceed 745, where exp underflows to exact 0 and a
    // selected weight would violate the positive-weight invariant.
    const double p =
        std::exp(std::max(logits[static_cast<std::size_t>(i)] - max_logit, -700.0));
    decision.raw_probs[static_cast<std::size_t>(i)] = p;
    sum += p;
  }
  for (double& p : decision.raw_probs) p /= sum;

  std::vector<int> order(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    const double pa = decision.raw_probs[static_cast<std::size_t>(a)];
    const double pb = decision.raw_probs[static_cast<std::size_t>(b)];
    if (pa != pb) return pa > pb;
    return a < b;
  });

  double selected_sum = 0.0;
  for (int i = 0; i < experts_per_token; ++i) {
    selected_sum += decision.raw_probs[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])];
  }
  decision.selected.reserve(static_cast<std::size_t>(experts_per_token));
  for (int i = 0; i < experts_per_token; ++i) {
    const int expert = order[static_cast<std::size_t>(i)];
    decision.selected.push_back(
        {ExpertKey{layer, expert},
         decision.raw_probs[static_cast<std::size_t>(expert)] / selected_sum});
  }
  return decision;
}

GateDecision apply_steering(GateDecision decision, const SteeringConfig& config) {
  bool changed = false;
  for (auto& sel : decision.selected) {
    const double* beta = config.multiplier_for(sel.key);
    if (beta != nullptr && *beta != 1.0) {
      sel.weight *= *beta;
      changed = true;
    }
  }
  if (changed && config.renormalize) {
    double sum = 0.0;
    for (const auto& sel : decision.selected) sum += sel.weight;
    for (auto& sel : decision.selected) sel.weight /= sum;
  }
  return decision;
}

namespace {

std::vector<double> combine_experts(const ToyMoeModel& model, int layer,
                                    std::span<const double> x,
                                    const std::vector<WeightedExpert>& selected) {
  const int d = model.hidden_dim;
  std::vector<double> out(static_cast<std::size_t>(d), 0.0);
  std::vector<double> expert_out(static_cast<std::size_t>(d));
  const auto& maps = model.experts[static_cast<std::size_t>(layer)];
  for (const auto& sel : selected) {
    const double* w =
        maps.data() + static_cast<std::size_t>(sel.key.expert) * d * d;
    matvec(w, d, d, x.data(), expert_out.data());
    for (int i = 0; i < d; ++i) out[static_cast<std::size_t>(i)] += sel.weight * expert_out[static_cast<std::size_t>(i)];
  }
  return out;
}

void router_logits(const ToyMoeModel& model, int layer, std::span<const double> x,
                   int token_id, std::vector<double>& logits) {
  logits.resize(static_cast<std::size_t>(model.shape.experts_per_layer));
  matvec(model.router[static_cast<std::size_t>(layer)].data(),
         model.shape.experts_per_layer, model.hidden_dim, x.data(), logits.data());
  for (const auto& p : model.plants) {
    if (p.target.layer != layer) continue;
    const bool marker_step =
        token_id >= 0 && vocabulary().token(token_id) == p.marker;
    logits[static_cast<std::size_t>(p.target.expert)] +=
        marker_step ? p.bias : -p.bias;
  }
}

// Processes one input token through the layer stack: mixes its embedding
// with the carried hidden state, routes and combines per layer, and appends
// the post-steering selections to `event` when given.
std::vector<double> step_token(const ToyMoeModel& model,
                               const std::vector<double>& hidden, int token_id,
                               const SteeringConfig& config, RoutingEvent* event) {
  const int d = model.hidden_dim;
  std::vector<double> x(static_cast<std::size_t>(d));
  const double* emb = model.embedding.data() + static_cast<std::size_t>(token_id) * d;
  for (int i = 0; i < d; ++i) {
    x[static_cast<std::size_t>(i)] = emb[i] + kHiddenCarry * hidden[static_cast<std::size_t>(i)];
  }
  rms_normalize(x);

  std::vector<double> logits;
  for (int layer = 0; layer < model.shape.layers; ++layer) {
    router_logits(model, layer, x, token_id, logits);
    GateDecision decision =
        apply_steering(gate(logits, model.shape.experts_per_token, layer), config);
    if (event != nullptr) {
      event->selections.insert(event->selections.end(), decision.selected.begin(),
                               decision.selected.end());
    }
    x = combine_experts(model, layer, x, decision.selected);
  }
  return x;
}

int argmax_over(const std::vector<double>& scores, std::span<const int> candidates) {
  int best = candidates[0];
  for (int id : candidates) {
    if (scores[static_cast<std::size_t>(id)] > scores[static_cast<std::size_t>(best)]) best = id;
  }
  return best;
}

}  // namespace

std::vector<double> layer_forward(const ToyMoeModel& model,
                                  std::span<const double> x, int layer,
                                  const SteeringConfig& config) {
  if (static_cast<int>(x.size()) != model.hidden_dim) {
    throw validation_error("hidden vector dimension " + std::to_string(x.size()) +
                           " does not match model dimension " +
                           std::to_string(model.hidden_dim));
  }
  std::vector<double> logits;
  router_logits(model, layer, x, /*token_id=*/-1, logits);
  GateDecision decision =
      apply_steering(gate(logits, model.shape.experts_per_token, layer), config);
  return combine_experts(model, layer, x, decision.selected);
}

GenerationResult generate(const ToyMoeModel& model,
                          std::span<const std::string> prompt,
                          const SteeringConfig& config, int max_tokens,
                          std::string_view instance_id, std::string_view domain) {
  if (max_tokens < 1) throw validation_error("max_tokens must be >= 1");
  const Vocabulary& vocab = vocabulary();
  const int d = model.hidden_dim;

  std::vector<int> prompt_ids;
  prompt_ids.reserve(prompt.size());
  int prompt_id_sum = 0;
  for (const auto& tok : prompt) {
    const int id = vocab.id(tok);
    if (id < 0) throw validation_error("unknown prompt token \"" + tok + "\"");
    prompt_ids.push_back(id);
    prompt_id_sum += id;
  }

  std::vector<double> hidden = model.initial_hidden;
  hidden.resize(static_cast<std::size_t>(d));
  for (int id : prompt_ids) {
    hidden = step_token(model, hidden, id, config, nullptr);
  }

  // Candidate sets for the structured decoder phases.
  std::vector<int> think_candidates;
  for (int i = 0; i < Vocabulary::kContentCount; ++i) {
    think_candidates.push_back(Vocabulary::content_id(i));
  }
  think_candidates.push_back(Vocabulary::kSwitch);
  think_candidates.push_back(Vocabulary::kEndThink);
  std::vector<int> answer_candidates;
  for (int i = 0; i < Vocabulary::kAnswerCount; ++i) {
    answer_candidates.push_back(Vocabulary::answer_id(i));
  }

  const int think_budget =
      kThinkBudgetBase + prompt_id_sum % kThinkBudgetSpread;

  enum class Phase { kPre, kThink, kAnswer, kFinal };
  Phase phase = Phase::kPre;
  int think_steps = 0;

  GenerationResult result;
  result.trace.id = std::string(instance_id);
  result.trace.domain = std::string(domain);

  std::vector<double> scores(static_cast<std::size_t>(vocab.size()));
  for (int pos = 0; pos < max_tokens; ++pos) {
    int token_id;
    switch (phase) {
      case Phase::kPre:
        token_id = Vocabulary::kThink;
        phase = Phase::kThink;
        break;
      case Phase::kThink: {
        matvec(model.emitter.data(), vocab.size(), d, hidden.data(), scores.data());
        scores[Vocabulary::kSwitch] += kSwitchBoost;
        scores[Vocabulary::kEndThink] +=
            kEndThinkGain * static_cast<double>(think_steps - think_budget);
        token_id = argmax_over(scores, think_candidates);
        if (token_id == Vocabulary::kEndThink) {
          phase = Phase::kAnswer;
        } else {
          ++think_steps;
        }
        break;
      }
      case Phase::kAnswer:
        matvec(model.emitter.data(), vocab.size(), d, hidden.data(), scores.data());
        token_id = argmax_over(scores, answer_candidates);
        phase = Phase::kFinal;
        break;
      case Phase::kFinal:
        token_id = Vocabulary::kEos;
        break;
    }

    RoutingEvent event;
    event.position = pos;
    event.token = vocab.token(token_id);
    hidden = step_token(model, hidden, token_id, config, &event);
    result.tokens.push_back(event.token);
    result.trace.events.push_back(std::move(event));
    if (token_id == Vocabulary::kEos) break;
  }
  return result;
}

SyntheticTask make_task(std::uint64_t seed, int index) {
  SplitMix64 rng(derive_seed(seed, kTaskStreamTag + static_cast<std::uint64_t>(index)));
  const Vocabulary& vocab = vocabulary();
  SyntheticTask task;
  const int len = 1 + static_cast<int>(rng.next_below(3));
  for (int i = 0; i < len; ++i) {
    task.prompt.push_back(vocab.token(
        Vocabulary::content_id(static_cast<int>(rng.next_below(Vocabulary::kContentCount)))));
  }
  task.answer_token =
      vocab.token(Vocabulary::answer_id(static_cast<int>(rng.next_below(Vocabulary::kAnswerCount))));
  return task;
}

TraceCorpus simulate_corpus(const ToyMoeModel& model, const SteeringConfig& config,
                            int instances, int max_tokens, std::string_view domain) {
  if (instances < 0) throw validation_error("instance count must be >= 0");
  TraceCorpus corpus;
  corpus.shape = model.shape;
  corpus.markers = MarkerSet::defaults();
  if (!config.empty()) corpus.steering = config;
  corpus.instances.reserve(static_cast<std::size_t>(instances));
  char id[16];
  for (int i = 0; i < instances; ++i) {
    std::snprintf(id, sizeof id, "i%06d", i);
    const SyntheticTask task = make_task(model.seed, i);
    GenerationResult gen = generate(model, task.prompt, config, max_tokens, id, domain);
    corpus.instances.push_back(std::move(gen.trace));
  }
  return corpus;
}

}  // namespace moesteer
