#pragma once

#include <compare>
#include <cstdint>
#include <string>

namespace moesteer {

// Identifies one expert across the model as a (layer, expert) pair.
// The default ordering is lexicographic by (layer, expert); it is the
// tie-break used everywhere a deterministic order is required.
struct ExpertKey {
  int layer = 0;
  int expert = 0;

  auto operator<=>(const ExpertKey&) const = default;
};

inline std::string to_string(const ExpertKey& k) {
  return "(" + std::to_string(k.layer) + ", " + std::to_string(k.expert) + ")";
}

// Static geometry of a gated MoE model: L layers of N experts each, with
// O experts selected per token per layer.
struct ModelShape {
  int layers = 1;            // L
  int experts_per_layer = 1; // N
  int experts_per_token = 1; // O

  bool operator==(const ModelShape&) const = default;

  bool valid() const {
    return layers >= 1 && experts_per_token >= 1 &&
           experts_per_token <= experts_per_layer;
  }

  bool contains(const ExpertKey& k) const {
    return k.layer >= 0 && k.layer < layers && k.expert >= 0 &&
           k.expert < experts_per_layer;
  }

  int total_experts() const { return layers * experts_per_layer; }

  // Dense index of a key; valid only when contains(k).
  int flat_index(const ExpertKey& k) const {
    return k.layer * experts_per_layer + k.expert;
  }

  ExpertKey key_at(int flat) const {
    return ExpertKey{flat / experts_per_layer, flat % experts_per_layer};
  }
};

// One selected expert with its gate weight.
struct WeightedExpert {
  ExpertKey key;
  double weight = 0.0;

  bool operator==(const WeightedExpert&) const = default;
};

}  // namespace moesteer
