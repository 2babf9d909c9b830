#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "moesteer/expert_key.hpp"

namespace moesteer {

struct CognitiveExpertSet;

struct SteeringEntry {
  ExpertKey key;
  double multiplier = 1.0;  // beta, > 0

  bool operator==(const SteeringEntry&) const = default;
};

// Gate-weight reinforcement plan: which experts to boost, by how much, and
// whether the post-boost weights are rescaled to sum to 1.
struct SteeringConfig {
  std::vector<SteeringEntry> entries;
  bool renormalize = false;
  std::string provenance;

  bool operator==(const SteeringConfig&) const = default;

  bool empty() const { return entries.empty(); }

  // Multiplier for a key, or nullptr when the key is not steered.
  // Entry lists are small; a linear scan beats a map on the hot path.
  const double* multiplier_for(const ExpertKey& k) const {
    for (const auto& e : entries) {
      if (e.key == k) return &e.multiplier;
    }
    return nullptr;
  }
};

// One entry per expert of the ranked set, all with multiplier beta.
// Provenance records the set's source domain and l.
SteeringConfig from_ranked(const CognitiveExpertSet& set, double beta,
                           bool renormalize);

// Rejects duplicate ExpertKeys and non-positive multipliers.
void check_config(const SteeringConfig& config);

// Rejects entries whose key is outside the shape.
void validate_config(const SteeringConfig& config, const ModelShape& shape);

// JSON object form, e.g.
//   {"renormalize":false,"entries":[[39,182,64],[29,126,64]],"provenance":"..."}
// The same object is embedded in trace headers of steered runs.
std::string config_to_json(const SteeringConfig& config);
SteeringConfig config_from_json(std::string_view text);

SteeringConfig parse_config(std::istream& in);
SteeringConfig parse_config_file(const std::filesystem::path& path);
void serialize_config(const SteeringConfig& config, std::ostream& out);
void serialize_config_file(const SteeringConfig& config,
                           const std::filesystem::path& path);

}  // namespace moesteer
