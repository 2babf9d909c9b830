#include "moesteer/steering.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "moesteer/error.hpp"
#include "moesteer/npmi.hpp"
#include "steering_detail.hpp"
#include "text_util.hpp"

namespace moesteer {

SteeringConfig from_ranked(const CognitiveExpertSet& set, double beta,
                           bool renormalize) {
  if (!(beta > 0.0) || !std::isfinite(beta)) {
    throw validation_error("steering multiplier " + detail::format_double(beta) +
                           " must be a positive finite number");
  }
  SteeringConfig config;
  config.renormalize = renormalize;
  config.entries.reserve(set.experts.size());
  for (const ExpertKey& key : set.experts) {
    config.entries.push_back({key, beta});
  }
  config.provenance = "source_domain=" + set.source_domain +
                      " l=" + std::to_string(set.l);
  return config;
}

void check_config(const SteeringConfig& config) {
  for (std::size_t i = 0; i < config.entries.size(); ++i) {
    const auto& entry = config.entries[i];
    if (!(entry.multiplier > 0.0) || !std::isfinite(entry.multiplier)) {
      throw validation_error(
          "entry " + std::to_string(i) + " " + to_string(entry.key) +
          ": multiplier " + detail::format_double(entry.multiplier) +
          " must be > 0");
    }
    for (std::size_t j = 0; j < i; ++j) {
      if (config.entries[j].key == entry.key) {
        throw validation_error("duplicate steering entry for expert " +
                               to_string(entry.key));
      }
    }
  }
}

void validate_config(const SteeringConfig& config, const ModelShape& shape) {
  check_config(config);
  for (const auto& entry : config.entries) {
    if (!shape.contains(entry.key)) {
      throw validation_error("steering entry " + to_string(entry.key) +
                             " outside model shape (L=" +
                             std::to_string(shape.layers) + ", N=" +
                             std::to_string(shape.experts_per_layer) + ")");
    }
  }
}

std::string config_to_json(const SteeringConfig& config) {
  std::string out = "{\"renormalize\":";
  out += config.renormalize ? "true" : "false";
  out += ",\"entries\":[";
  for (std::size_t i = 0; i < config.entries.size(); ++i) {
    const auto& entry = config.entries[i];
    if (i > 0) out.push_back(',');
    out.push_back('[');
    detail::append_int(out, entry.key.layer);
    out.push_back(',');
    detail::append_int(out, entry.key.expert);
    out.push_back(',');
    detail::append_double(out, entry.multiplier);
    out.push_back(']');
  }
  out += "]";
  if (!config.provenance.empty()) {
    out += ",\"provenance\":";
    detail::append_json_string(out, config.provenance);
  }
  out += "}";
  return out;
}

namespace detail {

SteeringConfig config_from_json_obj(const nlohmann::json& j) {
  if (!j.is_object()) {
    throw parse_error("steering config must be a JSON object");
  }
  SteeringConfig config;
  config.renormalize = j.value("renormalize", false);
  config.provenance = j.value("provenance", std::string{});
  if (!j.contains("entries") || !j["entries"].is_array()) {
    throw parse_error("steering config missing \"entries\" array");
  }
  for (const auto& e : j["entries"]) {
    if (!e.is_array() || e.size() != 3 || !e[0].is_number_integer() ||
        !e[1].is_number_integer() || !e[2].is_number()) {
      throw parse_error(
          "steering entry must be [layer, expert, multiplier], got " + e.dump());
    }
    config.entries.push_back(
        {ExpertKey{e[0].get<int>(), e[1].get<int>()}, e[2].get<double>()});
  }
  check_config(config);
  return config;
}

}  // namespace detail

SteeringConfig config_from_json(std::string_view text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw parse_error(std::string("invalid steering config: ") + e.what());
  }
  return detail::config_from_json_obj(j);
}

SteeringConfig parse_config(std::istream& in) {
  std::ostringstream buf;
  buf << in.rdbuf();
  return config_from_json(buf.str());
}

SteeringConfig parse_config_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw io_error("cannot open " + path.string());
  return parse_config(in);
}

void serialize_config(const SteeringConfig& config, std::ostream& out) {
  out << config_to_json(config) << '\n';
  if (!out) throw io_error("failed writing steering config");
}

void serialize_config_file(const SteeringConfig& config,
                           const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw io_error("cannot open " + path.string() + " for writing");
  serialize_config(config, out);
}

}  // namespace moesteer
