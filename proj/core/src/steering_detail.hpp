#pragma once

// Internal bridge so the trace header parser can reuse the steering-config
// JSON object reader without nlohmann types appearing in public headers.

#include <json.hpp>

#include "moesteer/steering.hpp"

namespace moesteer::detail {

SteeringConfig config_from_json_obj(const nlohmann::json& j);

}  // namespace moesteer::detail
