#pragma once

#include <json.hpp>

#include "sfda/synth.hpp"

namespace sfda {

nlohmann::json domain_spec_json(const DomainSpec& spec);

// Overlays the keys of j onto defaults. Unknown keys and wrongly typed values
// throw ConfigError naming the key under context.
DomainSpec parse_domain_spec(const nlohmann::json& j, const DomainSpec& defaults, const std::string& context);

}  // namespace sfda
