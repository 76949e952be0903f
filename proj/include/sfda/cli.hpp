#pragma once

#include <iosfwd>
#include <span>
#include <string>
#include <string_view>

#include <json.hpp>

namespace sfda::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitData = 3;
inline constexpr int kExitVerification = 4;

// Fully populated configuration tree; every accepted key appears here.
nlohmann::json default_config();

// Overlays overlay onto base. Keys absent from base throw ConfigError naming
// the dotted path; objects merge recursively, everything else is replaced.
nlohmann::json merge_config(const nlohmann::json& base, const nlohmann::json& overlay);

// Sets a dotted key ("adapt.epochs") from text. The text is read as JSON when
// it parses, otherwise as a string.
void apply_override(nlohmann::json& tree, std::string_view dotted_key, std::string_view text);

// Entry point behind the sfda binary. args excludes the program name.
// Returns the process exit code.
int run(std::span<const std::string> args, std::ostream& out, std::ostream& err);

}  // namespace sfda::cli
