#pragma once

#include <nlohmann/json.hpp>

#include <string>
#include <string_view>

namespace fprobe {

// Reads the TOML subset used by run and training configs into JSON:
// [table], [[array.of.tables]], dotted-free bare or quoted keys, strings,
// integers, floats, booleans, arrays and inline tables. Comments start with '#'.
// Dates and multi-line strings are not supported.
nlohmann::ordered_json parse_toml(std::string_view text, const std::string& source = "<config>");
nlohmann::ordered_json read_toml_file(const std::string& path);

}  // namespace fprobe
