#pragma once

#include <string>
#include <string_view>
#include <vector>

// Prompt templates compiled in from templates/*.txt.
namespace spfg::templates {

// Throws std::out_of_range for unknown names.
const std::string& get(std::string_view name);

std::vector<std::string> names();

}  // namespace spfg::templates
