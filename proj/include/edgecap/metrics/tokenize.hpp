#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace edgecap::metrics {

// Lowercase, drop ASCII punctuation, split on whitespace.
std::vector<std::string> tokenize(std::string_view text);

}  // namespace edgecap::metrics
