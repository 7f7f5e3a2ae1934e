#pragma once

#include <string>

namespace edgecap::metrics {

// Porter's 1980 suffix-stripping algorithm, as originally published (no
// later extensions and no short-word exemption). Expects lowercase ASCII.
std::string porter_stem(const std::string& word);

}  // namespace edgecap::metrics
