#pragma once

#include <filesystem>
#include <memory>
#include <string>

#include "remul/policy.hpp"
#include "remul/tiny_lm.hpp"

namespace remul {

// Tensor bundles and policies persist as JSON: name, rows, cols and
// column-major values per tensor. Doubles round-trip exactly.
std::string bundle_to_json(const ParamBundle& bundle);
ParamBundle bundle_from_json(const std::string& text);  // throws ShapeMismatch on malformed shapes

std::string policy_to_json(const Policy& policy);
std::unique_ptr<Policy> policy_from_json(const std::string& text);

void write_text(const std::filesystem::path& path, const std::string& text);
std::string read_text(const std::filesystem::path& path);  // throws ConfigError when unreadable

}  // namespace remul
