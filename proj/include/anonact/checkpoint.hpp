#pragma once

#include <string>

#include "anonact/nn.hpp"

namespace anonact {

// Named-parameter checkpoint: JSON header (names, shapes, offsets, config
// echo) followed by raw little-endian doubles. Loading is exact.
void save_checkpoint(const std::string& path, const ParamList& params, const std::string& config_echo);

// Copies stored values into matching params; throws on missing name or
// shape mismatch. Returns the stored config echo.
std::string load_checkpoint(const std::string& path, ParamList& params);

std::string checkpoint_config_echo(const std::string& path);

}  // namespace anonact
