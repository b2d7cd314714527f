#pragma once

#include <filesystem>

#include "fedflat/federation.hpp"

namespace fedflat {

/// Text header (format tag, round, n_models, manifest entries) followed by
/// the raw little-endian doubles of theta, momentum, and swa_theta in that
/// order.
void save_checkpoint(const std::filesystem::path& path, const ServerState& state);
ServerState load_checkpoint(const std::filesystem::path& path);

}  // namespace fedflat
