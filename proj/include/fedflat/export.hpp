#pragma once

#include <filesystem>
#include <span>

#include <nlohmann/json.hpp>

#include "fedflat/analysis.hpp"

namespace fedflat {

/// Structured exports read by the plotting tools. Every document has the
/// shape {kind, meta{N, extent, seed, metric, ...}, values: row-major}.
nlohmann::json export_spectrum(const SpectrumReport& report, const PowerIterationOptions& opts,
                               std::size_t batch_size);
nlohmann::json export_plane(const PlaneGrid& grid);
nlohmann::json export_surface(const SurfaceGrid& grid);
nlohmann::json export_feature_norms(std::span<const FeatureNorm> norms);
nlohmann::json export_client_sharpness(std::span<const ClientSharpness> values,
                                       std::size_t round);

/// Throws FormatError naming the first missing or mistyped field.
void check_export_schema(const nlohmann::json& doc);

void write_json(const std::filesystem::path& path, const nlohmann::json& doc);
nlohmann::json read_json(const std::filesystem::path& path);

}  // namespace fedflat
