#include "fedflat/export.hpp"

#include <fstream>

#include "fedflat/errors.hpp"

namespace fedflat {

using nlohmann::json;

json export_spectrum(const SpectrumReport& report, const PowerIterationOptions& opts,
                     std::size_t batch_size) {
  json doc{{"kind", "spectrum"},
           {"meta",
            {{"N", report.eigenvalues.size()},
             {"extent", nullptr},
             {"seed", opts.seed},
             {"metric", "hessian_eigenvalue"},
             {"max_iters", opts.max_iters},
             {"tol", opts.tol},
             {"batch_size", batch_size}}},
           {"values", report.eigenvalues},
           {"iterations", report.iterations},
           {"residuals", report.residuals},
           {"converged", report.converged}};
  if (report.eigenvalues.size() >= 5) {
    const auto ratio = sharpness_ratio(report);
    doc["sharpness_ratio"] = ratio ? json(*ratio) : json(nullptr);
  }
  return doc;
}

json export_plane(const PlaneGrid& grid) {
  json anchors = json::array();
  for (const auto& a : grid.anchors) anchors.push_back({a[0], a[1]});
  return json{{"kind", "plane"},
              {"meta",
               {{"N", grid.resolution},
                {"extent", {grid.extent.x_min, grid.extent.x_max, grid.extent.y_min, grid.extent.y_max}},
                {"seed", nullptr},
                {"metric", grid.metric},
                {"margin", grid.margin}}},
              {"xs", grid.xs},
              {"ys", grid.ys},
              {"anchors", anchors},
              {"values", grid.values}};
}

json export_surface(const SurfaceGrid& grid) {
  return json{{"kind", "surface"},
              {"meta",
               {{"N", grid.resolution},
                {"extent", {-1.0, 1.0, -1.0, 1.0}},
                {"seed", grid.seed},
                {"metric", grid.metric}}},
              {"coords", grid.coords},
              {"center_value", grid.center_value},
              {"values", grid.values}};
}

json export_feature_norms(std::span<const FeatureNorm> norms) {
  json ids = json::array(), values = json::array();
  for (const auto& n : norms) {
    ids.push_back(n.client_id);
    values.push_back(n.mean_norm);
  }
  return json{{"kind", "feature_norms"},
              {"meta", {{"N", norms.size()}, {"extent", nullptr}, {"seed", nullptr}, {"metric", "logit_l2_norm"}}},
              {"client_ids", ids},
              {"values", values}};
}

json export_client_sharpness(std::span<const ClientSharpness> values, std::size_t round) {
  json ids = json::array(), lambdas = json::array();
  for (const auto& v : values) {
    ids.push_back(v.client_id);
    lambdas.push_back(v.lambda_max);
  }
  return json{{"kind", "client_sharpness"},
              {"meta",
               {{"N", values.size()}, {"extent", nullptr}, {"seed", nullptr}, {"metric", "lambda_max"},
                {"round", round}}},
              {"client_ids", ids},
              {"values", lambdas}};
}

void check_export_schema(const json& doc) {
  auto require = [](const json& j, const char* field, auto&& type_ok, const char* type) {
    if (!j.is_object() || !j.contains(field)) {
      throw FormatError(std::string("export: missing field '") + field + "'", 0);
    }
    if (!type_ok(j.at(field))) {
      throw FormatError(std::string("export: field '") + field + "' must be " + type, 0);
    }
  };
  auto is_string = [](const json& j) { return j.is_string(); };
  auto is_object = [](const json& j) { return j.is_object(); };
  auto is_array = [](const json& j) { return j.is_array(); };
  auto any = [](const json&) { return true; };
  require(doc, "kind", is_string, "a string");
  require(doc, "meta", is_object, "an object");
  require(doc, "values", is_array, "an array");
  const json& meta = doc.at("meta");
  require(meta, "N", any, "present");
  require(meta, "extent", any, "present");
  require(meta, "seed", any, "present");
  require(meta, "metric", is_string, "a string");
  const std::string kind = doc.at("kind");
  if (kind == "plane") {
    require(doc, "xs", is_array, "an array");
    require(doc, "ys", is_array, "an array");
    require(doc, "anchors", is_array, "an array");
  } else if (kind == "surface") {
    require(doc, "coords", is_array, "an array");
  } else if (kind == "feature_norms" || kind == "client_sharpness") {
    require(doc, "client_ids", is_array, "an array");
  } else if (kind != "spectrum") {
    throw FormatError("export: unknown kind '" + kind + "'", 0);
  }
}

void write_json(const std::filesystem::path& path, const json& doc) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << doc.dump(2) << '\n';
}

json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path.string(), 0);
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw FormatError("invalid JSON in " + path.string() + ": " + e.what(), e.byte);
  }
}

}  // namespace fedflat
