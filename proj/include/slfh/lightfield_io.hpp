#pragma once

#include <nlohmann/json.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <variant>

#include "slfh/error.hpp"
#include "slfh/io/png.hpp"
#include "slfh/lightfield.hpp"

namespace slfh {

/// Transfer curve applied to stored 8/16-bit codes.
struct Gamma {
  enum class Kind { srgb, linear, power } kind = Kind::srgb;
  double exponent = 1.0;

  static Gamma parse(const nlohmann::json& j) {
    if (j.is_number()) {
      if (!(j.get<double>() > 0.0)) throw MetadataError("gamma exponent must be positive");
      return {Kind::power, j.get<double>()};
    }
    if (!j.is_string()) throw MetadataError("gamma must be \"srgb\", \"linear\" or a number");
    const auto s = j.get<std::string>();
    if (s == "srgb") return {Kind::srgb, 1.0};
    if (s == "linear") return {Kind::linear, 1.0};
    throw MetadataError("unknown gamma \"" + s + "\"");
  }

  double decode(double encoded) const {
    switch (kind) {
      case Kind::srgb:
        return encoded <= 0.04045 ? encoded / 12.92 : std::pow((encoded + 0.055) / 1.055, 2.4);
      case Kind::linear:
        return encoded;
      case Kind::power:
        return std::pow(encoded, exponent);
    }
    return encoded;
  }
};

inline std::string expand_view_pattern(const std::string& pattern, std::size_t row,
                                       std::size_t col) {
  std::string out = pattern;
  const auto replace = [&](const std::string& key, std::size_t value) {
    for (auto pos = out.find(key); pos != std::string::npos; pos = out.find(key))
      out.replace(pos, key.size(), std::to_string(value));
  };
  replace("{row}", row);
  replace("{col}", col);
  return out;
}

/// Loads a light-field directory: meta.json plus one PNG per view.
///
/// meta.json keys: grid [V_y, V_x], eyebox_mm [h, w], image_pattern
/// (default "view_{row}_{col}.png") and gamma ("srgb" | "linear" | exponent).
inline LightField load_lightfield(const std::filesystem::path& dir) {
  const auto meta_path = dir / "meta.json";
  std::ifstream in(meta_path);
  if (!in) throw MetadataError("missing metadata file " + meta_path.string());
  nlohmann::json meta;
  try {
    in >> meta;
  } catch (const nlohmann::json::exception& e) {
    throw MetadataError("malformed metadata " + meta_path.string() + ": " + e.what());
  }
  if (!meta.is_object()) throw MetadataError("metadata must be a JSON object");
  for (const auto& [key, _] : meta.items())
    if (key != "grid" && key != "eyebox_mm" && key != "image_pattern" && key != "gamma")
      throw MetadataError("unknown metadata key \"" + key + "\"");

  std::size_t grid_rows = 0, grid_cols = 0;
  Vec2 eyebox;
  std::string pattern = "view_{row}_{col}.png";
  Gamma gamma;
  try {
    const auto& grid = meta.at("grid");
    if (!grid.is_array() || grid.size() != 2) throw MetadataError("grid must be [V_y, V_x]");
    grid_rows = grid[0].get<std::size_t>();
    grid_cols = grid[1].get<std::size_t>();
    const auto& eb = meta.at("eyebox_mm");
    if (!eb.is_array() || eb.size() != 2) throw MetadataError("eyebox_mm must be [h, w]");
    eyebox = {millimeters(eb[1].get<double>()), millimeters(eb[0].get<double>())};
    if (meta.contains("image_pattern")) pattern = meta["image_pattern"].get<std::string>();
    if (meta.contains("gamma")) gamma = Gamma::parse(meta["gamma"]);
  } catch (const nlohmann::json::exception& e) {
    throw MetadataError(std::string("malformed metadata: ") + e.what());
  }
  if (grid_rows == 0 || grid_cols == 0) throw MetadataError("grid dimensions must be positive");

  std::vector<std::vector<RealGrid>> views;
  views.reserve(grid_rows * grid_cols);
  std::size_t rows = 0, cols = 0, channels = 0;
  for (std::size_t r = 0; r < grid_rows; ++r) {
    for (std::size_t c = 0; c < grid_cols; ++c) {
      const auto path = dir / expand_view_pattern(pattern, r, c);
      if (!std::filesystem::exists(path)) throw MissingViewError(r, c, path.string());
      const auto png = io::read_png(path.string());
      if (views.empty()) {
        rows = png.rows;
        cols = png.cols;
        channels = png.channels;
      } else if (png.rows != rows || png.cols != cols || png.channels != channels) {
        throw InconsistentResolutionError("view (" + std::to_string(r) + ", " + std::to_string(c) +
                                          ") is " + std::to_string(png.rows) + "x" +
                                          std::to_string(png.cols) + "x" +
                                          std::to_string(png.channels) + ", expected " +
                                          std::to_string(rows) + "x" + std::to_string(cols) + "x" +
                                          std::to_string(channels));
      }
      std::vector<RealGrid> planes(channels, RealGrid(rows, cols));
      const double scale = 1.0 / png.max_code();
      for (std::size_t i = 0; i < rows * cols; ++i)
        for (std::size_t ch = 0; ch < channels; ++ch)
          planes[ch][i] = gamma.decode(png.samples[i * channels + ch] * scale);
      views.push_back(std::move(planes));
    }
  }
  return LightField::make(grid_rows, grid_cols, eyebox, std::move(views));
}

/// Writes a light field as 16-bit linear PNG views plus meta.json.
inline void save_lightfield(const LightField& lf, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  double peak = 0.0;
  for (std::size_t k = 0; k < lf.view_count(); ++k)
    for (std::size_t c = 0; c < lf.channels(); ++c)
      for (double v : lf.image(k, c)) peak = std::max(peak, v);
  const double scale = peak > 0.0 ? 65535.0 / peak : 0.0;
  const std::size_t channels = lf.channels() == 1 ? 1 : 3;
  if (lf.channels() != 1 && lf.channels() != 3) throw LightFieldError("only 1- or 3-channel light fields can be saved");
  for (std::size_t r = 0; r < lf.grid_rows(); ++r)
    for (std::size_t c = 0; c < lf.grid_cols(); ++c) {
      const std::size_t k = lf.view_index(r, c);
      std::vector<std::uint16_t> samples(lf.rows() * lf.cols() * channels);
      for (std::size_t i = 0; i < lf.rows() * lf.cols(); ++i)
        for (std::size_t ch = 0; ch < channels; ++ch)
          samples[i * channels + ch] = static_cast<std::uint16_t>(std::lround(lf.image(k, ch)[i] * scale));
      io::write_png16((dir / expand_view_pattern("view_{row}_{col}.png", r, c)).string(), lf.rows(), lf.cols(),
                      channels, samples);
    }
  const nlohmann::json meta = {{"grid", {lf.grid_rows(), lf.grid_cols()}},
                               {"eyebox_mm", {to_millimeters(lf.eyebox().y), to_millimeters(lf.eyebox().x)}},
                               {"gamma", "linear"}};
  std::ofstream(dir / "meta.json") << meta.dump(2) << '\n';
}

}  // namespace slfh
