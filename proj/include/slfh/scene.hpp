#pragma once

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "slfh/error.hpp"
#include "slfh/io/png.hpp"
#include "slfh/lightfield.hpp"
#include "slfh/lightfield_io.hpp"

namespace slfh {

/// Binary occlusion mask in plane (texture) pixel coordinates.
struct MaskSpec {
  enum class Kind { full, rect, disc, bars } kind = Kind::full;
  double x0 = 0, y0 = 0, x1 = 0, y1 = 0;  // rect, half-open
  double cx = 0, cy = 0, radius = 0;      // disc
  double period = 8, duty = 0.5;          // vertical bars
  double phase = 0;

  bool covers(double x, double y) const {
    switch (kind) {
      case Kind::full:
        return true;
      case Kind::rect:
        return x >= x0 && x < x1 && y >= y0 && y < y1;
      case Kind::disc:
        return std::hypot(x - cx, y - cy) < radius;
      case Kind::bars: {
        const double t = (x - phase) / period;
        return t - std::floor(t) < duty;
      }
    }
    return false;
  }
};

/// Procedural texture or image texture, values in [0, 1] before color scaling.
class Texture {
 public:
  static Texture procedural(const std::string& pattern) {
    Texture t;
    const auto colon = pattern.find(':');
    t.kind_ = pattern.substr(0, colon);
    const std::string arg = colon == std::string::npos ? "" : pattern.substr(colon + 1);
    const auto number = [&](double fallback) {
      if (arg.empty()) return fallback;
      try {
        return std::stod(arg);
      } catch (const std::exception&) {
        throw ConfigError("pattern", "bad pattern argument in \"" + pattern + "\"");
      }
    };
    if (t.kind_ == "constant") {
      t.param_ = number(1.0);
      if (t.param_ < 0.0) throw ConfigError("pattern", "negative constant intensity");
    } else if (t.kind_ == "checker" || t.kind_ == "stripes" || t.kind_ == "rings") {
      t.param_ = number(16.0);
      if (!(t.param_ > 0.0)) throw ConfigError("pattern", "period must be positive");
    } else if (t.kind_ == "noise") {
      // noise:<seed>, 8-pixel lattice of uniform values, bilinearly interpolated
      t.param_ = 8.0;
      t.seed_ = static_cast<std::uint64_t>(number(1.0));
    } else {
      throw ConfigError("pattern", "unknown pattern \"" + pattern + "\"");
    }
    return t;
  }

  static Texture image(RealGrid img) {
    Texture t;
    t.kind_ = "image";
    t.image_ = std::move(img);
    return t;
  }

  /// Value at plane coordinate (x, y); nullopt outside a finite image texture.
  std::optional<double> sample(double x, double y, std::size_t rows, std::size_t cols) const {
    if (kind_ == "constant") return param_;
    if (kind_ == "checker") {
      const auto i = static_cast<long long>(std::floor(x / param_)) +
                     static_cast<long long>(std::floor(y / param_));
      return (i % 2 == 0) ? 1.0 : 0.0;
    }
    if (kind_ == "stripes") {
      const double t = x / param_;
      return t - std::floor(t) < 0.5 ? 1.0 : 0.0;
    }
    if (kind_ == "rings") {
      const double r = std::hypot(x - 0.5 * static_cast<double>(cols), y - 0.5 * static_cast<double>(rows));
      return 0.5 + 0.5 * std::cos(2.0 * std::numbers::pi * r / param_);
    }
    if (kind_ == "noise") return noise(x, y);
    // image texture centered on the view
    const double ix = x - 0.5 * static_cast<double>(cols) + 0.5 * static_cast<double>(image_.cols());
    const double iy = y - 0.5 * static_cast<double>(rows) + 0.5 * static_cast<double>(image_.rows());
    if (ix < 0.0 || iy < 0.0 || ix > static_cast<double>(image_.cols() - 1) ||
        iy > static_cast<double>(image_.rows() - 1))
      return std::nullopt;
    const auto x0 = static_cast<std::size_t>(ix), y0 = static_cast<std::size_t>(iy);
    const std::size_t x1 = std::min(x0 + 1, image_.cols() - 1), y1 = std::min(y0 + 1, image_.rows() - 1);
    const double fx = ix - static_cast<double>(x0), fy = iy - static_cast<double>(y0);
    return (1 - fy) * ((1 - fx) * image_(y0, x0) + fx * image_(y0, x1)) +
           fy * ((1 - fx) * image_(y1, x0) + fx * image_(y1, x1));
  }

 private:
  double lattice(long long i, long long j) const {
    // splitmix-style hash of (seed, i, j) to [0, 1)
    std::uint64_t h = seed_ * 0x9E3779B97F4A7C15ull ^ static_cast<std::uint64_t>(i) * 0xBF58476D1CE4E5B9ull ^
                      static_cast<std::uint64_t>(j) * 0x94D049BB133111EBull;
    h ^= h >> 30;
    h *= 0xBF58476D1CE4E5B9ull;
    h ^= h >> 27;
    h *= 0x94D049BB133111EBull;
    h ^= h >> 31;
    return static_cast<double>(h >> 11) * 0x1.0p-53;
  }

  double noise(double x, double y) const {
    const double gx = x / param_, gy = y / param_;
    const auto i = static_cast<long long>(std::floor(gx)), j = static_cast<long long>(std::floor(gy));
    const double fx = gx - static_cast<double>(i), fy = gy - static_cast<double>(j);
    return (1 - fy) * ((1 - fx) * lattice(i, j) + fx * lattice(i + 1, j)) +
           fy * ((1 - fx) * lattice(i, j + 1) + fx * lattice(i + 1, j + 1));
  }

  std::string kind_;
  double param_ = 0.0;
  std::uint64_t seed_ = 1;
  RealGrid image_;
};

struct PlaneSpec {
  double depth = 0.0;
  Texture texture = Texture::procedural("constant:1");
  std::vector<double> color;  // per-channel multiplier, empty = all ones
  MaskSpec mask;
};

struct PointSpec {
  double depth = 0.0;
  Vec2 position_px;
  double intensity = 1.0;
};

/// Fronto-parallel textured planes and point sources rendered into a view grid.
/// Depth is the focus distance at which a layer appears sharp; larger depths
/// are nearer the viewer and occlude smaller ones.
struct SceneSpec {
  std::size_t grid_rows = 5, grid_cols = 5;
  std::optional<Vec2> eyebox;  // default: smallest eyebox of the optics, square
  std::optional<std::size_t> rows, cols, channels;
  double background = 0.0;
  std::vector<PlaneSpec> planes;
  std::vector<PointSpec> points;
};

namespace detail {

inline void check_keys(const nlohmann::json& j, std::initializer_list<const char*> allowed,
                       const std::string& path) {
  for (const auto& [key, _] : j.items())
    if (std::none_of(allowed.begin(), allowed.end(), [&](const char* a) { return key == a; }))
      throw ConfigError(path + key, "unknown key");
}

inline MaskSpec parse_mask(const nlohmann::json& j, const std::string& path) {
  MaskSpec m;
  if (j.is_string() && j.get<std::string>() == "full") return m;
  check_keys(j, {"type", "rect", "center", "radius", "period", "duty", "phase"}, path);
  const auto type = j.at("type").get<std::string>();
  if (type == "full") {
    m.kind = MaskSpec::Kind::full;
  } else if (type == "rect") {
    m.kind = MaskSpec::Kind::rect;
    const auto r = j.at("rect").get<std::vector<double>>();
    if (r.size() != 4) throw ConfigError(path + "rect", "expected [x0, y0, x1, y1]");
    m.x0 = r[0], m.y0 = r[1], m.x1 = r[2], m.y1 = r[3];
  } else if (type == "disc") {
    m.kind = MaskSpec::Kind::disc;
    const auto c = j.at("center").get<std::vector<double>>();
    if (c.size() != 2) throw ConfigError(path + "center", "expected [x, y]");
    m.cx = c[0], m.cy = c[1];
    m.radius = j.at("radius").get<double>();
  } else if (type == "bars") {
    m.kind = MaskSpec::Kind::bars;
    m.period = j.value("period", 8.0);
    m.duty = j.value("duty", 0.5);
    m.phase = j.value("phase", 0.0);
    if (!(m.period > 0.0)) throw ConfigError(path + "period", "must be positive");
  } else {
    throw ConfigError(path + "type", "unknown mask type \"" + type + "\"");
  }
  return m;
}

}  // namespace detail

/// Parses a scene description. Relative texture paths resolve against base_dir.
inline SceneSpec parse_scene(const nlohmann::json& j, const std::filesystem::path& base_dir = {}) {
  SceneSpec s;
  try {
    detail::check_keys(j, {"grid", "eyebox_mm", "resolution", "channels", "background", "planes", "points"}, "");
    if (j.contains("grid")) {
      const auto g = j["grid"].get<std::vector<std::size_t>>();
      if (g.size() != 2 || g[0] == 0 || g[1] == 0) throw ConfigError("grid", "expected [V_y, V_x]");
      s.grid_rows = g[0], s.grid_cols = g[1];
    }
    if (j.contains("eyebox_mm")) {
      const auto e = j["eyebox_mm"].get<std::vector<double>>();
      if (e.size() != 2) throw ConfigError("eyebox_mm", "expected [h, w]");
      s.eyebox = Vec2{millimeters(e[1]), millimeters(e[0])};
    }
    if (j.contains("resolution")) {
      const auto r = j["resolution"].get<std::vector<std::size_t>>();
      if (r.size() != 2) throw ConfigError("resolution", "expected [rows, cols]");
      s.rows = r[0], s.cols = r[1];
    }
    if (j.contains("channels")) s.channels = j["channels"].get<std::size_t>();
    s.background = j.value("background", 0.0);
    if (s.background < 0.0) throw ConfigError("background", "negative intensity");
    if (j.contains("planes")) {
      for (std::size_t i = 0; i < j["planes"].size(); ++i) {
        const auto& pj = j["planes"][i];
        const std::string path = "planes[" + std::to_string(i) + "].";
        detail::check_keys(pj, {"depth_mm", "pattern", "texture", "gamma", "color", "mask"}, path);
        PlaneSpec p;
        p.depth = millimeters(pj.at("depth_mm").get<double>());
        if (pj.contains("texture")) {
          auto png = io::read_png((base_dir / pj["texture"].get<std::string>()).string());
          const Gamma gamma = pj.contains("gamma") ? Gamma::parse(pj["gamma"]) : Gamma{};
          RealGrid img(png.rows, png.cols);
          for (std::size_t k = 0; k < img.size(); ++k)
            img[k] = gamma.decode(png.samples[k * png.channels] / png.max_code());
          p.texture = Texture::image(std::move(img));
        } else {
          p.texture = Texture::procedural(pj.value("pattern", std::string("constant:1")));
        }
        if (pj.contains("color")) {
          p.color = pj["color"].get<std::vector<double>>();
          for (double c : p.color)
            if (c < 0.0) throw ConfigError(path + "color", "negative intensity");
        }
        if (pj.contains("mask")) p.mask = detail::parse_mask(pj["mask"], path + "mask.");
        s.planes.push_back(std::move(p));
      }
    }
    if (j.contains("points")) {
      for (std::size_t i = 0; i < j["points"].size(); ++i) {
        const auto& pj = j["points"][i];
        const std::string path = "points[" + std::to_string(i) + "].";
        detail::check_keys(pj, {"depth_mm", "position_px", "intensity"}, path);
        PointSpec p;
        p.depth = millimeters(pj.at("depth_mm").get<double>());
        const auto pos = pj.at("position_px").get<std::vector<double>>();
        if (pos.size() != 2) throw ConfigError(path + "position_px", "expected [x, y]");
        p.position_px = {pos[0], pos[1]};
        p.intensity = pj.value("intensity", 1.0);
        if (p.intensity < 0.0) throw ConfigError(path + "intensity", "negative intensity");
        s.points.push_back(p);
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("scene", e.what());
  }
  return s;
}

/// Renders every view of the scene. A layer at depth z appears in view k
/// displaced by -(z / f) * q_k, so refocusing to z aligns it.
inline LightField synthesize_test_scene(const SceneSpec& scene, const OpticalConfig& config) {
  const std::size_t rows = scene.rows.value_or(config.rows);
  const std::size_t cols = scene.cols.value_or(config.cols);
  const std::size_t channels = scene.channels.value_or(config.channels());
  const double w = min_eyebox_width(config);
  const Vec2 eyebox = scene.eyebox.value_or(Vec2{w, w});
  if (scene.background < 0.0) throw ConfigError("background", "negative intensity");
  for (const auto& pt : scene.points)
    if (pt.intensity < 0.0) throw ConfigError("points", "negative intensity");

  struct Layer {
    double depth;
    bool point;
    std::size_t index;
  };
  std::vector<Layer> layers;
  for (std::size_t i = 0; i < scene.planes.size(); ++i) layers.push_back({scene.planes[i].depth, false, i});
  for (std::size_t i = 0; i < scene.points.size(); ++i) layers.push_back({scene.points[i].depth, true, i});
  std::stable_sort(layers.begin(), layers.end(), [](const Layer& a, const Layer& b) {
    if (a.depth != b.depth) return a.depth < b.depth;
    return !a.point && b.point;
  });

  // View coordinates come from the same construction the LightField uses.
  const auto probe = LightField::make(scene.grid_rows, scene.grid_cols, eyebox,
                                      std::vector<std::vector<RealGrid>>(
                                          scene.grid_rows * scene.grid_cols,
                                          std::vector<RealGrid>(1, RealGrid(1, 1))));
  const double px_per_shear = 1.0 / (config.focal_length * config.detector_pitch);

  std::vector<std::vector<RealGrid>> views;
  views.reserve(probe.view_count());
  for (std::size_t k = 0; k < probe.view_count(); ++k) {
    const Vec2 q = probe.coord(k);
    std::vector<RealGrid> planes(channels, RealGrid(rows, cols, scene.background));
    for (const Layer& layer : layers) {
      const double ox = layer.depth * q.x * px_per_shear;
      const double oy = layer.depth * q.y * px_per_shear;
      if (layer.point) {
        const PointSpec& pt = scene.points[layer.index];
        const double x = pt.position_px.x - ox, y = pt.position_px.y - oy;
        const double fx0 = std::floor(x), fy0 = std::floor(y);
        const double fx = x - fx0, fy = y - fy0;
        const double weights[4] = {(1 - fx) * (1 - fy), fx * (1 - fy), (1 - fx) * fy, fx * fy};
        const long long xs[4] = {(long long)fx0, (long long)fx0 + 1, (long long)fx0, (long long)fx0 + 1};
        const long long ys[4] = {(long long)fy0, (long long)fy0, (long long)fy0 + 1, (long long)fy0 + 1};
        for (int n = 0; n < 4; ++n) {
          if (weights[n] == 0.0 || xs[n] < 0 || ys[n] < 0 || xs[n] >= (long long)cols || ys[n] >= (long long)rows)
            continue;
          for (auto& img : planes) img((std::size_t)ys[n], (std::size_t)xs[n]) += weights[n] * pt.intensity;
        }
        continue;
      }
      const PlaneSpec& plane = scene.planes[layer.index];
      for (std::size_t r = 0; r < rows; ++r) {
        const double ty = static_cast<double>(r) + oy;
        for (std::size_t c = 0; c < cols; ++c) {
          const double tx = static_cast<double>(c) + ox;
          if (!plane.mask.covers(tx, ty)) continue;
          const auto v = plane.texture.sample(tx, ty, rows, cols);
          if (!v) continue;
          for (std::size_t ch = 0; ch < channels; ++ch) {
            const double color = plane.color.empty() ? 1.0 : plane.color.at(std::min(ch, plane.color.size() - 1));
            planes[ch](r, c) = *v * color;
          }
        }
      }
    }
    views.push_back(std::move(planes));
  }
  return LightField::make(scene.grid_rows, scene.grid_cols, eyebox, std::move(views));
}

}  // namespace slfh
