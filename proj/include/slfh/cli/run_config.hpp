#pragma once

#include <nlohmann/json.hpp>

#include <filesystem>
#include <cmath>
#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "slfh/error.hpp"
#include "slfh/farfield.hpp"
#include "slfh/lightfield_io.hpp"
#include "slfh/optimizer.hpp"
#include "slfh/scene.hpp"
#include "slfh/supervision.hpp"

namespace slfh::cli {

using nlohmann::json;
namespace fs = std::filesystem;

enum class Mode { nearfield, farfield };

struct EvalSettings {
  std::size_t n_random = 32;
  std::size_t n_structured = 16;
  std::optional<double> fixed_z;
  std::optional<double> fixed_d;
  std::size_t epipolar_positions = 31;
  std::optional<double> epipolar_d;  // default eyebox / 8
  std::vector<double> epipolar_z;    // default {z_min, z_max}
};

/// Everything a run needs, in SI units, with defaults materialized.
struct RunConfig {
  OpticalConfig optics;
  std::optional<Preset> preset;
  SupervisionPolicy policy;
  OptimizerConfig optimizer;
  Mode mode = Mode::nearfield;
  std::size_t tile = 256;
  std::optional<std::array<std::size_t, 2>> hologram_resolution;
  std::optional<Window> retina_window;
  std::optional<fs::path> lightfield;
  std::optional<json> scene;
  fs::path scene_dir;
  fs::path output_dir = "runs";
  std::uint64_t train_seed = 0;
  std::uint64_t eval_seed = 1;
  EvalSettings eval;

  FarFieldConfig farfield() const {
    FarFieldConfig f;
    f.optics = optics;
    if (hologram_resolution) {
      f.optics.rows = (*hologram_resolution)[0];
      f.optics.cols = (*hologram_resolution)[1];
    }
    f.tile = tile;
    f.retina_window = retina_window;
    return f;
  }

  double eyebox() const { return mode == Mode::farfield ? farfield().eyebox() : min_eyebox_width(optics); }

  /// Geometry the light field is rendered in: the SLM for near field, the retina tile for far field.
  OpticalConfig target_optics() const { return mode == Mode::farfield ? farfield().target_config(0) : optics; }
};

namespace detail {

/// Strict view of one JSON object: every key must be consumed or it is rejected.
class Block {
 public:
  Block(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j.is_object()) throw ConfigError(path_.empty() ? "<root>" : path_, "expected an object");
  }

  std::string key_path(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  bool has(const std::string& key) {
    seen_.insert(key);
    return j_.contains(key);
  }

  const json& raw(const std::string& key) {
    seen_.insert(key);
    return j_.at(key);
  }

  template <class T>
  std::optional<T> get(const std::string& key) {
    if (!has(key)) return std::nullopt;
    try {
      return j_.at(key).get<T>();
    } catch (const json::exception&) {
      throw ConfigError(key_path(key), "has the wrong type (" + std::string(j_.at(key).type_name()) + ")");
    }
  }

  template <class T>
  void read(const std::string& key, T& out) {
    if (auto v = get<T>(key)) out = *v;
  }

  double positive(const std::string& key, double fallback) {
    const double v = get<double>(key).value_or(fallback);
    if (!(v > 0.0)) throw ConfigError(key_path(key), "must be positive");
    return v;
  }

  Block child(const std::string& key) {
    seen_.insert(key);
    return Block(j_.at(key), key_path(key));
  }

  void finish() const {
    for (const auto& [key, _] : j_.items())
      if (!seen_.count(key)) throw ConfigError(key_path(key), "unknown key");
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

inline const json& empty_object() {
  static const json empty = json::object();
  return empty;
}

inline std::optional<double> mm(std::optional<double> v) {
  if (v) return millimeters(*v);
  return std::nullopt;
}

template <class Fn>
void prefixed(const std::string& prefix, Fn&& fn) {
  try {
    fn();
  } catch (const ConfigError& e) {
    if (e.key().rfind(prefix, 0) == 0) throw;
    const std::string message = e.what();
    const auto colon = message.find(": ");
    throw ConfigError(prefix + e.key(), e.key().empty() || colon == std::string::npos ? message : message.substr(colon + 2));
  }
}

inline void parse_optics(Block b, OpticalConfig& o) {
  if (auto w = b.get<std::vector<double>>("wavelengths_nm")) {
    o.wavelengths.clear();
    for (double v : *w) o.wavelengths.push_back(nanometers(v));
  } else {
    o.wavelengths = {nanometers(440.0)};
  }
  o.slm_pitch = micrometers(b.positive("slm_pitch_um", 8.0));
  if (auto r = b.get<std::vector<std::size_t>>("resolution")) {
    if (r->size() != 2) throw ConfigError(b.key_path("resolution"), "expected [rows, cols]");
    o.rows = (*r)[0], o.cols = (*r)[1];
  }
  o.focal_length = millimeters(b.positive("focal_length_mm", 400.0));
  o.detector_pitch = b.has("detector_pitch_um") ? micrometers(b.positive("detector_pitch_um", 0.0)) : o.slm_pitch;
  b.finish();
  prefixed("optics.", [&] { o.validate(); });
}

inline Preset parse_preset(const std::string& s, const std::string& key) {
  if (s == "paper-hw") return Preset::paper_hw;
  if (s == "paper-sim") return Preset::paper_sim;
  throw ConfigError(key, "unknown preset \"" + s + "\" (paper-hw | paper-sim)");
}

inline const char* preset_name(Preset p) { return p == Preset::paper_hw ? "paper-hw" : "paper-sim"; }

inline PolicyKind parse_policy_kind(const std::string& s, const std::string& key) {
  if (s == "slfh") return PolicyKind::slfh;
  if (s == "lf2fs") return PolicyKind::lf2fs;
  if (s == "stft") return PolicyKind::stft_grid;
  throw ConfigError(key, "unknown policy \"" + s + "\" (slfh | lf2fs | stft)");
}

inline LossDomain parse_domain(const std::string& s, const std::string& key) {
  if (s == "amplitude") return LossDomain::amplitude;
  if (s == "intensity") return LossDomain::intensity;
  throw ConfigError(key, "unknown loss domain \"" + s + "\" (amplitude | intensity)");
}

/// A value in user units that converts back to exactly `meters`, so a resolved
/// config reproduces the run bit for bit.
inline double exact_units(double meters, double (*to_user)(double), double (*to_si)(double)) {
  double v = to_user(meters);
  for (int step = 0; step < 8 && to_si(v) != meters; ++step) {
    const double up = std::nextafter(v, to_si(v) < meters ? HUGE_VAL : -HUGE_VAL);
    v = up;
  }
  return to_si(v) == meters ? v : to_user(meters);
}

inline double out_mm(double m) { return exact_units(m, to_millimeters, millimeters); }
inline double out_um(double m) { return exact_units(m, to_micrometers, micrometers); }
inline double out_nm(double m) { return exact_units(m, to_nanometers, nanometers); }

inline fs::path resolve(const fs::path& base, const fs::path& p) {
  return fs::weakly_canonical(p.is_absolute() ? p : base / p);
}

}  // namespace detail

/// Parses a run configuration; relative paths resolve against base_dir.
inline RunConfig parse_run_config(const json& root, const fs::path& base_dir) {
  using detail::Block;
  RunConfig rc;
  Block top(root, "");
  try {
    if (top.has("optics")) detail::parse_optics(top.child("optics"), rc.optics);
    else detail::parse_optics(Block(detail::empty_object(), "optics"), rc.optics);

    if (auto m = top.get<std::string>("mode")) {
      if (*m == "nearfield") rc.mode = Mode::nearfield;
      else if (*m == "farfield") rc.mode = Mode::farfield;
      else throw ConfigError("mode", "expected \"nearfield\" or \"farfield\"");
    }

    if (top.has("farfield")) {
      Block f = top.child("farfield");
      if (auto r = f.get<std::vector<std::size_t>>("hologram_resolution")) {
        if (r->size() != 2) throw ConfigError("farfield.hologram_resolution", "expected [rows, cols]");
        rc.hologram_resolution = std::array<std::size_t, 2>{(*r)[0], (*r)[1]};
      }
      f.read("tile", rc.tile);
      if (auto w = f.get<std::vector<std::size_t>>("retina_window")) {
        if (w->size() != 4) throw ConfigError("farfield.retina_window", "expected [row, col, rows, cols]");
        rc.retina_window = Window{(*w)[0], (*w)[1], (*w)[2], (*w)[3]};
      }
      f.finish();
      if (rc.mode != Mode::farfield) throw ConfigError("farfield", "only valid with \"mode\": \"farfield\"");
    }
    if (rc.mode == Mode::farfield) detail::prefixed("farfield.", [&] { rc.farfield().validate(); });
    const double eyebox = rc.eyebox();

    // Policy first: a preset supplies pupil-range defaults.
    Block pol = top.has("policy") ? top.child("policy") : Block(detail::empty_object(), "policy");
    if (auto k = pol.get<std::string>("policy")) rc.policy.kind = detail::parse_policy_kind(*k, "policy.policy");
    pol.read("batch", rc.policy.batch_size);
    std::optional<std::uint64_t> policy_seed = pol.get<std::uint64_t>("seed");
    pol.read("layers", rc.policy.layers);
    if (pol.has("grid")) {
      const auto& g = pol.raw("grid");
      std::vector<std::size_t> v;
      try {
        v = g.is_array() ? g.get<std::vector<std::size_t>>() : std::vector<std::size_t>{g.get<std::size_t>()};
      } catch (const json::exception&) {
        throw ConfigError("policy.grid", "expected n or [n, n]");
      }
      if (v.empty() || v.size() > 2 || (v.size() == 2 && v[0] != v[1]))
        throw ConfigError("policy.grid", "only square [n, n] grids are supported");
      rc.policy.grid = v[0];
    }
    rc.policy.fixed_d = detail::mm(pol.get<double>("fixed_d_mm"));
    rc.policy.fixed_z = detail::mm(pol.get<double>("fixed_z_mm"));
    if (auto p = pol.get<std::string>("preset")) rc.preset = detail::parse_preset(*p, "policy.preset");
    if (pol.has("bandpass")) {
      Block bp = pol.child("bandpass");
      BandPass band;
      bp.read("enabled", band.enabled);
      band.relative_radius = bp.positive("relative_radius", 1.0);
      bp.finish();
      rc.policy.bandpass = band;
    }
    pol.finish();

    PupilRanges ranges;
    if (rc.preset) {
      ranges = preset_ranges(*rc.preset, rc.optics);
      if (rc.mode == Mode::farfield && *rc.preset == Preset::paper_sim)
        ranges.d_min = 0.1 * eyebox, ranges.d_max = 0.4 * eyebox;
    }
    if (top.has("pupils")) {
      Block p = top.child("pupils");
      if (auto v = p.get<double>("z_min_mm")) ranges.z_min = millimeters(*v);
      if (auto v = p.get<double>("z_max_mm")) ranges.z_max = millimeters(*v);
      if (auto v = p.get<double>("d_min_mm")) ranges.d_min = millimeters(*v);
      if (auto v = p.get<double>("d_max_mm")) ranges.d_max = millimeters(*v);
      if (auto v = p.get<double>("shift_max_mm")) ranges.r_max = millimeters(*v);
      p.finish();
    }
    rc.policy.ranges = ranges;
    detail::prefixed("pupils.", [&] { ranges.validate(); });
    detail::prefixed("", [&] { rc.policy.validate(eyebox); });

    if (top.has("optimizer")) {
      Block o = top.child("optimizer");
      o.read("iterations", rc.optimizer.iterations);
      if (rc.optimizer.iterations == 0) throw ConfigError("optimizer.iterations", "must be at least 1");
      rc.optimizer.adam.lr = o.positive("lr", rc.optimizer.adam.lr);
      if (auto b = o.get<std::vector<double>>("betas")) {
        if (b->size() != 2 || !((*b)[0] >= 0 && (*b)[0] < 1 && (*b)[1] >= 0 && (*b)[1] < 1))
          throw ConfigError("optimizer.betas", "expected [beta1, beta2] in [0, 1)");
        rc.optimizer.adam.beta1 = (*b)[0], rc.optimizer.adam.beta2 = (*b)[1];
      }
      rc.optimizer.adam.eps = o.positive("eps", rc.optimizer.adam.eps);
      o.read("frames", rc.optimizer.frames);
      if (rc.optimizer.frames == 0) throw ConfigError("optimizer.frames", "must be at least 1");
      if (auto d = o.get<std::string>("loss_domain")) rc.optimizer.domain = detail::parse_domain(*d, "optimizer.loss_domain");
      o.read("divergence_window", rc.optimizer.divergence_window);
      rc.optimizer.divergence_factor = o.positive("divergence_factor", rc.optimizer.divergence_factor);
      o.finish();
    }

    if (top.has("io")) {
      Block io = top.child("io");
      if (auto p = io.get<std::string>("lightfield")) rc.lightfield = detail::resolve(base_dir, *p);
      rc.scene_dir = base_dir;
      if (auto d = io.get<std::string>("scene_dir")) rc.scene_dir = detail::resolve(base_dir, *d);
      if (io.has("scene")) {
        const json& s = io.raw("scene");
        if (s.is_string()) {
          const auto path = detail::resolve(base_dir, s.get<std::string>());
          std::ifstream in(path);
          if (!in) throw ConfigError("io.scene", "cannot open " + path.string());
          try {
            rc.scene = json::parse(in);
          } catch (const json::exception& e) {
            throw ConfigError("io.scene", path.string() + ": " + e.what());
          }
          rc.scene_dir = path.parent_path();
        } else if (s.is_object()) {
          rc.scene = s;
        } else {
          throw ConfigError("io.scene", "expected an object or a path");
        }
      }
      if (auto o = io.get<std::string>("output_dir")) rc.output_dir = *o;
      rc.output_dir = detail::resolve(base_dir, rc.output_dir);
      io.finish();
    } else {
      rc.output_dir = detail::resolve(base_dir, rc.output_dir);
    }
    if (rc.lightfield.has_value() == rc.scene.has_value())
      throw ConfigError("io", "exactly one of \"lightfield\" and \"scene\" is required");
    if (rc.lightfield && !fs::exists(*rc.lightfield / "meta.json"))
      throw ConfigError("io.lightfield", "no meta.json in " + rc.lightfield->string());
    if (rc.scene) detail::prefixed("io.scene.", [&] { parse_scene(*rc.scene, rc.scene_dir); });

    if (top.has("seeds")) {
      Block s = top.child("seeds");
      s.read("train", rc.train_seed);
      s.read("eval", rc.eval_seed);
      s.finish();
    }
    rc.policy.seed = policy_seed.value_or(rc.train_seed);

    rc.eval.epipolar_z = {rc.policy.ranges.z_min, rc.policy.ranges.z_max};
    if (top.has("eval")) {
      Block e = top.child("eval");
      e.read("n_random", rc.eval.n_random);
      e.read("n_structured", rc.eval.n_structured);
      rc.eval.fixed_z = detail::mm(e.get<double>("fixed_z_mm"));
      rc.eval.fixed_d = detail::mm(e.get<double>("fixed_d_mm"));
      e.read("epipolar_positions", rc.eval.epipolar_positions);
      rc.eval.epipolar_d = detail::mm(e.get<double>("epipolar_d_mm"));
      if (auto z = e.get<std::vector<double>>("epipolar_z_mm")) {
        rc.eval.epipolar_z.clear();
        for (double v : *z) rc.eval.epipolar_z.push_back(millimeters(v));
      }
      e.finish();
      if (rc.eval.n_random == 0 || rc.eval.n_structured == 0 || rc.eval.epipolar_positions == 0)
        throw ConfigError("eval", "counts must be at least 1");
    }
    top.finish();
  } catch (const json::exception& e) {
    throw ConfigError("", std::string("malformed configuration: ") + e.what());
  }
  return rc;
}

inline RunConfig load_run_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw MissingArtifactError("cannot open configuration " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError("", path.string() + " is not valid JSON: " + e.what());
  }
  return parse_run_config(j, fs::absolute(path).parent_path());
}

/// Fully resolved configuration; parsing it again gives the same RunConfig.
inline json to_json(const RunConfig& rc) {
  json optics = {
      {"wavelengths_nm", json::array()},
      {"slm_pitch_um", detail::out_um(rc.optics.slm_pitch)},
      {"resolution", {rc.optics.rows, rc.optics.cols}},
      {"focal_length_mm", detail::out_mm(rc.optics.focal_length)},
      {"detector_pitch_um", detail::out_um(rc.optics.detector_pitch)},
  };
  for (double w : rc.optics.wavelengths) optics["wavelengths_nm"].push_back(detail::out_nm(w));

  const auto& p = rc.policy;
  json policy = {{"policy", to_string(p.kind)}, {"batch", p.batch_size}, {"seed", p.seed},
                 {"layers", p.layers},          {"grid", {p.grid, p.grid}}};
  if (p.fixed_d) policy["fixed_d_mm"] = detail::out_mm(*p.fixed_d);
  if (p.fixed_z) policy["fixed_z_mm"] = detail::out_mm(*p.fixed_z);
  if (rc.preset) policy["preset"] = detail::preset_name(*rc.preset);
  const auto band = p.effective_bandpass();
  policy["bandpass"] = {{"enabled", band.enabled}, {"relative_radius", band.relative_radius}};

  json pupils = {{"z_min_mm", detail::out_mm(p.ranges.z_min)},
                 {"z_max_mm", detail::out_mm(p.ranges.z_max)},
                 {"d_min_mm", detail::out_mm(p.ranges.d_min)},
                 {"d_max_mm", detail::out_mm(p.ranges.d_max)}};
  if (p.ranges.r_max) pupils["shift_max_mm"] = detail::out_mm(*p.ranges.r_max);

  const auto& o = rc.optimizer;
  json optimizer = {{"iterations", o.iterations},
                    {"lr", o.adam.lr},
                    {"betas", {o.adam.beta1, o.adam.beta2}},
                    {"eps", o.adam.eps},
                    {"frames", o.frames},
                    {"loss_domain", to_string(o.domain)},
                    {"divergence_window", o.divergence_window},
                    {"divergence_factor", o.divergence_factor}};

  json io = {{"output_dir", rc.output_dir.string()}};
  if (rc.lightfield) io["lightfield"] = rc.lightfield->string();
  if (rc.scene) {
    io["scene"] = *rc.scene;
    io["scene_dir"] = rc.scene_dir.string();
  }

  json eval = {{"n_random", rc.eval.n_random},
               {"n_structured", rc.eval.n_structured},
               {"epipolar_positions", rc.eval.epipolar_positions},
               {"epipolar_z_mm", json::array()}};
  for (double z : rc.eval.epipolar_z) eval["epipolar_z_mm"].push_back(detail::out_mm(z));
  if (rc.eval.fixed_z) eval["fixed_z_mm"] = detail::out_mm(*rc.eval.fixed_z);
  if (rc.eval.fixed_d) eval["fixed_d_mm"] = detail::out_mm(*rc.eval.fixed_d);
  if (rc.eval.epipolar_d) eval["epipolar_d_mm"] = detail::out_mm(*rc.eval.epipolar_d);

  json out = {{"optics", optics},
              {"mode", rc.mode == Mode::farfield ? "farfield" : "nearfield"},
              {"policy", policy},
              {"pupils", pupils},
              {"optimizer", optimizer},
              {"io", io},
              {"seeds", {{"train", rc.train_seed}, {"eval", rc.eval_seed}}},
              {"eval", eval}};
  if (rc.mode == Mode::farfield) {
    const auto f = rc.farfield();
    json ff = {{"hologram_resolution", {f.rows(), f.cols()}}, {"tile", rc.tile}};
    if (rc.retina_window) {
      const auto& w = *rc.retina_window;
      ff["retina_window"] = {w.row, w.col, w.rows, w.cols};
    }
    out["farfield"] = ff;
  }
  return out;
}

/// Loads or synthesizes the run's light field in the geometry its mode expects.
inline LightField load_scene(const RunConfig& rc, const std::optional<fs::path>& override_path = std::nullopt) {
  const OpticalConfig target = rc.target_optics();
  LightField lf;
  if (override_path) {
    lf = load_lightfield(*override_path);
  } else if (rc.lightfield) {
    lf = load_lightfield(*rc.lightfield);
  } else {
    SceneSpec spec = parse_scene(*rc.scene, rc.scene_dir);
    if (!spec.eyebox) spec.eyebox = Vec2{rc.eyebox(), rc.eyebox()};
    lf = synthesize_test_scene(spec, target);
  }
  if (lf.rows() != target.rows || lf.cols() != target.cols)
    throw ConfigError(rc.mode == Mode::farfield ? "farfield.tile" : "optics.resolution",
                      "light-field views are " + std::to_string(lf.rows()) + "x" + std::to_string(lf.cols()) +
                          ", expected " + std::to_string(target.rows) + "x" + std::to_string(target.cols));
  if (lf.channels() < rc.optics.channels())
    throw ConfigError("optics.wavelengths_nm", "light field has fewer channels than wavelengths");
  // A pupil narrower than the view-lattice diagonal can fall between views.
  const auto spacing = [](double extent, std::size_t n) { return n > 1 ? extent / static_cast<double>(n - 1) : 0.0; };
  const double diagonal = std::hypot(spacing(lf.eyebox().x, lf.grid_cols()), spacing(lf.eyebox().y, lf.grid_rows()));
  const auto& p = rc.policy;
  const double smallest = p.kind == PolicyKind::slfh        ? p.ranges.d_min
                          : p.kind == PolicyKind::stft_grid ? p.stft_diameter(rc.eyebox())
                                                            : rc.eyebox();
  if (smallest <= diagonal)
    throw ConfigError(p.kind == PolicyKind::stft_grid ? "policy.fixed_d_mm" : "pupils.d_min_mm",
                      "pupils of " + std::to_string(to_millimeters(smallest)) +
                          " mm can miss every view; the view lattice needs d > " +
                          std::to_string(to_millimeters(diagonal)) + " mm (or a denser view grid)");
  return lf;
}

}  // namespace slfh::cli
