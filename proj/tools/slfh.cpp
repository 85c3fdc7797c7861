#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include "slfh/cli/commands.hpp"
#include "slfh/parallel.hpp"

using namespace slfh;
using namespace slfh::cli;

namespace {

Vec2 parse_shift(const std::string& text) {
  const auto comma = text.find(',');
  if (comma == std::string::npos) throw ConfigError("--s", "expected x,y (e.g. 8mm,0)");
  return {parse_length(text.substr(0, comma), "--s"), parse_length(text.substr(comma + 1), "--s")};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Stochastic light-field holography: optimize and evaluate phase-only holograms"};
  app.require_subcommand(1);
  std::size_t threads = 0;
  bool verbose = false, quiet = false;
  app.add_option("--threads", threads, "Maximum worker threads (0 = all cores)");
  app.add_flag("-v,--verbose", verbose, "Debug logging");
  app.add_flag("-q,--quiet", quiet, "Warnings and errors only");

  auto* opt = app.add_subcommand("optimize", "Optimize a hologram from a run configuration");
  std::string opt_config;
  OptimizeOptions opt_options;
  std::string opt_out, opt_name;
  opt->add_option("config", opt_config, "Run configuration (JSON)")->required();
  opt->add_option("--out", opt_out, "Override io.output_dir");
  opt->add_option("--name", opt_name, "Run directory name instead of run_<timestamp>");

  auto* ev = app.add_subcommand("evaluate", "Score a run over pupil sweeps and epipolar slices");
  std::string ev_run, ev_lf, ev_out, ev_d;
  std::vector<std::string> ev_sweeps, ev_z;
  std::size_t ev_n = 0, ev_epi = 0;
  bool ev_floats = false, ev_no_images = false;
  ev->add_option("run", ev_run, "Run directory")->required();
  ev->add_option("--sweep", ev_sweeps, "varying_aperture | focal_stack | light_field | random (repeatable)");
  ev->add_option("--n", ev_n, "Pupil states per sweep");
  ev->add_option("--epipolar", ev_epi, "Epipolar slices with this many pupil positions");
  ev->add_option("--d", ev_d, "Epipolar pupil diameter (default eyebox / 8)");
  ev->add_option("--z", ev_z, "Epipolar focus values (repeatable)");
  ev->add_option("--lightfield", ev_lf, "Evaluate against another light-field directory");
  ev->add_option("--out", ev_out, "Output directory (default <run>/eval)");
  ev->add_flag("--floats", ev_floats, "Also dump float32 images");
  ev->add_flag("--no-images", ev_no_images, "Skip per-state PNGs");

  auto* rd = app.add_subcommand("render", "Render one pupil state next to its light-field target");
  std::string rd_run, rd_s = "0,0", rd_z = "0", rd_d = "full", rd_out;
  rd->add_option("run", rd_run, "Run directory")->required();
  rd->add_option("--s", rd_s, "Pupil shift x,y (e.g. 8mm,0)");
  rd->add_option("--z", rd_z, "Focus distance (e.g. 12mm)");
  rd->add_option("--d", rd_d, "Pupil diameter or 'full'");
  rd->add_option("--out", rd_out, "Output directory (default <run>/render)");

  auto* cmp = app.add_subcommand("compare", "Optimize with slfh, lf2fs and stft and compare random-pupil scores");
  std::string cmp_config, cmp_out, cmp_name;
  std::size_t cmp_n = 0;
  cmp->add_option("config", cmp_config, "Run configuration (JSON)")->required();
  cmp->add_option("--n", cmp_n, "Pupil states per sweep");
  cmp->add_option("--out", cmp_out, "Override io.output_dir");
  cmp->add_option("--name", cmp_name, "Output directory name instead of compare_<timestamp>");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kOk : kConfigError;
  }
  spdlog::set_level(verbose ? spdlog::level::debug : quiet ? spdlog::level::warn : spdlog::level::info);
  ThreadLimit limit(threads);

  return run_guarded([&] {
    if (*opt) {
      if (!opt_out.empty()) opt_options.output_dir = opt_out;
      if (!opt_name.empty()) opt_options.run_name = opt_name;
      opt_options.quiet = quiet;
      cmd_optimize(opt_config, opt_options);
    } else if (*ev) {
      EvaluateOptions o;
      for (const auto& s : ev_sweeps) o.sweeps.push_back(parse_sweep_kind(s));
      if (ev_n) o.n = ev_n;
      if (ev_epi) o.epipolar = ev_epi;
      if (!ev_d.empty()) o.epipolar_d = parse_length(ev_d, "--d");
      for (const auto& z : ev_z) o.epipolar_z.push_back(parse_length(z, "--z"));
      if (!ev_lf.empty()) o.lightfield = ev_lf;
      if (!ev_out.empty()) o.output_dir = ev_out;
      o.floats = ev_floats;
      o.images = !ev_no_images;
      cmd_evaluate(ev_run, o);
    } else if (*rd) {
      RenderOptions o;
      o.shift = parse_shift(rd_s);
      o.focus = parse_length(rd_z, "--z");
      if (rd_d != "full") o.diameter = parse_length(rd_d, "--d");
      if (!rd_out.empty()) o.output_dir = rd_out;
      cmd_render(rd_run, o);
    } else if (*cmp) {
      CompareOptions o;
      if (cmp_n) o.n = cmp_n;
      if (!cmp_out.empty()) o.output_dir = cmp_out;
      if (!cmp_name.empty()) o.run_name = cmp_name;
      o.quiet = quiet;
      cmd_compare(cmp_config, o);
    }
  });
}
