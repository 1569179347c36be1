// scanfill: dataset generation, training, completion, evaluation, rendering
// and gradient checks from the command line.
//
// Exit codes: 0 success, 2 usage or configuration, 3 I/O or data, 4 numerical failure.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>

#include <json.hpp>

#include "scanfill/checkpoint.hpp"
#include "scanfill/config.hpp"
#include "scanfill/errors.hpp"
#include "scanfill/gradsuite.hpp"
#include "scanfill/image_io.hpp"
#include "scanfill/inference.hpp"
#include "scanfill/man.hpp"
#include "scanfill/ply.hpp"
#include "scanfill/trainer.hpp"

namespace fs = std::filesystem;
using namespace scanfill;

namespace {

enum Exit { kOk = 0, kUsage = 2, kIo = 3, kNumeric = 4 };

// Every dotted config key as a --key flag. Values given on the command line
// are applied after the config file.
struct ConfigFlags {
  std::string file;
  std::map<std::string, std::string> values;
  std::map<std::string, CLI::Option*> options;

  void attach(CLI::App* app) {
    app->add_option("--config", file, "JSON file of dotted keys applied before the flags");
    const RunConfig defaults;
    for (const auto& f : config_fields()) {
      const auto v = f.get(defaults);
      std::string shown = v.is_string() ? v.get<std::string>() : v.dump();
      if (v.is_array()) {
        shown.clear();
        for (const auto& e : v) shown += (shown.empty() ? "" : ",") + e.get<std::string>();
      }
      const char* type = v.is_boolean() ? "BOOL" : v.is_number() ? "NUM" : v.is_array() ? "LIST" : "TEXT";
      options[f.key] = app->add_option("--" + f.key, values[f.key], f.help)->type_name(type)->default_str(shown);
    }
  }

  // Base file (if any), then --config, then flags; finalized.
  RunConfig resolve(const std::optional<fs::path>& base = std::nullopt) const {
    RunConfig c;
    if (base && fs::exists(*base)) c = load_run_config(*base);
    if (!file.empty()) {
      load_run_config(file);  // reports unreadable or malformed files
      std::ifstream is(file);
      apply_json(c, nlohmann::json::parse(is));
    }
    for (const auto& [key, opt] : options)
      if (opt->count() > 0) set_option(c, key, values.at(key));
    c.finalize();
    return c;
  }
};

void write_json(const fs::path& path, const nlohmann::json& j) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot write " + path.string());
  os << j.dump(2) << '\n';
}

int cmd_gen_data(const RunConfig& c) {
  const auto summary = build_dataset(c.data);
  std::printf("wrote %zu samples under %s\n", summary.samples, c.data.root.string().c_str());
  for (const auto& [cat, eta] : summary.eta)
    std::printf("  %-6s bank eta %.6g, scan eta %.6g\n", cat.c_str(), eta, summary.scan_eta.at(cat));
  if (!summary.with_replacement.empty())
    std::printf("  %zu partials sampled with replacement\n", summary.with_replacement.size());
  return kOk;
}

int cmd_train(const RunConfig& c, const std::string& resume) {
  if (!resume.empty() && c.data.categories.size() != 1)
    throw ConfigError("--resume needs exactly one category in data.categories");
  for (auto cat : c.data.categories) {
    const auto tc = train_config(c, cat);
    Trainer t(tc);
    if (!resume.empty()) {
      t.load(resume);
      std::printf("%s: resumed at epoch %zu\n", tc.category.c_str(), t.epoch());
    }
    RunConfig saved = c;
    saved.data.categories = {cat};
    write_json(tc.out_dir / "config.json", to_json(saved));
    t.train([&](const EpochRecord& r) {
      std::printf("%s epoch %4zu  part %.5f  rend %.5f  dens %.3g  gen %.4f  disc %.4f  %.1fs\n",
                  tc.category.c_str(), r.epoch, r.l_part, r.l_rend, r.l_dens, r.l_gen, r.l_disc, r.seconds);
      std::fflush(stdout);
    });
    std::printf("%s: checkpoint %s\n", tc.category.c_str(), final_checkpoint_path(tc.out_dir).string().c_str());
  }
  return kOk;
}

int cmd_complete(const RunConfig& c, const fs::path& checkpoint, const fs::path& input, const fs::path& output,
                 const std::string& camera) {
  Prn<float> g(c.prn, 0);
  load_generator(g, checkpoint);
  const PointCloud in = read_ply(input);
  std::optional<Vec3> viewpoint;
  if (!camera.empty()) viewpoint = read_camera(camera).center();
  const PointCloud out = complete(g, in, viewpoint);
  write_ply(output, out);
  const auto ucd_sq = nearest_distances(in, out);
  double s = 0;
  for (double d : ucd_sq) s += d * d;
  std::printf("%.10g\n", s / static_cast<double>(in.size()));
  return kOk;
}

int cmd_eval(const RunConfig& c, const std::string& checkpoint, const std::string& split, const std::string& output) {
  if (!checkpoint.empty() && c.data.categories.size() != 1)
    throw ConfigError("--checkpoint needs exactly one category in data.categories");
  std::vector<MetricRow> rows;
  for (auto cat : c.data.categories) {
    const std::string name = to_string(cat);
    const fs::path ckpt = checkpoint.empty() ? final_checkpoint_path(c.out / name) : fs::path(checkpoint);
    Prn<float> g(c.prn, 0);
    load_generator(g, ckpt);
    for (auto& r : evaluate_split(g, c.data.root, name, split)) rows.push_back(std::move(r));
  }
  const fs::path dir = output.empty() ? c.out / ("eval_" + split) : fs::path(output);
  fs::create_directories(dir);
  write_metrics_csv(dir / "metrics.csv", rows);
  write_metrics_summary(dir / "summary.json", rows);
  std::printf("evaluated %zu samples; results in %s\n", rows.size(), dir.string().c_str());
  return kOk;
}

struct RenderArgs {
  std::string cloud, camera, output = "render", bank;
  double elevation = 0, azimuth = 0;
  double eta = 0;
  bool dare = false, fixed = false, compare = false;
};

int cmd_render(const RunConfig& c, const RenderArgs& a) {
  const PointCloud cloud = read_ply(a.cloud);
  if (cloud.empty()) throw InvalidInput(a.cloud + ": empty cloud");
  const auto& scan = c.data.scan;
  const Camera cam = a.camera.empty()
                         ? look_at(viewpoint_eye(a.elevation, a.azimuth, scan.views.distance), Vec3::Zero(),
                                   Vec3::UnitY(), static_cast<double>(scan.height), scan.width, scan.height)
                         : read_camera(a.camera);
  const bool dare = a.dare || (!a.fixed && c.dare);
  std::optional<double> eta;
  if (a.eta > 0) eta = a.eta;
  else if (!a.bank.empty()) eta = read_bank(a.bank).eta;

  std::mt19937_64 rng(c.seed);
  ad::NoGradGuard no_grad;
  const auto points = to_tensor<double>(cloud);
  const fs::path dir = a.output;
  fs::create_directories(dir);
  double radius = scan.splat.radius, used_eta = 0;
  Image depth;
  if (dare) {
    used_eta = eta ? *eta : compare_dare(cloud, cam, scan.splat, std::nullopt, rng).eta;
    const auto r = render_dare(points, cam, scan.splat, used_eta);
    depth = to_image(r.depth);
    radius = r.radius;
  } else {
    depth = to_image(render_depth(points, cam, scan.splat));
  }
  write_pfm(dir / "depth.pfm", depth);
  write_pgm(dir / "silhouette.pgm", binarize(depth));
  write_camera(dir / "camera.json", cam);
  std::printf("%s radius %.6g, %zu foreground pixels -> %s\n", dare ? "DARE" : "fixed", radius, depth.foreground(),
              dir.string().c_str());
  if (dare) std::printf("eta %.6g\n", used_eta);

  if (a.compare) {
    std::mt19937_64 crng(c.seed);
    const auto cmp = compare_dare(cloud, cam, scan.splat, eta, crng);
    std::printf("hole fraction: fixed %.4f  dare %.4f  (eta %.6g, A %zu, M %zu, r %.6g)\n", cmp.fixed_holes,
                cmp.dare_holes, cmp.eta, cmp.first_pass_foreground, cloud.size(), cmp.dare_radius);
    write_json(dir / "holes.json", {{"fixed_radius_holes", cmp.fixed_holes},
                                    {"dare_holes", cmp.dare_holes},
                                    {"eta", cmp.eta},
                                    {"first_pass_foreground", cmp.first_pass_foreground},
                                    {"points", cloud.size()},
                                    {"r0", scan.splat.radius},
                                    {"dare_radius", cmp.dare_radius}});
  }
  return kOk;
}

int cmd_gradcheck(const std::string& corrupt) {
  const auto rows = run_gradient_suite(corrupt);
  std::size_t failed = 0;
  std::printf("%-26s %14s %10s  %s\n", "check", "max rel err", "tolerance", "result");
  for (const auto& r : rows) {
    std::printf("%-26s %14.3e %10.0e  %s\n", r.name.c_str(), r.max_rel_error, r.tolerance, r.passed ? "PASS" : "FAIL");
    failed += r.passed ? 0 : 1;
  }
  std::printf("%zu checks, %zu failed\n", rows.size(), failed);
  return failed == 0 ? kOk : kNumeric;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Point cloud completion with pattern retrieval and adversarial rendering"};
  app.require_subcommand(1);
  app.get_formatter()->column_width(40);

  ConfigFlags gen_flags, train_flags, complete_flags, eval_flags, render_flags;

  auto* gen = app.add_subcommand("gen-data", "Generate the synthetic dataset");
  gen_flags.attach(gen);

  auto* train = app.add_subcommand("train", "Train one model per category");
  std::string resume;
  train->add_option("--resume", resume, "checkpoint to continue from (one category only)");
  train_flags.attach(train);

  auto* comp = app.add_subcommand("complete", "Complete a partial cloud with a trained model");
  std::string ckpt, input, output, camera;
  comp->add_option("--checkpoint", ckpt, "trained checkpoint")->required();
  comp->add_option("--input", input, "partial cloud (PLY)")->required();
  comp->add_option("--output", output, "completed cloud (PLY)")->required();
  comp->add_option("--camera", camera, "scan camera JSON; orients input normals toward it");
  complete_flags.attach(comp);

  auto* ev = app.add_subcommand("eval", "Score completions of a split against ground truth");
  std::string eval_ckpt, split = "test", eval_out;
  ev->add_option("--checkpoint", eval_ckpt, "checkpoint (default <out>/<category>/final.ckpt)");
  ev->add_option("--split", split, "split to evaluate")->check(CLI::IsMember({"train", "val", "test"}))->capture_default_str();
  ev->add_option("--output", eval_out, "result directory (default <out>/eval_<split>)");
  eval_flags.attach(ev);

  auto* rend = app.add_subcommand("render", "Render a cloud to depth and silhouette maps");
  RenderArgs ra;
  rend->add_option("--cloud", ra.cloud, "cloud to render (PLY)")->required();
  rend->add_option("--camera", ra.camera, "camera JSON; overrides the viewpoint flags");
  rend->add_option("--elevation", ra.elevation, "view elevation in degrees")->capture_default_str();
  rend->add_option("--azimuth", ra.azimuth, "view azimuth in degrees")->capture_default_str();
  auto* dare_flag = rend->add_flag("--dare", ra.dare, "density-adaptive radius");
  rend->add_flag("--fixed-radius", ra.fixed, "render at r0")->excludes(dare_flag);
  rend->add_option("--eta", ra.eta, "DARE constant (default: from --bank or the resampled reference view)");
  rend->add_option("--bank", ra.bank, "category directory whose bank.json supplies eta");
  rend->add_flag("--compare-dare", ra.compare, "report hole fractions of fixed and DARE radii");
  rend->add_option("--output", ra.output, "output directory")->capture_default_str();
  render_flags.attach(rend);

  auto* gc = app.add_subcommand("gradcheck", "Run the finite-difference gradient suite");
  std::string corrupt;
  bool list = false;
  gc->add_option("--corrupt", corrupt, "scale one check's backward pass by 1.5 (fault injection)");
  gc->add_flag("--list", list, "print check names and exit");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*gen) return cmd_gen_data(gen_flags.resolve());
    if (*train) return cmd_train(train_flags.resolve(), resume);
    if (*comp) {
      // A run directory's config.json describes the model shapes.
      return cmd_complete(complete_flags.resolve(fs::path(ckpt).parent_path() / "config.json"), ckpt, input, output,
                          camera);
    }
    if (*ev) {
      const auto base = eval_ckpt.empty() ? std::optional<fs::path>{}
                                          : std::optional<fs::path>{fs::path(eval_ckpt).parent_path() / "config.json"};
      return cmd_eval(eval_flags.resolve(base), eval_ckpt, split, eval_out);
    }
    if (*rend) return cmd_render(render_flags.resolve(), ra);
    if (*gc) {
      if (list) {
        for (const auto& n : gradient_suite_names()) std::printf("%s\n", n.c_str());
        return kOk;
      }
      return cmd_gradcheck(corrupt);
    }
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kUsage;
  } catch (const ShapeError& e) {
    std::fprintf(stderr, "shape mismatch: %s\n", e.what());
    return kUsage;
  } catch (const InvalidInput& e) {
    std::fprintf(stderr, "invalid input: %s\n", e.what());
    return kUsage;
  } catch (const IoError& e) {
    std::fprintf(stderr, "I/O error: %s\n", e.what());
    return kIo;
  } catch (const fs::filesystem_error& e) {
    std::fprintf(stderr, "I/O error: %s\n", e.what());
    return kIo;
  } catch (const NumericError& e) {
    std::fprintf(stderr, "numerical failure: %s\n", e.what());
    return kNumeric;
  }
  return kOk;
}
