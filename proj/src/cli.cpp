#include "grendel/cli.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "grendel/config.hpp"
#include "grendel/engine.hpp"
#include "grendel/error.hpp"
#include "grendel/experiments.hpp"
#include "grendel/log.hpp"
#include "grendel/rng.hpp"
#include "grendel/scene_io.hpp"

namespace grendel {

namespace {

struct CommonOptions {
  std::string config_path;
  std::vector<std::string> overrides;
  long long seed = -1;
};

void add_common(CLI::App* app, CommonOptions& o) {
  app->add_option("-c,--config", o.config_path, "INI config file");
  app->add_option("--set", o.overrides, "Override a config key: section.key=value")->allow_extra_args(false);
  app->add_option("--seed", o.seed, "Seed for every random choice");
}

Config resolve_config(const CommonOptions& o) {
  Config c = o.config_path.empty() ? Config{} : load_config(o.config_path);
  for (const auto& s : o.overrides) apply_override(c, s);
  if (o.seed >= 0) {
    c.engine.seed = static_cast<std::uint64_t>(o.seed);
    c.synth.seed = static_cast<std::uint64_t>(o.seed);
  }
  return c;
}

struct LoadedScene {
  SceneManifest manifest;
  std::vector<Image> images;
};

LoadedScene load_scene(const std::string& path) {
  if (path.empty()) throw Error("no scene manifest given (set train.manifest or pass --manifest)");
  if (!std::filesystem::exists(path)) throw Error("scene manifest '" + path + "' does not exist");
  LoadedScene s;
  s.manifest = load_manifest(path);
  s.images = load_images(s.manifest);
  return s;
}

std::vector<int> indices_of(const SceneManifest& m, const std::vector<int>& ids) {
  std::vector<int> out;
  for (int id : ids) out.push_back(static_cast<int>(m.index_of(id)));
  return out;
}

Eigen::Vector3d parse_vec3(const std::string& s) {
  std::stringstream ss(s);
  std::string item;
  std::vector<double> v;
  while (std::getline(ss, item, ',')) v.push_back(std::stod(item));
  if (v.size() != 3) throw Error("expected three comma-separated numbers, got '" + s + "'");
  return {v[0], v[1], v[2]};
}

void write_eval(std::ostream& out, const std::vector<EvalRow>& rows) {
  out << "camera_id,psnr,ssim\n";
  double p = 0.0, s = 0.0;
  for (const auto& r : rows) {
    out << r.camera_id << ',' << r.psnr << ',' << r.ssim << '\n';
    p += r.psnr;
    s += r.ssim;
  }
  if (!rows.empty()) out << "mean," << p / rows.size() << ',' << s / rows.size() << '\n';
}

int cmd_synth(const CommonOptions& o, const std::string& out_dir, std::ostream& out) {
  const Config c = resolve_config(o);
  const SyntheticScene scene = generate_synthetic_scene(c.synth);
  const auto manifest = write_synthetic_scene(out_dir, scene);
  out << "wrote " << scene.cameras.size() << " views of " << scene.truth.count() << " Gaussians to " << manifest.string()
      << '\n';
  return kExitOk;
}

int cmd_train(const CommonOptions& o, std::ostream& out) {
  Config c = resolve_config(o);
  const LoadedScene scene = load_scene(c.train.manifest);
  const double extent = scene_extent(scene.manifest.cameras);
  c.engine.hyper.spatial_scale = extent;
  const std::filesystem::path dir = c.train.output_dir;
  std::filesystem::create_directories(dir);

  Engine engine(c.engine, scene.manifest.cameras, scene.images, extent);
  if (!c.train.resume.empty()) {
    engine.restore(load_checkpoint(c.train.resume));
  } else {
    if (scene.manifest.points_path.empty()) throw Error("manifest has no point cloud and no checkpoint to resume from");
    PointSet pts = load_points(scene.manifest.resolve(scene.manifest.points_path));
    if (c.train.max_points > 0 && pts.positions.size() > static_cast<std::size_t>(c.train.max_points)) {
      // Keyed subsample, kept in file order.
      std::vector<std::pair<std::uint64_t, std::size_t>> keys;
      for (std::size_t i = 0; i < pts.positions.size(); ++i) keys.emplace_back(splitmix64(c.engine.seed * 31 + i), i);
      std::sort(keys.begin(), keys.end());
      keys.resize(static_cast<std::size_t>(c.train.max_points));
      std::vector<std::size_t> keep;
      for (auto& k : keys) keep.push_back(k.second);
      std::sort(keep.begin(), keep.end());
      PointSet sub;
      for (auto i : keep) {
        sub.positions.push_back(pts.positions[i]);
        if (!pts.colors.empty()) sub.colors.push_back(pts.colors[i]);
      }
      pts = std::move(sub);
    }
    engine.initialize(init_from_points(pts, c.init));
  }

  std::ofstream metrics(dir / "metrics.csv");
  write_metrics_header(metrics, c.engine.workers);
  ViewStream stream(indices_of(scene.manifest, scene.manifest.train_ids), c.engine.seed);
  std::int64_t next_ckpt = c.train.checkpoint_every > 0 ? engine.images_seen() + c.train.checkpoint_every : -1;
  while (engine.images_seen() < c.train.total_images) {
    const auto b = static_cast<int>(std::min<std::int64_t>(c.engine.batch_size, c.train.total_images - engine.images_seen()));
    const StepMetrics m = engine.train_step(stream.next(b));
    write_metrics_row(metrics, m);
    if (next_ckpt > 0 && engine.images_seen() >= next_ckpt) {
      save_checkpoint(dir / ("checkpoint_" + std::to_string(engine.images_seen()) + ".ply"), engine.checkpoint());
      next_ckpt += c.train.checkpoint_every;
    }
  }
  const Checkpoint ck = engine.checkpoint();
  save_checkpoint(dir / "checkpoint.ply", ck);

  const auto& ids = scene.manifest.test_ids.empty() ? scene.manifest.train_ids : scene.manifest.test_ids;
  std::vector<CameraView> cams;
  std::vector<Image> imgs;
  for (int idx : indices_of(scene.manifest, ids)) {
    cams.push_back(scene.manifest.cameras[idx]);
    imgs.push_back(scene.images[idx]);
  }
  const auto rows = evaluate(ck.cloud, cams, imgs, c.engine.pipeline);
  std::ofstream eval_csv(dir / "eval.csv");
  write_eval(eval_csv, rows);
  double ssim_mean = 0.0;
  for (const auto& r : rows) ssim_mean += r.ssim;
  ssim_mean /= std::max<std::size_t>(1, rows.size());
  out << std::fixed << std::setprecision(4) << (scene.manifest.test_ids.empty() ? "train" : "test")
      << " PSNR " << mean_psnr(rows) << " dB, SSIM " << ssim_mean << ", " << ck.cloud.count() << " Gaussians after "
      << engine.images_seen() << " images\n";
  return kExitOk;
}

int cmd_render(const std::string& ckpt, const std::string& manifest_path, int camera_id, const std::string& eye,
               const std::string& target, const std::string& out_path, std::ostream& out) {
  const Checkpoint ck = load_checkpoint(ckpt);
  const SceneManifest m = load_manifest(manifest_path);
  CameraView cam;
  if (!eye.empty()) {
    const CameraView& ref = m.cameras.front();
    cam = look_at(parse_vec3(eye), target.empty() ? Eigen::Vector3d::Zero() : parse_vec3(target),
                  Eigen::Vector3d(0, 1, 0), ref.width, ref.height, ref.fx);
  } else {
    cam = m.cameras[m.index_of(camera_id)];
  }
  write_ppm(out_path, render_view(ck.cloud, cam));
  out << "wrote " << out_path << '\n';
  return kExitOk;
}

int cmd_eval(const std::string& ckpt, const std::string& manifest_path, const std::string& split,
             const std::string& csv_path, std::ostream& out) {
  const Checkpoint ck = load_checkpoint(ckpt);
  const LoadedScene scene = load_scene(manifest_path);
  std::vector<int> ids;
  if (split == "test") ids = scene.manifest.test_ids;
  else if (split == "train") ids = scene.manifest.train_ids;
  else for (const auto& c : scene.manifest.cameras) ids.push_back(c.id);
  std::vector<CameraView> cams;
  std::vector<Image> imgs;
  for (int idx : indices_of(scene.manifest, ids)) {
    cams.push_back(scene.manifest.cameras[idx]);
    imgs.push_back(scene.images[idx]);
  }
  const auto rows = evaluate(ck.cloud, cams, imgs);
  write_eval(out, rows);
  if (!csv_path.empty()) {
    std::ofstream f(csv_path);
    write_eval(f, rows);
  }
  return kExitOk;
}

int cmd_experiment(const CommonOptions& o, const std::string& name, const std::string& ckpt,
                   const std::string& manifest_path, const std::string& csv_path, int workers, int epochs,
                   std::ostream& out) {
  const Config c = resolve_config(o);
  std::ofstream file;
  if (!csv_path.empty()) {
    file.open(csv_path);
    if (!file) throw Error("cannot write '" + csv_path + "'");
  }
  std::ostream& csv = csv_path.empty() ? out : file;

  auto scene_train_split = [&](LoadedScene& scene, std::vector<CameraView>& cams, std::vector<Image>& imgs) {
    scene = load_scene(manifest_path);
    for (int idx : indices_of(scene.manifest, scene.manifest.train_ids)) {
      cams.push_back(scene.manifest.cameras[idx]);
      imgs.push_back(scene.images[idx]);
    }
  };

  if (name == "grad-variance") {
    const auto& e = c.experiment;
    BatchSampling sampling = BatchSampling::Distinct;
    if (e.sampling == "duplicate") sampling = BatchSampling::Duplicate;
    else if (e.sampling == "grouped") sampling = BatchSampling::Grouped;
    else if (e.sampling != "distinct") throw Error("experiment.sampling must be distinct, duplicate or grouped");
    std::vector<VarianceRow> rows;
    if (e.iid_views > 0 && e.iid_clusters > 0) {
      // Shared part at 5% of the per-view variance: 1/Var levels off near b = 20.
      ClusteredGradientSource src(e.iid_views, e.iid_clusters, static_cast<std::size_t>(e.iid_dimension),
                                  std::sqrt(0.05), 1.0, c.engine.seed);
      rows = grad_variance_sweep(src, e.batch_sizes, e.trials, sampling, c.engine.seed);
    } else if (e.iid_views > 0) {
      IidGradientSource src(e.iid_views, static_cast<std::size_t>(e.iid_dimension), 1.0, c.engine.seed);
      rows = grad_variance_sweep(src, e.batch_sizes, e.trials, sampling, c.engine.seed);
    } else {
      if (ckpt.empty()) throw Error("grad-variance needs --checkpoint and --manifest (or experiment.iid_views > 0)");
      const auto group = group_from_name(e.group);
      if (!group) throw Error("unknown parameter group '" + e.group + "'");
      LoadedScene scene;
      std::vector<CameraView> cams;
      std::vector<Image> imgs;
      scene_train_split(scene, cams, imgs);
      SceneGradientSource src(load_checkpoint(ckpt).cloud, cams, imgs, *group, c.engine.pipeline);
      rows = grad_variance_sweep(src, e.batch_sizes, e.trials, sampling, c.engine.seed);
    }
    write_variance_csv(csv, rows);
    std::vector<double> x, y;
    for (const auto& r : rows) {
      x.push_back(r.batch_size);
      y.push_back(r.inverse);
    }
    if (rows.size() >= 2) {
      const LinearFit f = fit_line(x, y);
      log_info("1/variance vs batch size: slope " + std::to_string(f.slope) + ", R^2 " + std::to_string(f.r2));
    }
    return kExitOk;
  }
  if (name == "trajectory") {
    if (ckpt.empty()) throw Error("trajectory needs --checkpoint and --manifest");
    const auto group = group_from_name(c.experiment.group);
    if (!group) throw Error("unknown parameter group '" + c.experiment.group + "'");
    LoadedScene scene;
    std::vector<CameraView> cams;
    std::vector<Image> imgs;
    scene_train_split(scene, cams, imgs);
    TrajectoryConfig tc;
    tc.batch_sizes = c.experiment.trajectory_batch_sizes;
    tc.horizon_images = c.experiment.horizon_images;
    tc.log_every_images = c.experiment.log_every_images;
    tc.group = *group;
    tc.seed = c.engine.seed;
    tc.engine = c.engine;
    const double extent = scene_extent(scene.manifest.cameras);
    tc.engine.hyper.spatial_scale = extent;
    std::vector<int> train(cams.size());
    for (std::size_t i = 0; i < train.size(); ++i) train[i] = static_cast<int>(i);
    write_trajectory_csv(csv, trajectory_compare(load_checkpoint(ckpt), cams, imgs, train, extent, tc));
    return kExitOk;
  }
  if (name == "loadbalance-bench") {
    LoadBalanceConfig lc;
    lc.workers = workers;
    lc.epochs = epochs;
    lc.seed = c.engine.seed;
    const LoadBalanceResult r = loadbalance_bench(lc);
    write_loadbalance_csv(csv, r);
    log_info("steady-state imbalance: " + std::to_string(r.steady_rebalanced) + " with rebalancing, " +
             std::to_string(r.steady_static) + " static");
    return kExitOk;
  }
  throw CLI::ValidationError("experiment", "unknown experiment '" + name +
                                               "' (grad-variance, trajectory, loadbalance-bench)");
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Desk-scale distributed Gaussian splatting trainer", "grendel-mini"};
  app.require_subcommand(1);
  bool quiet = false;
  app.add_flag("-q,--quiet", quiet, "Only print warnings and errors");

  CommonOptions synth_o, train_o, exp_o, cfg_o;
  std::string synth_out = "scene";
  auto* synth = app.add_subcommand("synth", "Generate a synthetic scene (manifest, PPM images, points)");
  add_common(synth, synth_o);
  synth->add_option("-o,--out", synth_out, "Output directory");

  auto* train = app.add_subcommand("train", "Train on a scene manifest");
  add_common(train, train_o);

  std::string r_ckpt, r_manifest, r_out = "render.ppm", r_eye, r_target;
  int r_camera = 0;
  auto* render = app.add_subcommand("render", "Render a checkpoint from a manifest camera or a look-at pose");
  render->add_option("--checkpoint", r_ckpt, "Checkpoint PLY")->required();
  render->add_option("--manifest", r_manifest, "Scene manifest (camera intrinsics)")->required();
  render->add_option("--camera", r_camera, "Camera id");
  render->add_option("--eye", r_eye, "Camera position x,y,z (look-at pose instead of --camera)");
  render->add_option("--target", r_target, "Look-at target x,y,z (default origin)");
  render->add_option("-o,--out", r_out, "Output PPM");

  std::string e_ckpt, e_manifest, e_split = "test", e_csv;
  auto* eval = app.add_subcommand("eval", "PSNR and SSIM of a checkpoint per view");
  eval->add_option("--checkpoint", e_ckpt, "Checkpoint PLY")->required();
  eval->add_option("--manifest", e_manifest, "Scene manifest")->required();
  eval->add_option("--split", e_split, "test, train or all")->check(CLI::IsMember({"test", "train", "all"}));
  eval->add_option("-o,--out", e_csv, "Also write the table to this CSV");

  std::string x_name, x_ckpt, x_manifest, x_csv;
  int x_workers = 4, x_epochs = 3;
  auto* exp = app.add_subcommand("experiment", "grad-variance, trajectory or loadbalance-bench");
  add_common(exp, exp_o);
  exp->add_option("name", x_name, "Experiment name")->required();
  exp->add_option("--checkpoint", x_ckpt, "Checkpoint PLY");
  exp->add_option("--manifest", x_manifest, "Scene manifest");
  exp->add_option("-o,--out", x_csv, "CSV output (default stdout)");
  exp->add_option("--workers", x_workers, "loadbalance-bench worker count")->check(CLI::PositiveNumber);
  exp->add_option("--epochs", x_epochs, "loadbalance-bench epochs")->check(CLI::PositiveNumber);

  bool dump_defaults = false;
  auto* cfg = app.add_subcommand("config", "Configuration helpers");
  add_common(cfg, cfg_o);
  cfg->add_flag("--dump-defaults", dump_defaults, "Print every key with its value");

  std::vector<std::string> argv(args.rbegin(), args.rend());
  try {
    app.parse(argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUserError;
  }
  if (quiet) set_log_level(LogLevel::Warning);

  try {
    if (*synth) return cmd_synth(synth_o, synth_out, out);
    if (*train) return cmd_train(train_o, out);
    if (*render) return cmd_render(r_ckpt, r_manifest, r_camera, r_eye, r_target, r_out, out);
    if (*eval) return cmd_eval(e_ckpt, e_manifest, e_split, e_csv, out);
    if (*exp) return cmd_experiment(exp_o, x_name, x_ckpt, x_manifest, x_csv, x_workers, x_epochs, out);
    if (*cfg) {
      if (!dump_defaults) {
        err << "config: nothing to do (try --dump-defaults)\n";
        return kExitUserError;
      }
      out << dump_config(resolve_config(cfg_o));
      return kExitOk;
    }
  } catch (const CLI::Error& e) {
    err << "error: " << e.what() << '\n';
    return kExitUserError;
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return kExitUserError;
  } catch (const std::exception& e) {
    err << "internal error: " << e.what() << '\n';
    return kExitInternalError;
  }
  return kExitInternalError;
}

}  // namespace grendel
