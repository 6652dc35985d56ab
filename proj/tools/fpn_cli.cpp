// Command-line front end. Every subcommand reads an optional run config,
// writes its artifacts under --out and exits 0; usage errors exit 2 and
// runtime failures exit 1, each with a single `error: ...` line on stderr.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "fpn/fpn.hpp"

namespace fs = std::filesystem;
using namespace fpn;

namespace {

struct UsageError : Error {
  using Error::Error;
};

struct Common {
  std::string config;
  std::uint64_t seed = 0;
  bool seed_set = false;
  std::string out;
  int threads = 0;
};

void add_common(CLI::App* app, Common& c, bool out_required = true) {
  app->add_option("--config", c.config, "run configuration (key = value)");
  app->add_option("--seed", c.seed, "root seed (overrides the config)");
  auto* o = app->add_option("--out", c.out, "output path");
  if (out_required) o->required();
  app->add_option("--threads", c.threads, "worker threads (default: all cores)")->check(CLI::PositiveNumber);
}

void require_file(const std::string& path, const char* flag) {
  if (path.rfind("builtin:", 0) == 0) return;
  if (!fs::exists(path)) throw UsageError(std::string(flag) + " " + path + " does not exist");
}

RunConfig load_run_config(const Common& c, const std::string& fallback = {}) {
  RunConfig cfg;
  try {
    if (!c.config.empty()) {
      require_file(c.config, "--config");
      cfg = load_config(c.config);
    } else if (!fallback.empty() && fs::exists(fallback)) {
      cfg = load_config(fallback);
    }
  } catch (const UsageError&) {
    throw;
  } catch (const Error& e) {
    throw UsageError(std::string("bad config: ") + e.what());
  }
  if (c.seed_set) cfg.seed = c.seed;
  if (c.threads > 0) set_worker_threads(c.threads);
  return cfg;
}

void log(const std::string& s) { std::cerr << s << std::endl; }

std::string fmt(double v) { return io::detail::fmt(v); }

std::string noise_tag(double n) {
  std::ostringstream os;
  os << n;
  return os.str();
}

std::string mesh_stem(const std::string& mesh) {
  if (mesh.rfind("builtin:", 0) == 0) return mesh.substr(8);
  return fs::path(mesh).stem().string();
}

// ---- datasets on disk ------------------------------------------------------
// <stem>.gt.xyz (positions + normals), <stem>.noisy.xyz, <stem>.labels,
// <stem>.features.xyz (ground-truth feature locations).

void write_dataset(const fs::path& dir, const std::string& stem, const LabeledCloud& lc) {
  io::write_points((dir / (stem + ".gt.xyz")).string(), lc.gt.cloud);
  io::write_points((dir / (stem + ".noisy.xyz")).string(), lc.noisy);
  io::write_points((dir / (stem + ".features.xyz")).string(), PointCloud(lc.feature_points));
  auto out = io::detail::open_out((dir / (stem + ".labels")).string());
  io::write_labels(out, lc.labels);
}

std::vector<LabeledCloud> read_datasets(const std::string& dir) {
  if (!fs::is_directory(dir)) throw UsageError("--in " + dir + " is not a directory");
  std::vector<std::string> stems;
  for (const auto& e : fs::directory_iterator(dir)) {
    const std::string name = e.path().filename().string();
    const std::string suffix = ".labels";
    if (name.size() > suffix.size() && name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0)
      stems.push_back(name.substr(0, name.size() - suffix.size()));
  }
  std::sort(stems.begin(), stems.end());
  if (stems.empty()) throw UsageError("--in " + dir + " holds no datasets (*.labels)");
  std::vector<LabeledCloud> out;
  for (const auto& s : stems) {
    const fs::path base = fs::path(dir) / s;
    LabeledCloud lc;
    lc.name = s;
    lc.gt.cloud = io::read_points(base.string() + ".gt.xyz");
    lc.noisy = io::read_points(base.string() + ".noisy.xyz");
    auto in = io::detail::open_in(base.string() + ".labels");
    lc.labels = io::read_labels(in, base.string() + ".labels");
    if (lc.gt.size() != lc.noisy.size() || lc.labels.size() != lc.noisy.size())
      throw Error(base.string() + ": gt, noisy and labels differ in size");
    lc.r_average = average_spacing(lc.noisy);
    out.push_back(std::move(lc));
  }
  return out;
}

/// Training clouds plus `rotations` rotated copies of each.
std::vector<LabeledCloud> with_rotations(std::vector<LabeledCloud> clouds, const RunConfig& cfg) {
  const std::size_t n = clouds.size();
  for (int k = 0; k < cfg.rotations; ++k)
    for (std::size_t i = 0; i < n; ++i)
      clouds.push_back(augment(clouds[i], derive_seed(cfg.seed, "rotation", k * n + i)));
  return clouds;
}

std::vector<const LabeledCloud*> pointers(const std::vector<LabeledCloud>& v) {
  std::vector<const LabeledCloud*> p;
  for (const auto& c : v) p.push_back(&c);
  return p;
}

// ---- models ----------------------------------------------------------------

const char* kClassifierFile = "classifier.fpnnet";
const char* kNonFeatureFile = "normals-non-feature.fpnnet";
const char* kFeatureFile = "normals-feature.fpnnet";
const char* kConfigFile = "config.txt";

void save_model(const fs::path& dir, const char* file, const TrainedNet& t) {
  fs::create_directories(dir);
  nn::save_checkpoint((dir / file).string(), t.net, t.opt);
}

nn::Network<float> load_model(const std::string& dir, const char* file) {
  const fs::path p = fs::path(dir) / file;
  if (!fs::exists(p)) throw UsageError("--models " + dir + " has no " + file);
  nn::Network<float> net;
  nn::AdamState<float> opt;
  nn::load_checkpoint(p.string(), net, opt);
  return net;
}

void write_config_once(const fs::path& dir, const RunConfig& cfg) {
  auto out = io::detail::open_out((dir / kConfigFile).string());
  cfg.write(out);
}

void write_losses(const fs::path& path, const nn::TrainReport& r) {
  auto out = io::detail::open_out(path.string());
  out << "# epoch mean_loss\n";
  for (std::size_t e = 0; e < r.epoch_loss.size(); ++e) out << e << ' ' << fmt(r.epoch_loss[e]) << '\n';
}

std::function<bool(int, double)> progress(const std::string& what) {
  return [what](int epoch, double loss) {
    log(what + " epoch " + std::to_string(epoch) + " loss " + fmt(loss));
    return false;
  };
}

// ---- subcommands -----------------------------------------------------------

struct Inputs {
  std::string in, models, gt, pred, mesh, noise, manifest, labels, scores, kind = "distance";
  std::size_t n = 0;
  bool oracle = false, snapshots = false;
};

int gen_data(const Common& c, const Inputs& a) {
  const RunConfig cfg = load_run_config(c);
  struct Job {
    std::string split, mesh;
    std::size_t n;
    double noise;
  };
  std::vector<Job> jobs;
  if (!a.manifest.empty()) {
    require_file(a.manifest, "--manifest");
    for (const auto& e : load_manifest(a.manifest).entries)
      for (double nl : e.noise_levels) jobs.push_back({e.split, e.mesh, e.count, nl});
  } else {
    if (a.mesh.empty()) throw UsageError("gen-data needs --mesh or --manifest");
    require_file(a.mesh, "--mesh");
    std::vector<double> levels = cfg.noise_levels;
    if (!a.noise.empty()) {
      std::istringstream in("noise_levels = " + a.noise);
      levels = parse_config(in, "--noise").noise_levels;
    }
    for (double nl : levels) jobs.push_back({"", a.mesh, a.n ? a.n : cfg.points, nl});
  }
  for (const auto& j : jobs) {
    const std::string stem = mesh_stem(j.mesh) + "_" + std::to_string(j.n) + "_" + noise_tag(j.noise);
    const std::uint64_t seed = derive_seed(cfg.seed, "dataset", fnv1a64(j.split + "/" + stem));
    const LabeledCloud lc = make_labeled_cloud(load_mesh(j.mesh), j.n, j.noise, seed, cfg.label_params(), false, stem);
    const fs::path dir = fs::path(c.out) / j.split;
    write_dataset(dir, stem, lc);
    std::size_t features = 0;
    for (const auto& l : lc.labels) features += l.feature;
    log("wrote " + (dir / stem).string() + " (" + std::to_string(lc.noisy.size()) + " points, " +
        std::to_string(features) + " feature points)");
  }
  return 0;
}

int train_classifier_cmd(const Common& c, const Inputs& a) {
  const RunConfig cfg = load_run_config(c);
  const auto clouds = with_rotations(read_datasets(a.in), cfg);
  const TrainedNet t = train_classifier(pointers(clouds), cfg.classifier_config(), progress("classifier"));
  save_model(c.out, kClassifierFile, t);
  write_losses(fs::path(c.out) / "classifier.loss", t.report);
  write_config_once(c.out, cfg);
  return 0;
}

int train_normals_cmd(const Common& c, const Inputs& a) {
  const RunConfig cfg = load_run_config(c);
  const auto clouds = with_rotations(read_datasets(a.in), cfg);
  const NormalConfig ncfg = cfg.normal_config();
  const TrainedNet nf = train_normal_net(pointers(clouds), Branch::non_feature, ncfg, progress("non-feature"));
  save_model(c.out, kNonFeatureFile, nf);
  write_losses(fs::path(c.out) / "normals-non-feature.loss", nf.report);
  const TrainedNet f = train_normal_net(pointers(clouds), Branch::feature, ncfg, progress("feature"));
  save_model(c.out, kFeatureFile, f);
  write_losses(fs::path(c.out) / "normals-feature.loss", f.report);
  write_config_once(c.out, cfg);
  return 0;
}

PointCloud read_input(const std::string& path) {
  if (path.empty()) throw UsageError("--in is required");
  require_file(path, "--in");
  return io::read_points(path);
}

struct Loaded {
  RunConfig cfg;
  nn::Network<float> classifier;
  NormalModels normals;
};

Loaded load_models(const Common& c, const std::string& dir, bool need_normals) {
  if (dir.empty()) throw UsageError("--models is required");
  if (!fs::is_directory(dir)) throw UsageError("--models " + dir + " is not a directory");
  Loaded l;
  l.cfg = load_run_config(c, (fs::path(dir) / kConfigFile).string());
  l.classifier = load_model(dir, kClassifierFile);
  if (need_normals) l.normals = {load_model(dir, kNonFeatureFile), load_model(dir, kFeatureFile)};
  return l;
}

int classify_cmd(const Common& c, const Inputs& a) {
  const PointCloud cloud = read_input(a.in);
  const Loaded m = load_models(c, a.models, false);
  const double r_avg = average_spacing(cloud);
  const PatchMaps maps(cloud, m.cfg.patch_scale * r_avg);
  const ClassifiedCloud cls = classify(m.classifier, maps, m.cfg.classifier_config());
  auto out = io::detail::open_out(c.out);
  io::write_scores(out, {cls.scores, cls.is_feature});
  log(std::to_string(cls.feature_count()) + " feature points, " + std::to_string(cls.degenerate_scores) +
      " degenerate scores");
  return 0;
}

int estimate_normals_cmd(const Common& c, const Inputs& a) {
  PointCloud cloud = read_input(a.in);
  const Loaded m = load_models(c, a.models, true);
  const double r_avg = average_spacing(cloud);
  const PatchMaps maps(cloud, m.cfg.patch_scale * r_avg);
  const ClassifiedCloud cls = classify(m.classifier, maps, m.cfg.classifier_config());
  const NormalPrediction pred = predict_normals(m.normals, cls, maps, r_avg, m.cfg.normal_config(), m.cfg.perturbation);
  cloud.normals = pred.normals;
  io::write_points(c.out, cloud);
  if (pred.fallbacks) log(std::to_string(pred.fallbacks) + " outputs fell back to the PCA normal");
  return 0;
}

int filter_cmd(const Common& c, const Inputs& a) {
  const PointCloud cloud = read_input(a.in);
  Loaded m;
  NormalProvider provider;
  PointCloud gt;
  if (!a.gt.empty()) {
    require_file(a.gt, "--gt");
    gt = io::read_points(a.gt);
  }
  if (a.oracle) {
    if (!gt.has_normals()) throw UsageError("--oracle needs --gt with normals");
    m.cfg = load_run_config(c);
    provider = oracle_normals(gt);
  } else {
    m = load_models(c, a.models, true);
    provider = learned_normals(m.classifier, m.normals, m.cfg.classifier_config(), m.cfg.normal_config(),
                               m.cfg.perturbation);
  }
  const fs::path out(c.out);
  auto diag = io::detail::open_out(out.string() + ".iterations.txt");
  diag << "# iteration r_average radius update_radius mean_displacement max_displacement feature_points fallbacks"
       << (gt.empty() ? "" : " rmse") << "\n";
  const auto res = run_pipeline(cloud, provider, m.cfg.filter_config(), [&](const IterationRecord& r) {
    diag << r.iteration << ' ' << fmt(r.r_average) << ' ' << fmt(r.radius) << ' ' << fmt(r.update_radius) << ' '
         << fmt(r.mean_displacement) << ' ' << fmt(r.max_displacement) << ' ' << r.feature_count << ' '
         << r.field.fallbacks;
    if (!gt.empty()) diag << ' ' << fmt(rmse_mean_distance(gt, r.cloud));
    diag << '\n';
    if (a.snapshots) {
      const fs::path snap = out.parent_path() / (out.stem().string() + ".iter" + std::to_string(r.iteration) + ".xyz");
      io::write_points(snap.string(), r.cloud);
    }
    log("iteration " + std::to_string(r.iteration) + " mean displacement " + fmt(r.mean_displacement));
  });
  io::write_points(c.out, res.cloud);
  return 0;
}

/// Normals of `pred` compared with the normal of the nearest ground-truth point.
std::vector<Vec3> matched_gt_normals(const PointCloud& gt, const PointCloud& pred) {
  const SpatialIndex index(gt);
  std::vector<Vec3> n(pred.size());
  for (std::size_t i = 0; i < pred.size(); ++i) n[i] = gt.normals[index.nearest(pred.points[i]).first];
  return n;
}

int evaluate_cmd(const Common& c, const Inputs& a) {
  if (a.gt.empty() || a.pred.empty()) throw UsageError("evaluate needs --gt and --pred");
  require_file(a.gt, "--gt");
  require_file(a.pred, "--pred");
  load_run_config(c);
  const PointCloud gt = io::read_points(a.gt), pred = io::read_points(a.pred);
  EvalReport r;
  r.points = pred.size();
  r.rmse = rmse_mean_distance(gt, pred);
  r.chamfer = chamfer(gt, pred);
  if (gt.has_normals() && pred.has_normals()) {
    const auto ref = matched_gt_normals(gt, pred);
    r.msae = msae(pred.normals, ref);
    r.pgp10 = pgp(pred.normals, ref, 10.0);
    r.pgp20 = pgp(pred.normals, ref, 20.0);
  }
  if (!a.labels.empty() || !a.scores.empty()) {
    if (a.labels.empty() || a.scores.empty()) throw UsageError("--labels and --scores go together");
    require_file(a.labels, "--labels");
    require_file(a.scores, "--scores");
    auto li = io::detail::open_in(a.labels);
    auto si = io::detail::open_in(a.scores);
    const LabelSet labels = io::read_labels(li, a.labels);
    const io::ScoreDump scores = io::read_scores(si, a.scores);
    std::vector<std::uint8_t> truth(labels.size());
    for (std::size_t i = 0; i < labels.size(); ++i) truth[i] = labels[i].feature;
    const Accuracy acc = classification_accuracy(scores.is_feature, truth);
    r.class_accuracy = acc.value;
    r.empty_prediction = acc.empty_prediction;
    if (acc.empty_prediction) log("warning: no predicted feature points; accuracy reported as 1");
  }
  r.write(std::cout);
  if (!c.out.empty()) {
    auto out = io::detail::open_out(c.out);
    r.write(out);
  }
  return 0;
}

int export_errors_cmd(const Common& c, const Inputs& a) {
  if (a.gt.empty() || a.pred.empty()) throw UsageError("export-errors needs --gt and --pred");
  require_file(a.gt, "--gt");
  require_file(a.pred, "--pred");
  load_run_config(c);
  const PointCloud gt = io::read_points(a.gt), pred = io::read_points(a.pred);
  std::vector<double> err;
  if (a.kind == "distance") {
    err = nearest_distances(pred.points, SpatialIndex(gt));
  } else {
    if (!gt.has_normals() || !pred.has_normals()) throw UsageError("--kind angle needs normals in --gt and --pred");
    err = angular_errors(pred.normals, matched_gt_normals(gt, pred));
  }
  auto out = io::detail::open_out(c.out);
  write_error_ply(out, pred.points, err);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Feature-preserving normal estimation and point cloud filtering"};
  app.require_subcommand(1);
  Common common;
  Inputs in;

  auto* gen = app.add_subcommand("gen-data", "sample meshes, add noise and write labeled datasets");
  add_common(gen, common);
  gen->add_option("--mesh", in.mesh, "mesh file (.off/.ply) or builtin:<name>");
  gen->add_option("--n", in.n, "sample count (default: config points)");
  gen->add_option("--noise", in.noise, "noise levels, comma separated (default: config)");
  gen->add_option("--manifest", in.manifest, "dataset manifest");

  auto* tc = app.add_subcommand("train-classifier", "train the feature classifier");
  add_common(tc, common);
  tc->add_option("--in", in.in, "dataset directory")->required();

  auto* tn = app.add_subcommand("train-normals", "train both normal networks");
  add_common(tn, common);
  tn->add_option("--in", in.in, "dataset directory")->required();

  auto* cl = app.add_subcommand("classify", "score every point of a cloud");
  add_common(cl, common);
  cl->add_option("--in", in.in, "point cloud")->required();
  cl->add_option("--models", in.models, "model directory")->required();

  auto* en = app.add_subcommand("estimate-normals", "predict a normal for every point");
  add_common(en, common);
  en->add_option("--in", in.in, "point cloud")->required();
  en->add_option("--models", in.models, "model directory")->required();

  auto* fi = app.add_subcommand("filter", "iterate normal estimation and position update");
  add_common(fi, common);
  fi->add_option("--in", in.in, "noisy point cloud")->required();
  fi->add_option("--models", in.models, "model directory");
  fi->add_option("--gt", in.gt, "ground truth for per-iteration RMSE (and --oracle)");
  fi->add_flag("--oracle", in.oracle, "use ground-truth normals instead of the networks");
  fi->add_flag("--snapshots", in.snapshots, "write the cloud after every iteration");

  auto* ev = app.add_subcommand("evaluate", "compare a result with the ground truth");
  add_common(ev, common, false);
  ev->add_option("--gt", in.gt, "ground-truth cloud")->required();
  ev->add_option("--pred", in.pred, "result cloud")->required();
  ev->add_option("--labels", in.labels, "ground-truth labels for classification accuracy");
  ev->add_option("--scores", in.scores, "classifier scores for classification accuracy");

  auto* ex = app.add_subcommand("export-errors", "write per-point errors as a coloured PLY");
  add_common(ex, common);
  ex->add_option("--gt", in.gt, "ground-truth cloud")->required();
  ex->add_option("--pred", in.pred, "result cloud")->required();
  ex->add_option("--kind", in.kind, "distance or angle")->check(CLI::IsMember({"distance", "angle"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: usage: " << e.what() << std::endl;
    return 2;
  }
  for (auto* sub : app.get_subcommands())
    if (sub->count("--seed")) common.seed_set = true;

  try {
    auto* sub = app.get_subcommands().front();
    const std::string name = sub->get_name();
    if (name == "gen-data") return gen_data(common, in);
    if (name == "train-classifier") return train_classifier_cmd(common, in);
    if (name == "train-normals") return train_normals_cmd(common, in);
    if (name == "classify") return classify_cmd(common, in);
    if (name == "estimate-normals") return estimate_normals_cmd(common, in);
    if (name == "filter") return filter_cmd(common, in);
    if (name == "evaluate") return evaluate_cmd(common, in);
    if (name == "export-errors") return export_errors_cmd(common, in);
  } catch (const UsageError& e) {
    std::cerr << "error: usage: " << e.what() << std::endl;
    return 2;
  } catch (const std::exception& e) {
    std::string msg = e.what();
    std::replace(msg.begin(), msg.end(), '\n', ' ');
    std::cerr << "error: runtime: " << msg << std::endl;
    return 1;
  }
  return 1;
}
