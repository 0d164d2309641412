// rprnet: command-line front end for training, embedding, retrieval and checks.

#include <CLI11.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "rpr/ad/grad_check.hpp"
#include "rpr/checkpoint.hpp"
#include "rpr/config.hpp"
#include "rpr/io.hpp"
#include "rpr/retrieval.hpp"
#include "rpr/synth.hpp"
#include "rpr/training.hpp"

namespace fs = std::filesystem;
using namespace rpr;

namespace {

enum Exit : int {
  kOk = 0,
  kInternal = 1,
  kUsage = 2,
  kConfig = 3,
  kFormat = 4,
  kInvalidArgument = 5,
  kInvalidCloud = 6,
  kNumerical = 7,
  kEmpty = 8,
  kShape = 9,
  kCheckFailed = 10,
};

constexpr const char* kExitHelp =
    "Exit codes:\n"
    "  0  success\n"
    "  1  internal error\n"
    "  2  usage error\n"
    "  3  ConfigError\n"
    "  4  FormatError\n"
    "  5  InvalidArgument\n"
    "  6  InvalidCloud\n"
    "  7  NumericalError\n"
    "  8  EmptyBatch / EmptyDatabase\n"
    "  9  ShapeError\n"
    " 10  check failed (verify-invariance, gradcheck)\n";

int exit_code(ErrorCategory c) {
  switch (c) {
    case ErrorCategory::kConfig: return kConfig;
    case ErrorCategory::kFormat: return kFormat;
    case ErrorCategory::kInvalidArgument: return kInvalidArgument;
    case ErrorCategory::kInvalidCloud: return kInvalidCloud;
    case ErrorCategory::kNumerical: return kNumerical;
    case ErrorCategory::kEmptyBatch:
    case ErrorCategory::kEmptyDatabase: return kEmpty;
    case ErrorCategory::kShape: return kShape;
  }
  return kInternal;
}

struct Options {
  std::string config;
  std::vector<std::string> sets;
  bool desk = false;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string checkpoint;
  std::string manifest;
  std::string db_manifest;
  std::string levels = "0,30,60,90,120,150,180";
  std::string axis = "z";
  std::string mode = "so3";
  int trials = 100;
  Index coords = 4;
  bool rotate_db = false;
  std::string db_file;
  std::string query_file;
};

/// File, then --desk, then --set, then --seed. A checkpoint's network keys win
/// over all of them, since the weights only fit that shape.
RunConfig resolve(const Options& o, const std::optional<Checkpoint>& ck) {
  RunConfig cfg = o.config.empty() ? RunConfig{} : load_config(o.config);
  if (o.desk) cfg.apply_desk();
  for (const auto& s : o.sets) apply_setting(cfg, s);
  if (o.seed) cfg.train.seed = *o.seed;
  if (ck) cfg.net = net_config_from_text(ck->config_text);
  cfg.validate();
  std::cerr << "# resolved config\n" << config_to_text(cfg) << std::flush;
  return cfg;
}

std::optional<Checkpoint> maybe_checkpoint(const Options& o) {
  if (o.checkpoint.empty()) return std::nullopt;
  return load_checkpoint(o.checkpoint);
}

void require(const std::string& value, const char* flag) {
  if (value.empty()) throw InvalidArgument(std::string("missing required ") + flag);
}

template <typename T>
struct LoadedSet {
  std::vector<PointCloud<T>> clouds;
  std::vector<Eigen::Vector2d> positions;
};

template <typename T>
LoadedSet<T> load_set(const std::string& manifest_path) {
  const DatasetManifest m = read_manifest(manifest_path);
  LoadedSet<T> out;
  for (const auto& e : m.entries) {
    out.clouds.push_back(normalize_cloud(read_bin_cloud(m.resolve(e))).template cast<T>());
    out.positions.emplace_back(e.northing, e.easting);
  }
  if (out.clouds.empty()) throw InvalidArgument("manifest " + manifest_path + " has no entries");
  return out;
}

template <typename T>
RprNet<T> build_model(const RunConfig& cfg, const std::optional<Checkpoint>& ck) {
  RprNet<T> net(cfg.net);
  net.initialize(cfg.train.seed);
  if (ck) restore_checkpoint(*ck, net);
  return net;
}

void save_atomically(const fs::path& path, const Checkpoint& ck) {
  const fs::path tmp = path.string() + ".tmp";
  save_checkpoint(tmp, ck);
  fs::rename(tmp, path);
}

template <typename T>
int cmd_train(const Options& o) {
  const auto resume = maybe_checkpoint(o);
  const RunConfig cfg = resolve(o, resume);
  const std::string manifest = o.manifest.empty() ? cfg.train_manifest : o.manifest;
  require(manifest, "--manifest (or paths.train_manifest)");
  require(o.out, "--out");
  const auto set = load_set<T>(manifest);
  std::vector<TrainingSample<T>> data;
  for (std::size_t i = 0; i < set.clouds.size(); ++i) data.push_back({set.clouds[i], set.positions[i]});

  RprNet<T> net(cfg.net);
  if (!resume) {
    net.initialize(cfg.train.seed);
    calibrate_on(net, data);
  }
  Trainer<T> trainer(net, cfg.train);
  if (resume) {
    restore_checkpoint(*resume, net, &trainer.optimizer());
    trainer.set_epochs_done(static_cast<int>(resume->epoch));
    BatchState b = cfg.train.batch;
    if (resume->batch_size > 0) b.current_size = resume->batch_size;
    trainer.set_batch_state(b);
  }
  const std::string text = config_to_text(cfg);
  auto snapshot = [&] {
    save_atomically(o.out, make_checkpoint(net, text, trainer.epochs_done(), &trainer.optimizer(), trainer.batch_state().current_size));
  };
  if (!resume) snapshot();
  std::cout << "samples=" << data.size() << " parameters=" << net.count_parameters() << "\n";
  const auto t0 = std::chrono::steady_clock::now();
  while (trainer.epochs_done() < cfg.epochs) {
    const EpochMetrics m = trainer.run_epoch(data);
    snapshot();
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::cout << "epoch=" << m.epoch << " loss=" << m.loss << " active_ratio=" << m.active_ratio
              << " batch_size=" << m.batch_size << " gem_p=" << net.gem_exponent().value(0) << " seconds=" << secs << std::endl;
  }
  return kOk;
}

template <typename T>
int cmd_embed(const Options& o) {
  require(o.checkpoint, "--checkpoint");
  require(o.manifest, "--manifest");
  require(o.out, "--out");
  const auto ck = maybe_checkpoint(o);
  const RunConfig cfg = resolve(o, ck);
  const RprNet<T> net = build_model<T>(cfg, ck);
  const auto set = load_set<T>(o.manifest);
  const PlaceDatabase db = embed_all(net, set.clouds, set.positions);
  write_database(o.out, db);
  std::cout << "embedded=" << db.size() << " dim=" << db.dim() << " out=" << o.out << "\n";
  return kOk;
}

void print_report(std::ostream& table, std::ostream* records, const std::string& level, const EvalReport& r) {
  char line[160];
  std::snprintf(line, sizeof(line), "%-8s %10.4f %10.4f %8ld %8ld %6ld\n", level.c_str(), r.recall_at_1, r.recall_at_top1pct,
                static_cast<long>(r.num_queries), static_cast<long>(r.num_excluded), static_cast<long>(r.window));
  table << line;
  if (records) {
    *records << "level=" << level << " recall_at_1=" << r.recall_at_1 << " recall_at_top1pct=" << r.recall_at_top1pct
             << " queries=" << r.num_queries << " excluded=" << r.num_excluded << " window=" << r.window << "\n";
  }
}

constexpr const char* kReportHeader = "level      recall@1  recall@1%  queries excluded window\n";

int cmd_retrieve(const Options& o) {
  resolve(o, std::nullopt);
  const PlaceDatabase db = read_database(o.db_file);
  const PlaceDatabase q = read_database(o.query_file);
  const EvalReport r = evaluate(db, q);
  std::ofstream records;
  if (!o.out.empty()) records.open(o.out);
  std::cout << kReportHeader;
  print_report(std::cout, o.out.empty() ? nullptr : &records, "0", r);
  return kOk;
}

std::vector<RotationLevel> parse_levels(const std::string& list, const std::string& axis) {
  if (axis != "z" && axis != "so3") throw InvalidArgument("--axis must be z or so3");
  std::vector<RotationLevel> out;
  std::stringstream ss(list);
  std::string item;
  while (std::getline(ss, item, ',')) {
    double deg = 0.0;
    try {
      std::size_t used = 0;
      deg = std::stod(item, &used);
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw InvalidArgument("bad rotation level '" + item + "'");
    }
    if (deg < 0.0 || deg > 180.0) throw InvalidArgument("rotation levels must lie in [0, 180] degrees");
    std::ostringstream label;
    label << deg;
    if (deg == 0.0) out.push_back({RotationMode::z(0.0), label.str()});
    else if (axis == "so3") out.push_back({RotationMode::so3(), "so3:" + label.str()});
    else out.push_back({RotationMode::z(deg * M_PI / 180.0), label.str()});
  }
  if (out.empty()) throw InvalidArgument("no rotation levels given");
  return out;
}

template <typename T>
int cmd_eval_rotation(const Options& o) {
  require(o.checkpoint, "--checkpoint");
  require(o.manifest, "--manifest");
  require(o.db_manifest, "--db-manifest");
  const auto ck = maybe_checkpoint(o);
  const RunConfig cfg = resolve(o, ck);
  const auto levels = parse_levels(o.levels, o.axis);
  const RprNet<T> net = build_model<T>(cfg, ck);
  const auto db = load_set<T>(o.db_manifest);
  const auto q = load_set<T>(o.manifest);
  const auto reports = rotation_sweep(net, db.clouds, db.positions, q.clouds, q.positions, levels, o.rotate_db, cfg.train.seed);
  std::ofstream records;
  if (!o.out.empty()) records.open(o.out);
  std::cout << kReportHeader;
  for (const auto& r : reports) print_report(std::cout, o.out.empty() ? nullptr : &records, r.level.label, r.report);
  return kOk;
}

int cmd_verify_invariance(const Options& o) {
  const auto ck = maybe_checkpoint(o);
  const RunConfig cfg = resolve(o, ck);
  if (o.mode != "so3" && o.mode != "z") throw InvalidArgument("--mode must be so3 or z");
  if (o.trials < 1) throw InvalidArgument("--trials must be positive");
  const RotationMode mode = o.mode == "so3" ? RotationMode::so3() : RotationMode::z(M_PI);
  const RprNet<double> net = build_model<double>(cfg, ck);
  const Index n = std::max<Index>(2 * cfg.net.n_seeds, 512);
  std::mt19937_64 rng(derive_seed(cfg.train.seed, {7}));
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  double shared = 0.0, recomputed = 0.0;
  int regrouped = 0, skipped = 0;
  for (int t = 0; t < o.trials; ++t) {
    PointCloud<double> cloud(n, 3);
    for (Index i = 0; i < cloud.size(); ++i) cloud.data()[i] = u(rng);
    cloud = normalize_cloud(cloud);
    const auto rot = random_rotation(rng(), mode);
    const auto rotated = apply_rotation(cloud, rot);
    const auto base = net.prepare(cloud);
    const auto ref = net.embed(base);
    shared = std::max(shared, (net.embed(net.prepare(rotated, base.group)) - ref).cwiseAbs().maxCoeff());
    if (grouping_margin(cloud, cfg.net.n_seeds, cfg.net.k, cfg.net.fps_start) > 1e-6) {
      recomputed = std::max(recomputed, (net.embed(rotated) - ref).cwiseAbs().maxCoeff());
      ++regrouped;
    } else {
      ++skipped;
    }
  }
  const double worst = std::max(shared, recomputed);
  std::cout << "trials=" << o.trials << " mode=" << o.mode << " max_dev_shared=" << shared << " max_dev_recomputed=" << recomputed
            << " recomputed_trials=" << regrouped << " skipped_small_margin=" << skipped << "\n";
  std::cout << "max_deviation=" << worst << (worst <= 1e-6 ? " PASS" : " FAIL") << "\n";
  return worst <= 1e-6 ? kOk : kCheckFailed;
}

int cmd_gradcheck(const Options& o) {
  const auto ck = maybe_checkpoint(o);
  const RunConfig cfg = resolve(o, ck);
  RprNet<double> net = build_model<double>(cfg, ck);
  const Index n = std::max<Index>(cfg.net.n_seeds + 8, 64);
  std::mt19937_64 rng(derive_seed(cfg.train.seed, {8}));
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<PreparedCloud<double>> prepared;
  for (int s = 0; s < 3; ++s) {
    PointCloud<double> c(n, 3);
    for (Index i = 0; i < c.size(); ++i) c.data()[i] = u(rng);
    prepared.push_back(net.prepare(normalize_cloud(c)));
  }
  if (!ck) net.calibrate(prepared);
  const std::vector<Triplet> triplets = {{0, 1, 2}, {1, 0, 2}};
  ad::GradCheckOptions opts;
  opts.coords_per_param = o.coords;
  opts.seed = cfg.train.seed;
  const auto r = ad::grad_check(
      net.parameters(),
      [&](ad::Graph<double>& g) {
        std::vector<ad::Var<double>> d;
        for (const auto& p : prepared) d.push_back(net.forward(g, p, cfg.kernel_path));
        return triplet_batch_loss(d, triplets, 100.0);
      },
      opts);
  std::cout << "coordinates=" << r.coordinates_checked << " max_rel_error=" << r.max_rel_error << " worst=" << r.worst_parameter << "["
            << r.worst_coordinate << "]" << (r.max_rel_error <= 1e-4 ? " PASS" : " FAIL") << "\n";
  return r.max_rel_error <= 1e-4 ? kOk : kCheckFailed;
}

int cmd_synth(const Options& o) {
  const RunConfig cfg = resolve(o, std::nullopt);
  require(o.out, "--out");
  const SynthDataset d = synth_generate(cfg.synth);
  write_synth_dataset(o.out, d);
  std::cout << "train=" << d.train.size() << " test=" << d.test.size() << " out=" << o.out << "\n";
  return kOk;
}

int cmd_params(const Options& o) {
  const auto ck = maybe_checkpoint(o);
  const RunConfig cfg = resolve(o, ck);
  std::cout << parameter_count(cfg.net) << "\n";
  return kOk;
}

template <template <typename> class Fn>
int by_precision(const Options& o) {
  RunConfig probe = o.config.empty() ? RunConfig{} : load_config(o.config);
  for (const auto& s : o.sets) apply_setting(probe, s);
  return probe.precision == 64 ? Fn<double>{}(o) : Fn<float>{}(o);
}

template <typename T>
struct Train {
  int operator()(const Options& o) const { return cmd_train<T>(o); }
};
template <typename T>
struct Embed {
  int operator()(const Options& o) const { return cmd_embed<T>(o); }
};
template <typename T>
struct EvalRotation {
  int operator()(const Options& o) const { return cmd_eval_rotation<T>(o); }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Rotation-invariant point-cloud place recognition", "rprnet"};
  app.footer(kExitHelp);
  app.require_subcommand(1);
  Options o;

  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", o.config, "key=value config file")->check(CLI::ExistingFile);
    sub->add_option("--set", o.sets, "override one key (key=value), repeatable");
    sub->add_flag("--desk", o.desk, "desk preset: n_seeds=256, K=16, channels=16, final=64");
    sub->add_option("--seed", o.seed, "seed for every randomized step (sets train.seed)");
  };

  auto* train = app.add_subcommand("train", "train on a manifest; writes a checkpoint after every epoch");
  common(train);
  train->add_option("--manifest", o.manifest, "training manifest (defaults to paths.train_manifest)");
  train->add_option("--out", o.out, "checkpoint path")->required();
  train->add_option("--checkpoint", o.checkpoint, "resume from this checkpoint");

  auto* embed = app.add_subcommand("embed", "embed every cloud of a manifest into a descriptor database");
  common(embed);
  embed->add_option("--checkpoint", o.checkpoint, "trained model")->required();
  embed->add_option("--manifest", o.manifest, "clouds to embed")->required();
  embed->add_option("--out", o.out, "database path")->required();

  auto* retrieve = app.add_subcommand("retrieve", "evaluate query descriptors against a database (both from embed)");
  common(retrieve);
  retrieve->add_option("database", o.db_file, "database file")->required();
  retrieve->add_option("queries", o.query_file, "query database file")->required();
  retrieve->add_option("--out", o.out, "line-delimited record file");

  auto* evalrot = app.add_subcommand("eval-rotation", "recall under random rotations at several levels");
  common(evalrot);
  evalrot->add_option("--checkpoint", o.checkpoint, "trained model")->required();
  evalrot->add_option("--manifest", o.manifest, "query manifest")->required();
  evalrot->add_option("--db-manifest", o.db_manifest, "database manifest")->required();
  evalrot->add_option("--levels", o.levels, "comma-separated maximal angles in degrees")->capture_default_str();
  evalrot->add_option("--axis", o.axis, "z, or so3 (any nonzero level is uniform on SO(3))")->capture_default_str();
  evalrot->add_flag("--rotate-db", o.rotate_db, "rotate database clouds too");
  evalrot->add_option("--out", o.out, "line-delimited record file");

  auto* verify = app.add_subcommand("verify-invariance", "max descriptor deviation under random rotations, 64-bit");
  common(verify);
  verify->add_option("--trials", o.trials, "random clouds")->capture_default_str();
  verify->add_option("--mode", o.mode, "so3 or z")->capture_default_str();
  verify->add_option("--checkpoint", o.checkpoint, "model (random initialization otherwise)");

  auto* grad = app.add_subcommand("gradcheck", "finite-difference check of the network loss gradient, 64-bit");
  common(grad);
  grad->add_option("--checkpoint", o.checkpoint, "model (random initialization otherwise)");
  grad->add_option("--coords", o.coords, "coordinates sampled per parameter tensor")->capture_default_str();

  auto* synth = app.add_subcommand("synth", "write a synthetic dataset (clouds plus train/test manifests)");
  common(synth);
  synth->add_option("--out", o.out, "output directory")->required();

  auto* params = app.add_subcommand("params", "print the trainable parameter count");
  common(params);
  params->add_option("--checkpoint", o.checkpoint, "take the network shape from this checkpoint");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*train) return by_precision<Train>(o);
    if (*embed) return by_precision<Embed>(o);
    if (*retrieve) return cmd_retrieve(o);
    if (*evalrot) return by_precision<EvalRotation>(o);
    if (*verify) return cmd_verify_invariance(o);
    if (*grad) return cmd_gradcheck(o);
    if (*synth) return cmd_synth(o);
    if (*params) return cmd_params(o);
  } catch (const Error& e) {
    std::cerr << "error: " << category_name(e.category()) << ": " << e.what() << "\n";
    return exit_code(e.category());
  } catch (const std::exception& e) {
    std::cerr << "error: Internal: " << e.what() << "\n";
    return kInternal;
  }
  return kUsage;
}
