#include "kpm/commands.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <mutex>
#include <optional>
#include <sstream>
#include <thread>

#include "kpm/error.hpp"
#include "kpm/eval_metrics.hpp"

namespace kpm {

namespace {

using json = nlohmann::json;

std::string fmt(const char* spec, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), spec, v);
  return buf;
}

std::string pair_name(int index, char side) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "p%05d_%c.kpmf", index, side);
  return buf;
}

}  // namespace

fs::path write_synth_dataset(const fs::path& dir, const SynthDatasetOptions& o) {
  if (o.pairs < 1) throw Error(ErrorCode::InvalidConfig, "synth needs at least one pair");
  fs::create_directories(dir);
  std::vector<PairRecord> records;
  for (int p = 0; p < o.pairs; ++p) {
    const std::uint64_t seed = o.seed * 1000003ULL + static_cast<std::uint64_t>(p);
    PairRecord r;
    r.id_a = "p" + std::to_string(p) + "a";
    r.id_b = "p" + std::to_string(p) + "b";
    r.features_a = pair_name(p, 'a');
    r.features_b = pair_name(p, 'b');
    r.K_a = o.scene.camera;
    r.K_b = o.scene.camera;
    r.t_a = 0.1 * p;
    r.t_b = 0.1 * p + 0.05;
    PairData data;
    if (o.homography) {
      const auto pair = synth_homography_pair(o.scene, o.corner_shift_px, seed);
      data = pair.data;
      r.gt_homography = pair.H_ab;
      const std::vector<Vec2> corners{Vec2(0, 0), Vec2(o.scene.camera.width, 0),
                                      Vec2(o.scene.camera.width, o.scene.camera.height),
                                      Vec2(0, o.scene.camera.height)};
      r.prior_homography = noisy_homography_prior(pair.H_ab, o.prior_corner_noise_px, seed, corners);
    } else {
      const auto pair = synth_scene(o.scene, seed);
      data = pair.data;
      r.gt_pose = pair.T_ab;
      r.prior_pose = pair.T_ab_prior;
    }
    save_features(dir / r.features_a, data.a);
    save_features(dir / r.features_b, data.b);
    records.push_back(r);
  }
  const fs::path manifest = dir / "manifest.jsonl";
  save_manifest(manifest, records);
  return manifest;
}

namespace {

struct ConfigArgs {
  std::string config_file;
  std::vector<std::string> overrides;

  void attach(CLI::App* app) {
    app->add_option("--config", config_file, "key=value config file");
    app->add_option("--set", overrides, "override a config key (key=value), repeatable");
  }

  RunConfig load(RunConfig base = {}) const {
    KeyValues values;
    if (!config_file.empty()) values = load_key_values(config_file);
    for (const auto& kv : overrides) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos) throw Error(ErrorCode::Usage, "--set expects key=value, got '" + kv + "'");
      values[kv.substr(0, eq)] = kv.substr(eq + 1);
    }
    return run_config_from(values, std::move(base));
  }
};

ModelParams model_for(const RunConfig& config, const std::string& weights) {
  ModelParams params = ModelParams::initialize(config.model, config.seed);
  if (!weights.empty()) load_weights(weights, params);
  return params;
}

std::vector<PairRecord> require_manifest(const std::string& path) {
  auto records = load_manifest(path);
  if (records.empty()) throw Error(ErrorCode::Usage, "manifest " + path + " has no pairs");
  return records;
}

int thread_count(std::size_t jobs) {
  int n = 0;
  if (const char* env = std::getenv("KPMATCH_THREADS")) n = std::atoi(env);
  if (n <= 0) n = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  return static_cast<int>(std::min<std::size_t>(static_cast<std::size_t>(n), jobs));
}

// Runs fn(i) for i in [0, n) on worker threads; the first error is rethrown
// after all workers finish.
template <typename Fn>
void parallel_for(std::size_t n, Fn fn) {
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto worker = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(failure_mutex);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  const int threads = thread_count(n);
  std::vector<std::thread> pool;
  for (int t = 1; t < threads; ++t) pool.emplace_back(worker);
  worker();
  for (auto& th : pool) th.join();
  if (failure) std::rethrow_exception(failure);
}

struct PairEval {
  MatchReport report;
  std::optional<double> pose_error_deg;
  std::optional<HomographyAccuracy> homography;
  StageTimings timings;
  std::size_t n_matches = 0;
};

PairEval evaluate_pair(const ModelParams& params, const RunConfig& config, const LoadedPair& pair,
                       std::size_t index) {
  PairEval ev;
  const auto result = match_pair(params, pair.data, pair.prior, config.match_options());
  ev.timings = result.timings;
  ev.n_matches = result.matches.matches.size();
  const GroundTruth gt = ground_truth_from_distances(truth_distances(pair), config.train.loss.threshold_px);
  ev.report = score_matches(result.matches, gt);

  if (const auto* T_gt = std::get_if<Pose>(&pair.truth)) {
    std::vector<std::pair<Vec3, Vec3>> pts;
    for (const auto& m : result.matches.matches) {
      if (!pair.data.a.has_depth(m.a) || !pair.data.b.has_depth(m.b)) continue;
      pts.emplace_back(unproject(pair.data.K_a, pair.data.a.keypoint(m.a), pair.data.a.depths(m.a)),
                       unproject(pair.data.K_b, pair.data.b.keypoint(m.b), pair.data.b.depths(m.b)));
    }
    double err = 180.0;
    if (pts.size() >= 3) {
      try {
        PoseRansacOptions opts;
        opts.seed = index;
        const auto est = estimate_pose_rgbd_ransac(pts, opts);
        const auto e = pose_angular_errors(est.T, *T_gt);
        err = std::max(e.rot_deg, e.trans_deg);
      } catch (const Error&) {
      }
    }
    ev.pose_error_deg = err;
  } else {
    const auto& H_gt = std::get<Homography>(pair.truth);
    std::vector<std::pair<Vec2, Vec2>> pts;
    for (const auto& m : result.matches.matches) {
      pts.emplace_back(pair.data.a.keypoint(m.a), pair.data.b.keypoint(m.b));
    }
    HomographyAccuracy acc{std::numeric_limits<double>::infinity(), false};
    if (pts.size() >= 4) {
      try {
        RansacOptions opts;
        opts.seed = index;
        const auto est = estimate_homography_ransac(pts, opts);
        acc = homography_accuracy(est.H, H_gt, pair.data.K_b.width, pair.data.K_b.height, 3.0);
      } catch (const Error&) {
      }
    }
    ev.homography = acc;
  }
  return ev;
}

int cmd_match(const RunConfig& config, const std::string& manifest, int index,
              const std::string& weights, const std::string& out_path, bool score,
              std::ostream& out, std::ostream& err) {
  const auto records = require_manifest(manifest);
  if (index < 0 || static_cast<std::size_t>(index) >= records.size()) {
    throw Error(ErrorCode::Usage, "--index out of range");
  }
  const ModelParams params = model_for(config, weights);
  const LoadedPair pair = load_pair(records[static_cast<std::size_t>(index)], fs::path(manifest).parent_path());
  const auto result = match_pair(params, pair.data, pair.prior, config.match_options());

  if (out_path.empty()) {
    write_matches(out, result.matches);
  } else {
    std::ostringstream buf;
    write_matches(buf, result.matches);
    std::ofstream file(out_path, std::ios::binary | std::ios::trunc);
    if (!file) throw Error(ErrorCode::IoError, "cannot write " + out_path);
    file << buf.str();
  }
  const auto& t = result.timings;
  err << "timing_ms prior=" << fmt("%.3f", t.prior_ms) << " gnn=" << fmt("%.3f", t.gnn_ms)
      << " sinkhorn=" << fmt("%.3f", t.sinkhorn_ms) << " recovery=" << fmt("%.3f", t.recovery_ms)
      << " total=" << fmt("%.3f", t.total_ms()) << "\n";
  if (score) {
    const GroundTruth gt =
        ground_truth_from_distances(truth_distances(pair), config.train.loss.threshold_px);
    const MatchReport r = score_matches(result.matches, gt);
    err << "score tp=" << r.tp << " fp=" << r.fp << " fn=" << r.fn
        << " precision=" << fmt("%.6f", r.precision) << " recall=" << fmt("%.6f", r.recall)
        << " f1=" << fmt("%.6f", r.f1) << "\n";
  }
  return 0;
}

int cmd_train(const RunConfig& config, const std::string& manifest, const std::string& init,
              const std::string& weights_out, const std::string& log_path, std::ostream& out) {
  const auto records = require_manifest(manifest);
  const fs::path base = fs::path(manifest).parent_path();
  std::vector<TrainingPair> dataset;
  for (const auto& r : records) {
    LoadedPair p = load_pair(r, base);
    const Matrix d = truth_distances(p);
    dataset.push_back(make_training_pair(std::move(p.data), p.prior, config.prior_sigma, d, config.train.loss));
  }
  const ModelParams initial = model_for(config, init);
  const TrainResult result = train_from(config.train, initial, dataset, config.seed);

  std::ostringstream log;
  for (const auto& e : result.log) {
    json j{{"epoch", e.epoch},     {"train_loss", e.train_loss}, {"val_loss", e.val_loss},
           {"val_f1", e.val_f1},   {"val_precision", e.val_precision},
           {"val_recall", e.val_recall}};
    log << j.dump() << "\n";
  }
  if (log_path.empty()) {
    out << log.str();
  } else {
    std::ofstream file(log_path, std::ios::trunc);
    if (!file) throw Error(ErrorCode::IoError, "cannot write " + log_path);
    file << log.str();
  }
  save_weights(weights_out, result.params);
  out << "best_epoch " << result.best_epoch << "\n";
  return 0;
}

int cmd_eval(const RunConfig& config, const std::string& manifest, const std::string& weights,
             const std::string& json_path, std::ostream& out, std::ostream& err) {
  const auto records = require_manifest(manifest);
  const fs::path base = fs::path(manifest).parent_path();
  const ModelParams params = model_for(config, weights);
  std::vector<PairEval> evals(records.size());
  parallel_for(records.size(), [&](std::size_t i) {
    evals[i] = evaluate_pair(params, config, load_pair(records[i], base), i);
  });

  MatchReport total;
  std::vector<double> pose_errors;
  std::size_t homography_pairs = 0, homography_pass = 0;
  double latency = 0.0;
  std::ostringstream records_out;
  for (std::size_t i = 0; i < evals.size(); ++i) {
    const auto& e = evals[i];
    total += e.report;
    latency += e.timings.total_ms();
    json j{{"pair", i},
           {"id_a", records[i].id_a},
           {"id_b", records[i].id_b},
           {"tp", e.report.tp},
           {"fp", e.report.fp},
           {"fn", e.report.fn},
           {"precision", e.report.precision},
           {"recall", e.report.recall},
           {"f1", e.report.f1}};
    if (e.pose_error_deg) {
      pose_errors.push_back(*e.pose_error_deg);
      j["pose_error_deg"] = *e.pose_error_deg;
    }
    if (e.homography) {
      ++homography_pairs;
      if (e.homography->pass) ++homography_pass;
      j["corner_error_px"] = std::isfinite(e.homography->mean_corner_error)
                                 ? json(e.homography->mean_corner_error)
                                 : json(nullptr);
      j["homography_pass"] = e.homography->pass;
    }
    records_out << j.dump() << "\n";
  }
  total.finalize();

  const std::string method = to_string(config.model.variant);
  out << "Matching (" << evals.size() << " pairs)\n";
  out << "method          P_m      R_m      F1\n";
  char row[160];
  std::snprintf(row, sizeof(row), "%-14s %7.2f  %7.2f  %7.2f\n", method.c_str(), 100.0 * total.precision,
                100.0 * total.recall, 100.0 * total.f1);
  out << row;
  json summary{{"summary", true},
               {"pairs", evals.size()},
               {"precision", total.precision},
               {"recall", total.recall},
               {"f1", total.f1}};
  if (!pose_errors.empty()) {
    const std::vector<double> th{5.0, 10.0, 20.0};
    const auto auc = pose_auc(pose_errors, th);
    out << "Pose (" << pose_errors.size() << " pairs)\n";
    out << "method         AUC@5    AUC@10   AUC@20\n";
    std::snprintf(row, sizeof(row), "%-14s %7.2f  %7.2f  %7.2f\n", method.c_str(), 100.0 * auc[0],
                  100.0 * auc[1], 100.0 * auc[2]);
    out << row;
    summary["auc"] = auc;
  }
  if (homography_pairs > 0) {
    const double acc = static_cast<double>(homography_pass) / static_cast<double>(homography_pairs);
    out << "Homography (" << homography_pairs << " pairs)\n";
    out << "method         Acc_H@3px\n";
    std::snprintf(row, sizeof(row), "%-14s %7.2f\n", method.c_str(), 100.0 * acc);
    out << row;
    summary["acc_h"] = acc;
  }
  err << "mean_latency_ms " << fmt("%.3f", latency / static_cast<double>(evals.size())) << "\n";

  if (!json_path.empty()) {
    std::ofstream file(json_path, std::ios::trunc);
    if (!file) throw Error(ErrorCode::IoError, "cannot write " + json_path);
    file << records_out.str() << summary.dump() << "\n";
  }
  return 0;
}

int cmd_check_grad(RunConfig config, int pairs, int n_points, double tolerance, std::ostream& out) {
  SynthConfig scene;
  scene.n_points = n_points;
  scene.descriptor_dim = config.model.descriptor_dim;
  bool ok = true;
  for (const auto variant :
       {AttentionVariant::Vanilla, AttentionVariant::Direct, AttentionVariant::Probabilistic}) {
    for (const auto kind : {LossKind::Matching, LossKind::Projection}) {
      config.model.variant = variant;
      config.train.loss.kind = kind;
      std::vector<TrainingPair> data;
      for (int p = 0; p < pairs; ++p) {
        auto s = synth_scene(scene, config.seed + static_cast<std::uint64_t>(p));
        const Matrix d = reprojection_distances(s.data.K_a, s.data.K_b, s.T_ab, s.data.a, s.data.b);
        data.push_back(make_training_pair(s.data, s.T_ab_prior, config.prior_sigma, d, config.train.loss));
      }
      const ModelParams params = ModelParams::initialize(config.model, config.seed);
      const auto checks = gradient_check(params, data, config.train.loss, config.train.sinkhorn);
      double worst = 0.0;
      std::string worst_name;
      for (const auto& c : checks) {
        if (c.max_relative_error >= worst) {
          worst = c.max_relative_error;
          worst_name = c.tensor;
        }
      }
      const bool pass = worst < tolerance;
      ok = ok && pass;
      out << (pass ? "PASS" : "FAIL") << " variant=" << to_string(variant) << " loss=" << to_string(kind)
          << " tensors=" << checks.size() << " max_rel_error=" << fmt("%.3e", worst)
          << " worst=" << worst_name << "\n";
    }
  }
  return ok ? 0 : 3;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Keypoint matching with spatial priors", "kpmatch"};
  app.require_subcommand(1);

  ConfigArgs match_cfg, train_cfg, eval_cfg, grad_cfg;
  std::string manifest, weights, out_path, init, log_path, json_path;
  int index = 0;
  bool score = false;

  auto* match = app.add_subcommand("match", "match one pair of a manifest");
  match_cfg.attach(match);
  match->add_option("--manifest", manifest, "dataset manifest")->required();
  match->add_option("--index", index, "pair index in the manifest");
  match->add_option("--weights", weights, "weights file (default: seeded init)");
  match->add_option("--out", out_path, "match list output (default: stdout)");
  match->add_flag("--score", score, "report precision/recall against the ground truth");

  auto* train_cmd = app.add_subcommand("train", "train on a manifest");
  train_cfg.attach(train_cmd);
  train_cmd->add_option("--manifest", manifest, "dataset manifest")->required();
  train_cmd->add_option("--init", init, "initial weights");
  train_cmd->add_option("--out", out_path, "weights output")->required();
  train_cmd->add_option("--log", log_path, "training log output (default: stdout)");

  auto* eval = app.add_subcommand("eval", "evaluate on a manifest");
  eval_cfg.attach(eval);
  eval->add_option("--manifest", manifest, "dataset manifest")->required();
  eval->add_option("--weights", weights, "weights file (default: seeded init)");
  eval->add_option("--json", json_path, "per-pair records output");

  SynthDatasetOptions synth_opts;
  std::string synth_dir;
  auto* synth = app.add_subcommand("synth", "write a synthetic dataset");
  synth->add_option("--out", synth_dir, "output directory")->required();
  synth->add_option("--pairs", synth_opts.pairs, "number of pairs");
  synth->add_option("--seed", synth_opts.seed, "random seed");
  synth->add_option("--points", synth_opts.scene.n_points, "keypoints per image");
  synth->add_option("--dim", synth_opts.scene.descriptor_dim, "descriptor dimension");
  synth->add_option("--noise", synth_opts.scene.descriptor_noise, "descriptor noise");
  synth->add_option("--outliers", synth_opts.scene.outlier_fraction, "outlier fraction");
  synth->add_option("--pose-magnitude", synth_opts.scene.pose_magnitude, "pose magnitude scale");
  synth->add_option("--jitter", synth_opts.scene.keypoint_jitter_px, "keypoint jitter (px)");
  synth->add_option("--prior-rot-deg", synth_opts.scene.prior_rotation_error_deg, "prior rotation error");
  synth->add_option("--prior-trans-m", synth_opts.scene.prior_translation_error_m, "prior translation error");
  synth->add_flag("--homography", synth_opts.homography, "planar homography pairs");
  synth->add_option("--corner-shift", synth_opts.corner_shift_px, "homography corner shift (px)");
  synth->add_option("--prior-corner-noise", synth_opts.prior_corner_noise_px, "homography prior noise (px)");

  int grad_pairs = 2, grad_points = 6;
  double tolerance = 1e-4;
  auto* grad = app.add_subcommand("check-grad", "finite-difference gradient checks");
  grad_cfg.attach(grad);
  grad->add_option("--pairs", grad_pairs, "synthetic pairs");
  grad->add_option("--points", grad_points, "keypoints per image");
  grad->add_option("--tolerance", tolerance, "max relative error");

  std::vector<std::string> argv(args.rbegin(), args.rend());
  try {
    app.parse(argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "usage error: " << e.what() << "\n" << app.help();
    return 1;
  }

  try {
    if (match->parsed()) {
      return cmd_match(match_cfg.load(), manifest, index, weights, out_path, score, out, err);
    }
    if (train_cmd->parsed()) return cmd_train(train_cfg.load(), manifest, init, out_path, log_path, out);
    if (eval->parsed()) return cmd_eval(eval_cfg.load(), manifest, weights, json_path, out, err);
    if (synth->parsed()) {
      const auto path = write_synth_dataset(synth_dir, synth_opts);
      out << path.string() << "\n";
      return 0;
    }
    if (grad->parsed()) {
      RunConfig base;
      base.model.descriptor_dim = 8;
      base.model.layers = 1;
      return cmd_check_grad(grad_cfg.load(base), grad_pairs, grad_points, tolerance, out);
    }
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return exit_class(e.code());
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 3;
  }
  return 1;
}

}  // namespace kpm
