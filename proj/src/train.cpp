#include "kpm/train.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include "kpm/error.hpp"

namespace kpm {

TrainingPair make_training_pair(PairData data, const MotionPrior& prior, double prior_sigma,
                                const Matrix& truth_distances, const LossOptions& loss) {
  TrainingPair pair;
  pair.priors = compute_priors(data, prior, prior_sigma);
  pair.gt = ground_truth_from_distances(truth_distances, loss.threshold_px);
  pair.gt_margin = ground_truth_from_distances(truth_distances, loss.margin_px);
  pair.data = std::move(data);
  return pair;
}

std::vector<ad::LogTerm> loss_terms(const TrainingPair& pair, const LossOptions& loss) {
  if (loss.kind == LossKind::Matching) return matching_loss_terms(pair.gt);
  return projection_loss_terms(pair.gt_margin, loss.threshold_px);
}

namespace {

std::vector<const Matrix*> tensor_list(const ModelParams& p) {
  std::vector<const Matrix*> out;
  p.for_each([&](const std::string&, const Matrix& m) { out.push_back(&m); });
  return out;
}

std::vector<Matrix*> tensor_list(ModelParams& p) {
  std::vector<Matrix*> out;
  p.for_each([&](const std::string&, Matrix& m) { out.push_back(&m); });
  return out;
}

ModelParams zeros_like(const ModelParams& params) {
  ModelParams g = params;
  g.for_each([](const std::string&, Matrix& m) { m.setZero(); });
  return g;
}

double pair_loss(ad::Tape& tape, const ModelParams& params, const TrainingPair& pair,
                 const LossOptions& loss, const SinkhornOptions& sinkhorn, ad::Var* out) {
  const ad::Var log_p = build_log_assignment(tape, params, pair.data, pair.priors, sinkhorn);
  const auto terms = loss_terms(pair, loss);
  const ad::Var l = ad::weighted_neg_log_sum(log_p, terms, std::log(kLogClampEpsilon));
  const double value = l.value()(0, 0);
  if (!std::isfinite(value)) throw Error(ErrorCode::NonFiniteLoss, "loss is not finite");
  if (out) *out = l;
  return value;
}

}  // namespace

LossAndGradients loss_and_gradients(const ModelParams& params, std::span<const TrainingPair> batch,
                                    const LossOptions& loss, const SinkhornOptions& sinkhorn) {
  if (batch.empty()) throw Error(ErrorCode::EmptyDataset, "empty batch");
  LossAndGradients out{0.0, zeros_like(params)};
  const auto sources = tensor_list(params);
  const auto targets = tensor_list(out.gradients);
  for (const auto& pair : batch) {
    ad::Tape tape(true);
    ad::Var l;
    out.loss += pair_loss(tape, params, pair, loss, sinkhorn, &l);
    tape.backward(l);
    for (std::size_t k = 0; k < sources.size(); ++k) {
      *targets[k] += tape.grad_of(*sources[k]);
    }
  }
  const double inv = 1.0 / static_cast<double>(batch.size());
  out.loss *= inv;
  for (Matrix* g : targets) *g *= inv;
  return out;
}

double mean_loss(const ModelParams& params, std::span<const TrainingPair> pairs,
                 const LossOptions& loss, const SinkhornOptions& sinkhorn) {
  if (pairs.empty()) throw Error(ErrorCode::EmptyDataset, "no pairs");
  double total = 0.0;
  for (const auto& pair : pairs) {
    ad::Tape tape(false);
    total += pair_loss(tape, params, pair, loss, sinkhorn, nullptr);
  }
  return total / static_cast<double>(pairs.size());
}

void adam_update(std::span<Matrix* const> params, std::span<const Matrix* const> grads,
                 OptimizerState& state) {
  if (params.size() != grads.size()) {
    throw Error(ErrorCode::ShapeMismatch, "parameter and gradient counts differ");
  }
  for (std::size_t k = 0; k < params.size(); ++k) {
    if (params[k]->rows() != grads[k]->rows() || params[k]->cols() != grads[k]->cols()) {
      throw Error(ErrorCode::ShapeMismatch, "gradient shape differs from parameter shape");
    }
  }
  if (state.first_moment.empty()) {
    for (const Matrix* p : params) {
      state.first_moment.push_back(Matrix::Zero(p->rows(), p->cols()));
      state.second_moment.push_back(Matrix::Zero(p->rows(), p->cols()));
    }
  }
  if (state.first_moment.size() != params.size()) {
    throw Error(ErrorCode::ShapeMismatch, "optimizer state does not match parameters");
  }
  const AdamOptions& o = state.options;
  ++state.step;
  const double c1 = 1.0 - std::pow(o.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(o.beta2, static_cast<double>(state.step));
  for (std::size_t k = 0; k < params.size(); ++k) {
    Matrix& m = state.first_moment[k];
    Matrix& v = state.second_moment[k];
    const Matrix& g = *grads[k];
    m = o.beta1 * m + (1.0 - o.beta1) * g;
    v = o.beta2 * v + (1.0 - o.beta2) * g.cwiseAbs2();
    params[k]->array() -=
        o.learning_rate * (m.array() / c1) / ((v.array() / c2).sqrt() + o.epsilon);
  }
}

void optimizer_step(ModelParams& params, const ModelParams& grads, OptimizerState& state) {
  const auto p = tensor_list(params);
  const auto g = tensor_list(grads);
  adam_update(p, g, state);
}

void split_dataset(std::size_t n, double validation_fraction, std::uint64_t seed,
                   std::vector<std::size_t>& train, std::vector<std::size_t>& val) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  std::size_t n_val = static_cast<std::size_t>(std::llround(validation_fraction * static_cast<double>(n)));
  if (n >= 2) n_val = std::clamp<std::size_t>(n_val, 1, n - 1);
  else n_val = 0;
  val.assign(order.begin(), order.begin() + static_cast<long>(n_val));
  train.assign(order.begin() + static_cast<long>(n_val), order.end());
  std::sort(val.begin(), val.end());
}

MatchReport evaluate_pairs(const ModelParams& params, std::span<const TrainingPair> pairs,
                           const SinkhornOptions& sinkhorn, double confidence_threshold) {
  MatchReport total;
  MatchOptions options;
  options.sinkhorn = sinkhorn;
  options.confidence_threshold = confidence_threshold;
  for (const auto& pair : pairs) {
    const auto result = match_pair(params, pair.data, pair.priors, options);
    total += score_matches(result.matches, pair.gt);
  }
  total.finalize();
  return total;
}

TrainResult train(const TrainConfig& config, std::span<const TrainingPair> dataset,
                  std::uint64_t seed) {
  return train_from(config, ModelParams::initialize(config.model, seed), dataset, seed);
}

TrainResult train_from(const TrainConfig& config, ModelParams initial,
                       std::span<const TrainingPair> dataset, std::uint64_t seed) {
  if (dataset.empty()) throw Error(ErrorCode::EmptyDataset, "no training pairs");
  if (config.batch_size < 1) throw Error(ErrorCode::InvalidConfig, "batch size must be >= 1");

  TrainResult result;
  split_dataset(dataset.size(), config.validation_fraction, seed, result.train_indices,
                result.val_indices);
  // A single pair is used for both roles.
  if (result.val_indices.empty()) result.val_indices = result.train_indices;

  std::vector<TrainingPair> val;
  for (auto i : result.val_indices) val.push_back(dataset[i]);

  ModelParams params = std::move(initial);
  OptimizerState opt;
  opt.options = config.adam;
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);

  double best_val = std::numeric_limits<double>::infinity();
  result.params = params;
  std::vector<std::size_t> order = result.train_indices;
  std::vector<TrainingPair> batch;
  for (int epoch = 1; epoch <= config.max_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double train_total = 0.0;
    std::size_t seen = 0;
    for (std::size_t start = 0; start < order.size();
         start += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t end =
          std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
      batch.clear();
      for (std::size_t k = start; k < end; ++k) batch.push_back(dataset[order[k]]);
      const auto lg = loss_and_gradients(params, batch, config.loss, config.sinkhorn);
      optimizer_step(params, lg.gradients, opt);
      train_total += lg.loss * static_cast<double>(batch.size());
      seen += batch.size();
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = seen ? train_total / static_cast<double>(seen) : 0.0;
    rec.val_loss = mean_loss(params, val, config.loss, config.sinkhorn);
    const MatchReport report =
        evaluate_pairs(params, val, config.sinkhorn, config.confidence_threshold);
    rec.val_f1 = report.f1;
    rec.val_precision = report.precision;
    rec.val_recall = report.recall;
    result.log.push_back(rec);

    if (rec.val_loss < best_val) {
      best_val = rec.val_loss;
      result.params = params;
      result.best_epoch = epoch;
    } else if (epoch - result.best_epoch > config.patience) {
      break;
    }
  }
  return result;
}

std::vector<GradientCheck> gradient_check(const ModelParams& params,
                                          std::span<const TrainingPair> pairs,
                                          const LossOptions& loss, const SinkhornOptions& sinkhorn,
                                          double step, double denominator_floor) {
  const auto analytic = loss_and_gradients(params, pairs, loss, sinkhorn);
  ModelParams probe = params;
  std::vector<std::pair<std::string, Matrix*>> tensors;
  probe.for_each([&](const std::string& name, Matrix& m) { tensors.emplace_back(name, &m); });
  std::vector<const Matrix*> grads = tensor_list(analytic.gradients);

  std::vector<GradientCheck> out;
  for (std::size_t t = 0; t < tensors.size(); ++t) {
    GradientCheck check{tensors[t].first, 0.0, 0.0};
    Matrix& m = *tensors[t].second;
    for (Eigen::Index i = 0; i < m.size(); ++i) {
      const double saved = m.data()[i];
      m.data()[i] = saved + step;
      const double up = mean_loss(probe, pairs, loss, sinkhorn);
      m.data()[i] = saved - step;
      const double down = mean_loss(probe, pairs, loss, sinkhorn);
      m.data()[i] = saved;
      const double fd = (up - down) / (2.0 * step);
      const double ad = grads[t]->data()[i];
      const double denom = std::max({std::abs(fd), std::abs(ad), denominator_floor});
      check.max_relative_error = std::max(check.max_relative_error, std::abs(fd - ad) / denom);
      check.max_abs_gradient = std::max(check.max_abs_gradient, std::abs(ad));
    }
    out.push_back(check);
  }
  return out;
}

}  // namespace kpm
