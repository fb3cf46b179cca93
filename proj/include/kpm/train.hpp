#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "kpm/attention_gnn.hpp"
#include "kpm/eval_metrics.hpp"
#include "kpm/losses.hpp"
#include "kpm/pipeline.hpp"

namespace kpm {

struct LossOptions {
  LossKind kind = LossKind::Projection;
  double threshold_px = 3.0;  // th
  double margin_px = 10.0;    // mg
};

// A pair with its priors and both ground-truth sets precomputed.
struct TrainingPair {
  PairData data;
  PairPriors priors;
  GroundTruth gt;         // threshold th
  GroundTruth gt_margin;  // threshold mg
};

// `truth_distances` is the pixel reprojection matrix under the true
// geometry (see reprojection_distances).
TrainingPair make_training_pair(PairData data, const MotionPrior& prior, double prior_sigma,
                                const Matrix& truth_distances, const LossOptions& loss);

std::vector<ad::LogTerm> loss_terms(const TrainingPair& pair, const LossOptions& loss);

struct LossAndGradients {
  double loss = 0.0;
  ModelParams gradients;  // same shapes as the parameters
};

// Mean loss over the batch and its gradient, through the unrolled Sinkhorn.
// Throws NonFiniteLoss; EmptyDataset for an empty batch.
LossAndGradients loss_and_gradients(const ModelParams& params, std::span<const TrainingPair> batch,
                                    const LossOptions& loss, const SinkhornOptions& sinkhorn);

// Forward-only mean loss.
double mean_loss(const ModelParams& params, std::span<const TrainingPair> pairs,
                 const LossOptions& loss, const SinkhornOptions& sinkhorn);

struct AdamOptions {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct OptimizerState {
  AdamOptions options;
  long step = 0;
  std::vector<Matrix> first_moment;
  std::vector<Matrix> second_moment;
};

// Bias-corrected Adam update over matching lists of tensors.
void adam_update(std::span<Matrix* const> params, std::span<const Matrix* const> grads,
                 OptimizerState& state);

void optimizer_step(ModelParams& params, const ModelParams& grads, OptimizerState& state);

struct TrainConfig {
  ModelConfig model;
  LossOptions loss;
  SinkhornOptions sinkhorn;
  AdamOptions adam;
  double confidence_threshold = 0.2;
  int batch_size = 8;
  int max_epochs = 300;
  int patience = 20;
  double validation_fraction = 0.2;
};

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double val_f1 = 0.0;
  double val_precision = 0.0;
  double val_recall = 0.0;
};

struct TrainResult {
  ModelParams params;  // at the best validation loss
  int best_epoch = 0;
  std::vector<EpochRecord> log;
  std::vector<std::size_t> train_indices;
  std::vector<std::size_t> val_indices;
};

// Deterministic split of n items; the validation part has
// round(fraction * n) items, at least 1 when n >= 2.
void split_dataset(std::size_t n, double validation_fraction, std::uint64_t seed,
                   std::vector<std::size_t>& train, std::vector<std::size_t>& val);

MatchReport evaluate_pairs(const ModelParams& params, std::span<const TrainingPair> pairs,
                           const SinkhornOptions& sinkhorn, double confidence_threshold);

TrainResult train(const TrainConfig& config, std::span<const TrainingPair> dataset,
                  std::uint64_t seed);

// Same as train but starting from given parameters.
TrainResult train_from(const TrainConfig& config, ModelParams initial,
                       std::span<const TrainingPair> dataset, std::uint64_t seed);

struct GradientCheck {
  std::string tensor;
  double max_relative_error = 0.0;
  double max_abs_gradient = 0.0;
};

// Central finite differences against the taped gradient of the mean loss,
// for every entry of every tensor. Relative error is
// |fd - ad| / max(|fd|, |ad|, denominator_floor).
std::vector<GradientCheck> gradient_check(const ModelParams& params,
                                          std::span<const TrainingPair> pairs,
                                          const LossOptions& loss, const SinkhornOptions& sinkhorn,
                                          double step = 1e-5, double denominator_floor = 1e-5);

}  // namespace kpm
