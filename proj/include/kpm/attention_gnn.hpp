#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "kpm/autodiff.hpp"
#include "kpm/features.hpp"
#include "kpm/imu_prior.hpp"

namespace kpm {

enum class AttentionVariant { Vanilla, Direct, Probabilistic };

const char* to_string(AttentionVariant variant);
AttentionVariant attention_variant_from_string(const std::string& name);

struct ModelConfig {
  int descriptor_dim = 256;
  int layers = 2;
  AttentionVariant variant = AttentionVariant::Probabilistic;
  bool position_encoder = true;
  std::vector<int> encoder_hidden = {32, 64};
  double sigma_init = 0.1;  // probabilistic variant, trainable per layer
  double dustbin_init = 1.0;

  void validate() const;
};

// Affine map on row features: y = x W + b, W is (in x out), b is (1 x out).
struct Linear {
  Matrix W;
  Matrix b;
};

// Affine layers with ReLU between them and none after the last.
struct Mlp {
  std::vector<Linear> layers;
};

struct AttentionBlock {
  Linear query;
  Linear key;
  Linear value;
  Mlp merge;  // 2D -> 2D -> D over [f || m]
};

struct GnnLayer {
  AttentionBlock self_block;
  AttentionBlock cross_block;
  Matrix log_sigma;  // 1x1, probabilistic variant
};

// All learnable tensors. Self and cross blocks have separate weights; both
// directions (A and B) share them.
struct ModelParams {
  ModelConfig config;
  Mlp encoder;
  std::vector<GnnLayer> layers;
  Linear projection;
  Matrix dustbin;  // 1x1

  // Seeded init: weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)), biases zero,
  // dustbin = config.dustbin_init, log sigma = log(config.sigma_init).
  static ModelParams initialize(const ModelConfig& config, std::uint64_t seed);
  // Every tensor zero except the dustbin and log sigma.
  static ModelParams zeros(const ModelConfig& config);

  // Visits tensors in a fixed order with stable names such as
  // "layers.0.cross.query.W".
  void for_each(const std::function<void(const std::string&, Matrix&)>& fn);
  void for_each(const std::function<void(const std::string&, const Matrix&)>& fn) const;

  std::size_t parameter_count() const;
};

// Graph-level building blocks. They run on any tape; a non-recording tape
// gives the plain forward.
namespace gnn {

ad::Var linear(ad::Tape& tape, const Linear& layer, ad::Var x);
ad::Var mlp(ad::Tape& tape, const Mlp& net, ad::Var x);

ad::Var encode_positions(ad::Tape& tape, const ModelParams& params,
                         const Eigen::MatrixX2d& normalized_positions, const Matrix& descriptors);

// Row-stochastic attention of queries over keys. `prior` is required for
// the direct and probabilistic variants; `neg_inv_sigma` (1x1, -1/sigma)
// only for probabilistic.
ad::Var attention_weights(AttentionVariant variant, ad::Var q, ad::Var k,
                          const PriorMatrix* prior, const ad::Var* neg_inv_sigma);

ad::Var message_pass(ad::Var alpha, ad::Var v);

enum class LayerMode { Self, Cross };

ad::Var layer_forward(ad::Tape& tape, const ModelParams& params, int layer_index, LayerMode mode,
                      ad::Var src, ad::Var ctx, const PriorMatrix* prior);

struct Descriptors {
  ad::Var a;
  ad::Var b;
};

ad::Var neg_inv_sigma(ad::Tape& tape, const ModelParams& params, int layer_index);

Descriptors forward(ad::Tape& tape, const ModelParams& params, const Eigen::MatrixX2d& pos_a,
                    const Matrix& desc_a, const Eigen::MatrixX2d& pos_b, const Matrix& desc_b,
                    const PairPriors& priors);

}  // namespace gnn

// Matrix-level interface.
Matrix encode_positions(const ModelParams& params, const Eigen::MatrixX2d& normalized_positions,
                        const Matrix& descriptors);

// sigma is used by the probabilistic variant only.
Matrix attention_weights(AttentionVariant variant, const Matrix& q, const Matrix& k,
                         const PriorMatrix* prior, double sigma);

Matrix message_pass(const Matrix& alpha, const Matrix& v);

Matrix layer_forward(const ModelParams& params, int layer_index, gnn::LayerMode mode,
                     const Matrix& src, const Matrix& ctx, const PriorMatrix* prior);

struct GnnOutput {
  Matrix a;
  Matrix b;
};

GnnOutput forward(const ModelParams& params, const Eigen::MatrixX2d& pos_a, const Matrix& desc_a,
                  const Eigen::MatrixX2d& pos_b, const Matrix& desc_b, const PairPriors& priors);

}  // namespace kpm
