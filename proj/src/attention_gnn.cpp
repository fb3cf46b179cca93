#include "kpm/attention_gnn.hpp"

#include <cmath>
#include <random>

#include "kpm/error.hpp"

namespace kpm {

const char* to_string(AttentionVariant variant) {
  switch (variant) {
    case AttentionVariant::Vanilla: return "vanilla";
    case AttentionVariant::Direct: return "direct";
    case AttentionVariant::Probabilistic: return "probabilistic";
  }
  return "?";
}

AttentionVariant attention_variant_from_string(const std::string& name) {
  if (name == "vanilla") return AttentionVariant::Vanilla;
  if (name == "direct") return AttentionVariant::Direct;
  if (name == "probabilistic") return AttentionVariant::Probabilistic;
  throw Error(ErrorCode::InvalidConfig, "unknown attention variant '" + name + "'");
}

void ModelConfig::validate() const {
  if (descriptor_dim < 1) throw Error(ErrorCode::InvalidConfig, "descriptor_dim must be >= 1");
  if (layers < 1) throw Error(ErrorCode::InvalidConfig, "layers must be >= 1");
  if (!(sigma_init > 0.0)) {
    throw Error(ErrorCode::NonPositiveSigma, "sigma must be positive");
  }
  for (int h : encoder_hidden) {
    if (h < 1) throw Error(ErrorCode::InvalidConfig, "encoder hidden sizes must be >= 1");
  }
}

namespace {

Linear make_linear(int in, int out) {
  return Linear{Matrix::Zero(in, out), Matrix::Zero(1, out)};
}

Mlp make_mlp(const std::vector<int>& sizes) {
  Mlp net;
  for (std::size_t i = 0; i + 1 < sizes.size(); ++i) {
    net.layers.push_back(make_linear(sizes[i], sizes[i + 1]));
  }
  return net;
}

AttentionBlock make_block(int d) {
  return AttentionBlock{make_linear(d, d), make_linear(d, d), make_linear(d, d),
                        make_mlp({2 * d, 2 * d, d})};
}

template <typename Params, typename Fn>
void visit(Params& p, Fn&& fn) {
  auto visit_linear = [&](const std::string& prefix, auto& lin) {
    fn(prefix + ".W", lin.W);
    fn(prefix + ".b", lin.b);
  };
  auto visit_mlp = [&](const std::string& prefix, auto& net) {
    for (std::size_t i = 0; i < net.layers.size(); ++i) {
      visit_linear(prefix + "." + std::to_string(i), net.layers[i]);
    }
  };
  auto visit_block = [&](const std::string& prefix, auto& block) {
    visit_linear(prefix + ".query", block.query);
    visit_linear(prefix + ".key", block.key);
    visit_linear(prefix + ".value", block.value);
    visit_mlp(prefix + ".merge", block.merge);
  };
  visit_mlp("encoder", p.encoder);
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    const std::string prefix = "layers." + std::to_string(l);
    visit_block(prefix + ".self", p.layers[l].self_block);
    visit_block(prefix + ".cross", p.layers[l].cross_block);
    fn(prefix + ".log_sigma", p.layers[l].log_sigma);
  }
  visit_linear("projection", p.projection);
  fn("dustbin", p.dustbin);
}

bool is_bias(const std::string& name) { return name.size() >= 2 && name.ends_with(".b"); }

}  // namespace

ModelParams ModelParams::zeros(const ModelConfig& config) {
  config.validate();
  const int d = config.descriptor_dim;
  ModelParams p;
  p.config = config;
  if (config.position_encoder) {
    std::vector<int> sizes{2};
    sizes.insert(sizes.end(), config.encoder_hidden.begin(), config.encoder_hidden.end());
    sizes.push_back(d);
    p.encoder = make_mlp(sizes);
  }
  for (int l = 0; l < config.layers; ++l) {
    p.layers.push_back(
        GnnLayer{make_block(d), make_block(d), Matrix::Constant(1, 1, std::log(config.sigma_init))});
  }
  p.projection = make_linear(d, d);
  p.dustbin = Matrix::Constant(1, 1, config.dustbin_init);
  return p;
}

ModelParams ModelParams::initialize(const ModelConfig& config, std::uint64_t seed) {
  ModelParams p = zeros(config);
  std::mt19937_64 rng(seed);
  p.for_each([&](const std::string& name, Matrix& m) {
    if (name == "dustbin" || name.ends_with("log_sigma") || is_bias(name)) return;
    const double bound = 1.0 / std::sqrt(static_cast<double>(m.rows()));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      for (Eigen::Index i = 0; i < m.rows(); ++i) m(i, j) = dist(rng);
    }
  });
  return p;
}

void ModelParams::for_each(const std::function<void(const std::string&, Matrix&)>& fn) {
  visit(*this, fn);
}

void ModelParams::for_each(
    const std::function<void(const std::string&, const Matrix&)>& fn) const {
  visit(*this, fn);
}

std::size_t ModelParams::parameter_count() const {
  std::size_t n = 0;
  for_each([&](const std::string&, const Matrix& m) { n += static_cast<std::size_t>(m.size()); });
  return n;
}

namespace gnn {

ad::Var linear(ad::Tape& tape, const Linear& layer, ad::Var x) {
  return ad::add_row(ad::matmul(x, tape.parameter(layer.W)), tape.parameter(layer.b));
}

ad::Var mlp(ad::Tape& tape, const Mlp& net, ad::Var x) {
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    x = linear(tape, net.layers[i], x);
    if (i + 1 < net.layers.size()) x = ad::relu(x);
  }
  return x;
}

ad::Var encode_positions(ad::Tape& tape, const ModelParams& params,
                         const Eigen::MatrixX2d& normalized_positions, const Matrix& descriptors) {
  if (descriptors.cols() != params.config.descriptor_dim) {
    throw Error(ErrorCode::ShapeMismatch, "descriptor dim " + std::to_string(descriptors.cols()) +
                                              " != configured " +
                                              std::to_string(params.config.descriptor_dim));
  }
  if (normalized_positions.rows() != descriptors.rows()) {
    throw Error(ErrorCode::ShapeMismatch, "position and descriptor counts differ");
  }
  ad::Var f = tape.constant(descriptors);
  if (!params.config.position_encoder || params.encoder.layers.empty()) return f;
  ad::Var pos = tape.constant(Matrix(normalized_positions));
  return ad::add(f, mlp(tape, params.encoder, pos));
}

ad::Var attention_weights(AttentionVariant variant, ad::Var q, ad::Var k,
                          const PriorMatrix* prior, const ad::Var* neg_inv_sigma) {
  if (q.cols() != k.cols()) throw Error(ErrorCode::ShapeMismatch, "query/key widths differ");
  ad::Var logits = ad::matmul_nt(q, k);
  if (variant == AttentionVariant::Vanilla) return ad::softmax_rows(logits);

  if (prior == nullptr) throw Error(ErrorCode::ShapeMismatch, "variant needs a prior matrix");
  if (prior->rows() != q.rows() || prior->cols() != k.rows()) {
    throw Error(ErrorCode::ShapeMismatch, "prior shape does not match attention shape");
  }
  if (variant == AttentionVariant::Direct) {
    // (1 + s) q·k; the weight spans [1, 2].
    return ad::softmax_rows(ad::mul_const(logits, (prior->s.array() + 1.0).matrix()));
  }
  if (neg_inv_sigma == nullptr) throw Error(ErrorCode::NonPositiveSigma, "missing sigma");
  return ad::softmax_rows(ad::add_scaled_const(logits, prior->centered_sq_dist(), *neg_inv_sigma));
}

ad::Var message_pass(ad::Var alpha, ad::Var v) {
  if (alpha.cols() != v.rows()) throw Error(ErrorCode::ShapeMismatch, "alpha/value mismatch");
  return ad::matmul(alpha, v);
}

ad::Var neg_inv_sigma(ad::Tape& tape, const ModelParams& params, int layer_index) {
  const Matrix& log_sigma = params.layers[static_cast<std::size_t>(layer_index)].log_sigma;
  return ad::scale(ad::exp(ad::scale(tape.parameter(log_sigma), -1.0)), -1.0);
}

ad::Var layer_forward(ad::Tape& tape, const ModelParams& params, int layer_index, LayerMode mode,
                      ad::Var src, ad::Var ctx, const PriorMatrix* prior) {
  if (layer_index < 0 || layer_index >= static_cast<int>(params.layers.size())) {
    throw Error(ErrorCode::ShapeMismatch, "layer index out of range");
  }
  const GnnLayer& layer = params.layers[static_cast<std::size_t>(layer_index)];
  const AttentionBlock& block = mode == LayerMode::Self ? layer.self_block : layer.cross_block;
  const AttentionVariant variant = params.config.variant;

  ad::Var q = linear(tape, block.query, src);
  ad::Var k = linear(tape, block.key, ctx);
  ad::Var v = linear(tape, block.value, ctx);

  ad::Var alpha;
  if (variant == AttentionVariant::Probabilistic) {
    ad::Var nis = neg_inv_sigma(tape, params, layer_index);
    alpha = attention_weights(variant, q, k, prior, &nis);
  } else {
    alpha = attention_weights(variant, q, k, prior, nullptr);
  }
  ad::Var m = message_pass(alpha, v);
  return ad::add(src, mlp(tape, block.merge, ad::concat_cols(src, m)));
}

Descriptors forward(ad::Tape& tape, const ModelParams& params, const Eigen::MatrixX2d& pos_a,
                    const Matrix& desc_a, const Eigen::MatrixX2d& pos_b, const Matrix& desc_b,
                    const PairPriors& priors) {
  if (priors.self_a.rows() != desc_a.rows() || priors.self_b.rows() != desc_b.rows() ||
      priors.cross_ab.rows() != desc_a.rows() || priors.cross_ab.cols() != desc_b.rows() ||
      priors.cross_ba.rows() != desc_b.rows() || priors.cross_ba.cols() != desc_a.rows()) {
    throw Error(ErrorCode::ShapeMismatch, "priors inconsistent with keypoint counts");
  }
  ad::Var fa = encode_positions(tape, params, pos_a, desc_a);
  ad::Var fb = encode_positions(tape, params, pos_b, desc_b);
  for (int l = 0; l < static_cast<int>(params.layers.size()); ++l) {
    fa = layer_forward(tape, params, l, LayerMode::Self, fa, fa, &priors.self_a);
    fb = layer_forward(tape, params, l, LayerMode::Self, fb, fb, &priors.self_b);
    const ad::Var ca = layer_forward(tape, params, l, LayerMode::Cross, fa, fb, &priors.cross_ab);
    const ad::Var cb = layer_forward(tape, params, l, LayerMode::Cross, fb, fa, &priors.cross_ba);
    fa = ca;
    fb = cb;
  }
  return {linear(tape, params.projection, fa), linear(tape, params.projection, fb)};
}

}  // namespace gnn

Matrix encode_positions(const ModelParams& params, const Eigen::MatrixX2d& normalized_positions,
                        const Matrix& descriptors) {
  ad::Tape tape(false);
  return gnn::encode_positions(tape, params, normalized_positions, descriptors).value();
}

Matrix attention_weights(AttentionVariant variant, const Matrix& q, const Matrix& k,
                         const PriorMatrix* prior, double sigma) {
  ad::Tape tape(false);
  const ad::Var qv = tape.constant(q);
  const ad::Var kv = tape.constant(k);
  if (variant == AttentionVariant::Probabilistic) {
    if (!(sigma > 0.0)) throw Error(ErrorCode::NonPositiveSigma, "sigma must be positive");
    const ad::Var nis = tape.constant(Matrix::Constant(1, 1, -1.0 / sigma));
    return gnn::attention_weights(variant, qv, kv, prior, &nis).value();
  }
  return gnn::attention_weights(variant, qv, kv, prior, nullptr).value();
}

Matrix message_pass(const Matrix& alpha, const Matrix& v) {
  ad::Tape tape(false);
  return gnn::message_pass(tape.constant(alpha), tape.constant(v)).value();
}

Matrix layer_forward(const ModelParams& params, int layer_index, gnn::LayerMode mode,
                     const Matrix& src, const Matrix& ctx, const PriorMatrix* prior) {
  ad::Tape tape(false);
  const ad::Var s = tape.constant(src);
  const ad::Var c = mode == gnn::LayerMode::Self ? s : tape.constant(ctx);
  return gnn::layer_forward(tape, params, layer_index, mode, s, c, prior).value();
}

GnnOutput forward(const ModelParams& params, const Eigen::MatrixX2d& pos_a, const Matrix& desc_a,
                  const Eigen::MatrixX2d& pos_b, const Matrix& desc_b, const PairPriors& priors) {
  ad::Tape tape(false);
  const auto out = gnn::forward(tape, params, pos_a, desc_a, pos_b, desc_b, priors);
  return {out.a.value(), out.b.value()};
}

}  // namespace kpm
