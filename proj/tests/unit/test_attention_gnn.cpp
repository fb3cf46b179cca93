#include <doctest.h>

#include <cmath>
#include <numeric>
#include <random>
#include <set>

#include "kpm/attention_gnn.hpp"
#include "kpm/synth.hpp"
#include "test_util.hpp"

using namespace kpm;

namespace {

Matrix softmax_rows_oracle(const Matrix& x) {
  Matrix out(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    double m = -std::numeric_limits<double>::infinity();
    for (Eigen::Index j = 0; j < x.cols(); ++j) m = std::max(m, x(i, j));
    double z = 0.0;
    for (Eigen::Index j = 0; j < x.cols(); ++j) z += std::exp(x(i, j) - m);
    for (Eigen::Index j = 0; j < x.cols(); ++j) out(i, j) = std::exp(x(i, j) - m) / z;
  }
  return out;
}

Matrix linear_oracle(const Linear& l, const Matrix& x) {
  Matrix y = x * l.W;
  for (Eigen::Index i = 0; i < y.rows(); ++i) y.row(i) += l.b;
  return y;
}

Matrix mlp_oracle(const Mlp& net, Matrix x) {
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    x = linear_oracle(net.layers[i], x);
    if (i + 1 < net.layers.size()) x = x.cwiseMax(0.0);
  }
  return x;
}

PriorMatrix random_prior(std::mt19937_64& rng, Eigen::Index r, Eigen::Index c, double sigma) {
  Matrix d2 = testing::random_matrix(rng, r, c, 0.0, 0.5);
  return PriorMatrix::from_sq_dist(PriorDirection::CrossAB, d2, std::vector<char>(r, 1), sigma);
}

ModelConfig small_config(AttentionVariant variant, int dim = 8, int layers = 2) {
  ModelConfig c;
  c.descriptor_dim = dim;
  c.layers = layers;
  c.variant = variant;
  c.encoder_hidden = {8, 8};
  return c;
}

double max_abs(const Matrix& m) { return m.size() == 0 ? 0.0 : m.cwiseAbs().maxCoeff(); }

}  // namespace

TEST_CASE("variant names") {
  for (auto v : {AttentionVariant::Vanilla, AttentionVariant::Direct, AttentionVariant::Probabilistic}) {
    CHECK(attention_variant_from_string(to_string(v)) == v);
  }
  CHECK_ERROR_CODE(attention_variant_from_string("gaussian"), ErrorCode::InvalidConfig);
}

TEST_CASE("config validation") {
  ModelConfig c;
  CHECK_NOTHROW(c.validate());
  c.layers = 0;
  CHECK_ERROR_CODE(c.validate(), ErrorCode::InvalidConfig);
  c = ModelConfig{};
  c.sigma_init = 0.0;
  CHECK_ERROR_CODE(c.validate(), ErrorCode::NonPositiveSigma);
  c = ModelConfig{};
  c.descriptor_dim = 0;
  CHECK_ERROR_CODE(c.validate(), ErrorCode::InvalidConfig);
}

TEST_CASE("vanilla attention on a hand example") {
  Matrix q(1, 2), k(2, 2);
  q << 1.0, 0.0;
  k << 1.0, 0.0, 0.0, 1.0;
  const Matrix a = attention_weights(AttentionVariant::Vanilla, q, k, nullptr, 0.1);
  const double e = std::exp(1.0);
  CHECK(a(0, 0) == doctest::Approx(e / (e + 1.0)).epsilon(1e-14));
  CHECK(a(0, 1) == doctest::Approx(1.0 / (e + 1.0)).epsilon(1e-14));
}

TEST_CASE("prior variants on a hand example") {
  Matrix q(1, 2), k(2, 2);
  q << 1.0, 0.0;
  k << 1.0, 0.0, 0.0, 1.0;
  Matrix d2(1, 2);
  d2 << 0.01, 0.05;
  const auto prior = PriorMatrix::from_sq_dist(PriorDirection::CrossAB, d2, {1}, 0.1);
  // direct: logits (1 + s) * [1, 0]
  const double s0 = std::exp(-0.1);
  const Matrix direct = attention_weights(AttentionVariant::Direct, q, k, &prior, 0.1);
  CHECK(direct(0, 0) == doctest::Approx(std::exp(1 + s0) / (std::exp(1 + s0) + 1.0)).epsilon(1e-14));
  // probabilistic with sigma 0.02: logits [1 - 0.5, 0 - 2.5]
  const Matrix prob = attention_weights(AttentionVariant::Probabilistic, q, k, &prior, 0.02);
  CHECK(prob(0, 0) == doctest::Approx(1.0 / (1.0 + std::exp(-3.0))).epsilon(1e-14));
}

TEST_CASE("attention rows are distributions for every variant") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    const Eigen::Index n = 1 + static_cast<Eigen::Index>(rng() % 20);
    const Eigen::Index m = 1 + static_cast<Eigen::Index>(rng() % 20);
    const Matrix q = testing::random_matrix(rng, n, 8, -3, 3);
    const Matrix k = testing::random_matrix(rng, m, 8, -3, 3);
    const auto prior = random_prior(rng, n, m, 0.05);
    for (auto v : {AttentionVariant::Vanilla, AttentionVariant::Direct, AttentionVariant::Probabilistic}) {
      const Matrix a = attention_weights(v, q, k, &prior, 0.05);
      CHECK(a.minCoeff() >= 0.0);
      CHECK(max_abs(a.rowwise().sum() - Vector::Ones(n)) < 1e-12);
    }
  }
}

TEST_CASE("variant oracles") {
  std::mt19937_64 rng(12);
  for (int trial = 0; trial < 30; ++trial) {
    const Matrix q = testing::random_matrix(rng, 7, 5, -2, 2);
    const Matrix k = testing::random_matrix(rng, 9, 5, -2, 2);
    const double sigma = 0.05 + 0.2 * (trial % 3);
    const auto prior = random_prior(rng, 7, 9, sigma);
    const Matrix logits = q * k.transpose();

    const Matrix direct = attention_weights(AttentionVariant::Direct, q, k, &prior, sigma);
    CHECK(max_abs(direct - softmax_rows_oracle(logits.cwiseProduct((prior.s.array() + 1.0).matrix()))) < 1e-12);

    // Probabilistic attention reweights the vanilla kernel by s = exp(-d^2/sigma).
    const Matrix prob = attention_weights(AttentionVariant::Probabilistic, q, k, &prior, sigma);
    Matrix weighted = logits.array().exp() * prior.s.array();
    for (Eigen::Index i = 0; i < weighted.rows(); ++i) weighted.row(i) /= weighted.row(i).sum();
    CHECK(max_abs(prob - weighted) < 1e-12);
  }
}

TEST_CASE("priors that carry no information reduce to vanilla") {
  std::mt19937_64 rng(13);
  const Matrix q = testing::random_matrix(rng, 6, 4, -2, 2);
  const Matrix k = testing::random_matrix(rng, 5, 4, -2, 2);
  const Matrix vanilla = attention_weights(AttentionVariant::Vanilla, q, k, nullptr, 0.1);

  // Uniform distances: the probabilistic logits shift by a row constant only.
  const auto uniform = PriorMatrix::from_sq_dist(PriorDirection::SelfA, Matrix::Constant(6, 5, 0.3),
                                                 std::vector<char>(6, 1), 0.1);
  CHECK(max_abs(attention_weights(AttentionVariant::Probabilistic, q, k, &uniform, 0.1) - vanilla) < 1e-15);

  // Invalid rows: s = 0, so the direct variant equals vanilla.
  const auto invalid = PriorMatrix::from_sq_dist(PriorDirection::SelfA, Matrix::Constant(6, 5, 2.0),
                                                 std::vector<char>(6, 0), 0.1);
  CHECK(max_abs(invalid.s) == 0.0);
  CHECK(max_abs(attention_weights(AttentionVariant::Direct, q, k, &invalid, 0.1) - vanilla) < 1e-15);
  CHECK(max_abs(attention_weights(AttentionVariant::Probabilistic, q, k, &invalid, 0.1) - vanilla) < 1e-15);
}

TEST_CASE("attention errors") {
  std::mt19937_64 rng(14);
  const Matrix q = testing::random_matrix(rng, 3, 4);
  const Matrix k = testing::random_matrix(rng, 2, 4);
  const auto prior = random_prior(rng, 3, 2, 0.1);
  const auto wrong = random_prior(rng, 2, 3, 0.1);
  CHECK_ERROR_CODE(attention_weights(AttentionVariant::Vanilla, q, testing::random_matrix(rng, 2, 3), nullptr, 0.1),
                   ErrorCode::ShapeMismatch);
  CHECK_ERROR_CODE(attention_weights(AttentionVariant::Direct, q, k, nullptr, 0.1), ErrorCode::ShapeMismatch);
  CHECK_ERROR_CODE(attention_weights(AttentionVariant::Direct, q, k, &wrong, 0.1), ErrorCode::ShapeMismatch);
  CHECK_ERROR_CODE(attention_weights(AttentionVariant::Probabilistic, q, k, &prior, 0.0),
                   ErrorCode::NonPositiveSigma);
  CHECK_ERROR_CODE(message_pass(Matrix::Ones(3, 2), Matrix::Ones(3, 4)), ErrorCode::ShapeMismatch);
}

TEST_CASE("message passing is a weighted mean of values") {
  Matrix alpha(2, 3), v(3, 2);
  alpha << 0.5, 0.5, 0.0, 0.1, 0.2, 0.7;
  v << 1, 2, 3, 4, 5, 6;
  const Matrix m = message_pass(alpha, v);
  CHECK(m(0, 0) == doctest::Approx(2.0));
  CHECK(m(0, 1) == doctest::Approx(3.0));
  CHECK(m(1, 0) == doctest::Approx(0.1 + 0.6 + 3.5));
  CHECK(m(1, 1) == doctest::Approx(0.2 + 0.8 + 4.2));
}

TEST_CASE("parameters") {
  const auto c = small_config(AttentionVariant::Probabilistic, 8, 3);
  const auto p = ModelParams::initialize(c, 5);
  std::set<std::string> names;
  std::size_t count = 0;
  p.for_each([&](const std::string& name, const Matrix& m) {
    names.insert(name);
    count += static_cast<std::size_t>(m.size());
  });
  CHECK(count == p.parameter_count());
  CHECK(names.count("dustbin") == 1);
  CHECK(names.count("layers.2.log_sigma") == 1);
  CHECK(names.count("layers.0.cross.query.W") == 1);

  // encoder 2-8-8-D, per layer 2 blocks of 3 D x D maps and a 2D-2D-D merge,
  // projection D x D, log sigma per layer, dustbin
  const std::size_t D = 8;
  const std::size_t encoder = (2 * 8 + 8) + (8 * 8 + 8) + (8 * D + D);
  const std::size_t block = 3 * (D * D + D) + (2 * D * 2 * D + 2 * D) + (2 * D * D + D);
  CHECK(p.parameter_count() == encoder + 3 * (2 * block + 1) + (D * D + D) + 1);

  const auto q = ModelParams::initialize(c, 5);
  const auto r = ModelParams::initialize(c, 6);
  CHECK(q.projection.W == p.projection.W);
  CHECK(r.projection.W != p.projection.W);
  CHECK(p.dustbin(0, 0) == c.dustbin_init);
  CHECK(p.layers[1].log_sigma(0, 0) == doctest::Approx(std::log(c.sigma_init)));
  const double bound = 1.0 / std::sqrt(8.0);
  CHECK(p.layers[0].self_block.query.W.cwiseAbs().maxCoeff() <= bound);
  CHECK(max_abs(p.layers[0].self_block.query.b) == 0.0);
}

TEST_CASE("layer forward against a plain oracle") {
  std::mt19937_64 rng(15);
  for (auto variant : {AttentionVariant::Vanilla, AttentionVariant::Direct, AttentionVariant::Probabilistic}) {
    auto p = ModelParams::initialize(small_config(variant, 6, 1), 21);
    p.layers[0].log_sigma(0, 0) = std::log(0.2);
    p.for_each([&](const std::string& name, Matrix& m) {
      if (name.ends_with(".b")) m = testing::random_matrix(rng, m.rows(), m.cols(), -0.2, 0.2);
    });
    const Matrix src = testing::random_matrix(rng, 5, 6);
    const Matrix ctx = testing::random_matrix(rng, 4, 6);
    const auto prior = random_prior(rng, 5, 4, 0.2);
    const Matrix out = layer_forward(p, 0, gnn::LayerMode::Cross, src, ctx, &prior);

    const AttentionBlock& b = p.layers[0].cross_block;
    const Matrix qk = linear_oracle(b.query, src) * linear_oracle(b.key, ctx).transpose();
    Matrix alpha;
    if (variant == AttentionVariant::Vanilla) alpha = softmax_rows_oracle(qk);
    if (variant == AttentionVariant::Direct) alpha = softmax_rows_oracle(qk.cwiseProduct((prior.s.array() + 1.0).matrix()));
    if (variant == AttentionVariant::Probabilistic) alpha = softmax_rows_oracle(qk - prior.sq_dist / 0.2);
    const Matrix m = alpha * linear_oracle(b.value, ctx);
    Matrix cat(5, 12);
    cat << src, m;
    CHECK(max_abs(out - (src + mlp_oracle(b.merge, cat))) < 1e-12);
  }
}

TEST_CASE("encoder adds an MLP of positions") {
  std::mt19937_64 rng(16);
  auto c = small_config(AttentionVariant::Vanilla, 6, 1);
  const auto p = ModelParams::initialize(c, 3);
  const Eigen::MatrixX2d pos = testing::random_matrix(rng, 4, 2, 0, 1);
  const Matrix desc = testing::random_matrix(rng, 4, 6);
  CHECK(max_abs(encode_positions(p, pos, desc) - (desc + mlp_oracle(p.encoder, Matrix(pos)))) < 1e-13);
  c.position_encoder = false;
  const auto plain = ModelParams::initialize(c, 3);
  CHECK(encode_positions(plain, pos, desc) == desc);
  CHECK_ERROR_CODE(encode_positions(p, pos, testing::random_matrix(rng, 4, 5)), ErrorCode::ShapeMismatch);
}

TEST_CASE("a zero model with identity projection passes descriptors through") {
  auto p = ModelParams::zeros(small_config(AttentionVariant::Probabilistic, 16, 2));
  p.projection.W = Matrix::Identity(16, 16);
  SynthConfig sc;
  sc.n_points = 12;
  const auto s = synth_scene(sc, 4);
  const auto priors = compute_priors(s.data, s.T_ab_prior, 0.1);
  const auto out = forward(p, s.data.a.normalized_positions(s.data.K_a), s.data.a.descriptors,
                           s.data.b.normalized_positions(s.data.K_b), s.data.b.descriptors, priors);
  CHECK(out.a == s.data.a.descriptors);
  CHECK(out.b == s.data.b.descriptors);
}

TEST_CASE("forward symmetries") {
  SynthConfig sc;
  sc.n_points = 20;
  sc.descriptor_dim = 8;
  const auto s = synth_scene(sc, 9);
  const PairData& d = s.data;
  const auto pos_a = d.a.normalized_positions(d.K_a);
  const auto pos_b = d.b.normalized_positions(d.K_b);

  for (auto variant : {AttentionVariant::Vanilla, AttentionVariant::Direct, AttentionVariant::Probabilistic}) {
    CAPTURE(to_string(variant));
    const auto p = ModelParams::initialize(small_config(variant, 8, 2), 31);
    const auto priors = compute_priors(d, s.T_ab_prior, 0.1);
    const auto out = forward(p, pos_a, d.a.descriptors, pos_b, d.b.descriptors, priors);

    SUBCASE("swapping the images swaps the outputs") {
      const auto swapped = forward(p, pos_b, d.b.descriptors, pos_a, d.a.descriptors, priors.swapped());
      CHECK(max_abs(swapped.a - out.b) < 1e-12);
      CHECK(max_abs(swapped.b - out.a) < 1e-12);
    }

    SUBCASE("permuting keypoints permutes the outputs") {
      std::mt19937_64 rng(variant == AttentionVariant::Vanilla ? 1 : 2);
      std::vector<Eigen::Index> pa(static_cast<std::size_t>(d.a.size()));
      std::vector<Eigen::Index> pb(static_cast<std::size_t>(d.b.size()));
      std::iota(pa.begin(), pa.end(), 0);
      std::iota(pb.begin(), pb.end(), 0);
      std::shuffle(pa.begin(), pa.end(), rng);
      std::shuffle(pb.begin(), pb.end(), rng);
      PairData permuted = d;
      permuted.a = d.a.permuted(pa);
      permuted.b = d.b.permuted(pb);
      const auto pp = compute_priors(permuted, s.T_ab_prior, 0.1);
      const auto po = forward(p, permuted.a.normalized_positions(d.K_a), permuted.a.descriptors,
                              permuted.b.normalized_positions(d.K_b), permuted.b.descriptors, pp);
      for (std::size_t i = 0; i < pa.size(); ++i) {
        CHECK(max_abs(po.a.row(static_cast<Eigen::Index>(i)) - out.a.row(pa[i])) < 1e-12);
      }
      for (std::size_t i = 0; i < pb.size(); ++i) {
        CHECK(max_abs(po.b.row(static_cast<Eigen::Index>(i)) - out.b.row(pb[i])) < 1e-12);
      }
    }
  }

  SUBCASE("priors of the wrong size are rejected") {
    const auto p = ModelParams::initialize(small_config(AttentionVariant::Vanilla, 8, 1), 1);
    SynthConfig smaller = sc;
    smaller.n_points = 10;
    const auto other = synth_scene(smaller, 9);
    const auto priors = compute_priors(other.data, other.T_ab_prior, 0.1);
    CHECK_ERROR_CODE(forward(p, pos_a, d.a.descriptors, pos_b, d.b.descriptors, priors),
                     ErrorCode::ShapeMismatch);
  }
}

TEST_CASE("tape and plain forward agree") {
  const auto s = synth_scene(SynthConfig{}, 2);
  const auto p = ModelParams::initialize(small_config(AttentionVariant::Probabilistic, 16, 2), 8);
  const auto priors = compute_priors(s.data, s.T_ab_prior, 0.1);
  const auto pos_a = s.data.a.normalized_positions(s.data.K_a);
  const auto pos_b = s.data.b.normalized_positions(s.data.K_b);
  ad::Tape tape;
  const auto taped = gnn::forward(tape, p, pos_a, s.data.a.descriptors, pos_b, s.data.b.descriptors, priors);
  const auto plain = forward(p, pos_a, s.data.a.descriptors, pos_b, s.data.b.descriptors, priors);
  CHECK(taped.a.value() == plain.a);
  CHECK(taped.b.value() == plain.b);
}
