#include "kpm/pipeline.hpp"

#include <chrono>

namespace kpm {

namespace {

using Clock = std::chrono::steady_clock;

double elapsed_ms(Clock::time_point since) {
  return std::chrono::duration<double, std::milli>(Clock::now() - since).count();
}

}  // namespace

PairPriors compute_priors(const PairData& pair, const MotionPrior& prior, double sigma) {
  if (const auto* pose = std::get_if<Pose>(&prior)) {
    return compute_pair_priors(pair.K_a, pair.K_b, *pose, pair.a, pair.b, sigma);
  }
  return compute_pair_priors(pair.K_a, pair.K_b, std::get<Homography>(prior), pair.a, pair.b,
                             sigma);
}

ad::Var build_log_assignment(ad::Tape& tape, const ModelParams& params, const PairData& pair,
                             const PairPriors& priors, const SinkhornOptions& sinkhorn) {
  const auto desc = gnn::forward(tape, params, pair.a.normalized_positions(pair.K_a),
                                 pair.a.descriptors, pair.b.normalized_positions(pair.K_b),
                                 pair.b.descriptors, priors);
  const ad::Var scores = ad::augment_dustbin(ad::matmul_nt(desc.a, desc.b),
                                             tape.parameter(params.dustbin));
  const Eigen::Index n_a = pair.a.size();
  const Eigen::Index n_b = pair.b.size();
  return ad::log_sinkhorn(scores, dustbin_row_marginal(n_a, n_b).array().log().matrix(),
                          dustbin_col_marginal(n_a, n_b).array().log().matrix(),
                          sinkhorn.iterations, sinkhorn.temperature);
}

MatchResult match_pair(const ModelParams& params, const PairData& pair, const PairPriors& priors,
                       const MatchOptions& options) {
  MatchResult out;
  ad::Tape tape(false);

  auto t0 = Clock::now();
  const auto desc = gnn::forward(tape, params, pair.a.normalized_positions(pair.K_a),
                                 pair.a.descriptors, pair.b.normalized_positions(pair.K_b),
                                 pair.b.descriptors, priors);
  out.timings.gnn_ms = elapsed_ms(t0);

  t0 = Clock::now();
  const ad::Var scores = ad::augment_dustbin(ad::matmul_nt(desc.a, desc.b),
                                             tape.parameter(params.dustbin));
  const Eigen::Index n_a = pair.a.size();
  const Eigen::Index n_b = pair.b.size();
  const ad::Var log_p = ad::log_sinkhorn(
      scores, dustbin_row_marginal(n_a, n_b).array().log().matrix(),
      dustbin_col_marginal(n_a, n_b).array().log().matrix(), options.sinkhorn.iterations,
      options.sinkhorn.temperature);
  out.P = log_p.value().array().exp().matrix();
  out.timings.sinkhorn_ms = elapsed_ms(t0);

  t0 = Clock::now();
  out.matches = recover_matches(out.P, options.confidence_threshold);
  out.timings.recovery_ms = elapsed_ms(t0);
  return out;
}

MatchResult match_pair(const ModelParams& params, const PairData& pair, const MotionPrior& prior,
                       const MatchOptions& options) {
  const auto t0 = Clock::now();
  const PairPriors priors = compute_priors(pair, prior, options.prior_sigma);
  const double prior_ms = elapsed_ms(t0);
  MatchResult out = match_pair(params, pair, priors, options);
  out.timings.prior_ms = prior_ms;
  return out;
}

}  // namespace kpm
