#include <cmath>
#include <random>
#include <vector>

#include <Eigen/Dense>

#include "parscale/common/errors.hpp"
#include "parscale/common/parallel.hpp"
#include "parscale/law/law.hpp"

namespace parscale {

DiversityEstimate mc_diversity_oracle(std::size_t P, double rho, double error_scale,
                                      std::size_t n_samples, std::uint64_t seed) {
  if (P == 0) throw ContractError("mc_diversity_oracle: P must be at least 1");
  if (n_samples < 2) throw ContractError("mc_diversity_oracle: need at least 2 samples");
  if (!(error_scale > 0.0)) throw ContractError("mc_diversity_oracle: error_scale must be positive");
  const double lower = P > 1 ? -1.0 / static_cast<double>(P - 1) : -1.0;
  if (!(rho >= lower && rho <= 1.0)) {
    throw ContractError("mc_diversity_oracle: rho = " + std::to_string(rho) +
                        " is not a valid correlation for " + std::to_string(P) +
                        " equicorrelated variables (needs " + std::to_string(lower) +
                        " <= rho <= 1)");
  }

  const Eigen::Index n = static_cast<Eigen::Index>(P);
  Eigen::MatrixXd cov = Eigen::MatrixXd::Constant(n, n, rho * error_scale);
  cov.diagonal().setConstant(error_scale);
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
  if (eig.info() != Eigen::Success) {
    throw ContractError("mc_diversity_oracle: eigendecomposition failed");
  }
  Eigen::VectorXd lambda = eig.eigenvalues();
  const double tol = 1e-12 * error_scale * static_cast<double>(P);
  if (lambda.minCoeff() < -tol) {
    throw ContractError("mc_diversity_oracle: covariance is not positive semidefinite");
  }
  lambda = lambda.cwiseMax(0.0);
  // x = V sqrt(L) z; only the stream average is needed, so fold the row
  // mean of V sqrt(L) into a single coefficient vector.
  const Eigen::MatrixXd factor = eig.eigenvectors() * lambda.cwiseSqrt().asDiagonal();
  const Eigen::VectorXd mean_row = factor.colwise().mean().transpose();

  constexpr std::size_t kChunks = 64;
  std::vector<double> sums(kChunks, 0.0), sums_sq(kChunks, 0.0);
  parallel_for(kChunks, [&](std::size_t c) {
    const std::size_t begin = n_samples * c / kChunks;
    const std::size_t end = n_samples * (c + 1) / kChunks;
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(c)};
    std::mt19937_64 rng(seq);
    std::normal_distribution<double> normal(0.0, 1.0);
    double s = 0.0, s2 = 0.0;
    for (std::size_t i = begin; i < end; ++i) {
      double avg = 0.0;
      for (Eigen::Index j = 0; j < n; ++j) avg += mean_row[j] * normal(rng);
      const double sq = avg * avg;
      s += sq;
      s2 += sq * sq;
    }
    sums[c] = s;
    sums_sq[c] = s2;
  });
  double s = 0.0, s2 = 0.0;
  for (std::size_t c = 0; c < kChunks; ++c) {
    s += sums[c];
    s2 += sums_sq[c];
  }
  const double m = static_cast<double>(n_samples);
  DiversityEstimate out;
  out.mean_square = s / m;
  const double var = std::max(0.0, (s2 - m * out.mean_square * out.mean_square) / (m - 1.0));
  out.standard_error = std::sqrt(var / m);
  out.analytic = error_scale * ((static_cast<double>(P) - 1.0) * rho + 1.0) /
                 static_cast<double>(P);
  return out;
}

}  // namespace parscale
