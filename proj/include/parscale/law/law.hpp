#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace parscale {

enum class LawFamily { logarithmic, theoretical };

std::string to_string(LawFamily f);
// Accepts "logarithmic"/"log" and "theoretical"/"theo".
LawFamily parse_law_family(const std::string& name);

struct LawParams {
  LawFamily family = LawFamily::logarithmic;
  double A = 1.0;
  double alpha = 1.0;
  double E = 0.0;
  double k = 0.0;    // logarithmic only
  double rho = 1.0;  // theoretical only

  bool operator==(const LawParams&) const = default;
};

struct LawObservation {
  double N = 0.0;  // non-embedding parameters
  double P = 1.0;  // parallel streams
  double loss = 0.0;

  bool operator==(const LawObservation&) const = default;
};

// logarithmic: (A / (N (k ln P + 1)))^alpha + E
// theoretical: (A / N)^alpha ((P - 1) rho + 1) / P + E
// Throws InputError for N <= 0 or P < 1.
double eval_law(const LawParams& params, double N, double P);

double huber(double residual, double delta);

// 1 - SS_res / SS_tot over the raw values. Throws InputError on empty or
// unequal inputs and on zero variance in `observed`.
double r_squared(std::span<const double> observed, std::span<const double> predicted);

// Sum over observations of huber(log pred - log observed, delta).
double law_objective(const LawParams& params, std::span<const LawObservation> obs,
                     double delta);

struct LawFitResult {
  LawParams params;
  double huber_objective = 0.0;
  double r_squared = 0.0;
  std::vector<double> predictions;  // in input order
  std::size_t starts = 0;
  std::size_t converged_starts = 0;
};

struct FitOptions {
  double delta = 1e-3;
  std::size_t max_iterations = 2000;
  double gradient_tolerance = 1e-11;
};

// Quasi-Newton (L-BFGS) descent on law_objective from every point of the
// initialization grid; parameters are optimized as logs (logit for rho) so
// positivity holds throughout. Returns the lowest converged local minimum,
// ties broken by lexicographic parameter order.
//
// Throws ContractError for fewer than 5 observations, IdentifiabilityError
// naming k or rho when every observation shares one P, InputError for
// invalid observations and ConvergenceError (with the best objective seen)
// when no start converges.
LawFitResult fit_law(std::span<const LawObservation> observations, LawFamily family,
                     const FitOptions& options = {});

// Predictions, objective and R^2 of given params over observations.
LawFitResult evaluate_fit(const LawParams& params,
                          std::span<const LawObservation> observations, double delta);

// Starting points for fit_law: E in {e^-1, e^-0.5, 1}, A in e^{-4,-2,0,2,4} 1e9,
// alpha in {0, .5, 1, 1.5, 2}, and k in {.2, .4, .6, .9} or rho in
// {.1, .3, .5, .7, .9}.
std::vector<LawParams> initialization_grid(LawFamily family);

struct ContourPoint {
  double N = 0.0;
  double P = 0.0;
  double loss = 0.0;
};

// Row-major over (N, P): every N paired with every P.
std::vector<ContourPoint> contour_grid(const LawParams& params,
                                       std::span<const double> n_values,
                                       std::span<const double> p_values);

// Log-spaced axes with `n_points` / `p_points` values including both ends.
std::vector<ContourPoint> contour_grid(const LawParams& params, double n_min,
                                       double n_max, std::size_t n_points,
                                       double p_min, double p_max,
                                       std::size_t p_points);

struct DiversityEstimate {
  double mean_square = 0.0;     // E[(mean of P residuals)^2], sampled
  double standard_error = 0.0;  // of mean_square
  double analytic = 0.0;        // error_scale ((P - 1) rho + 1) / P
};

// P equicorrelated Gaussian residuals with variance error_scale and pairwise
// correlation rho, averaged across streams. Sampling is split into fixed
// chunks with their own seeds, so the estimate does not depend on the thread
// count. Throws ContractError for rho outside [-1/(P-1), 1] or a covariance
// that is not positive semidefinite.
DiversityEstimate mc_diversity_oracle(std::size_t P, double rho, double error_scale,
                                      std::size_t n_samples, std::uint64_t seed);

// CSV with header N,P,loss (extra trailing columns are ignored). Throws
// InputError naming the line of the first malformed row.
std::vector<LawObservation> parse_observations_csv(const std::string& text,
                                                   const std::string& origin = "<csv>");
std::vector<LawObservation> read_observations_csv(const std::filesystem::path& path);

// JSON text: family, params, huber, r_squared, predictions.
std::string fit_to_json(const LawFitResult& fit,
                        std::span<const LawObservation> observations);
LawParams params_from_json(const std::string& json_text);

std::string contour_to_csv(std::span<const ContourPoint> grid);

}  // namespace parscale
