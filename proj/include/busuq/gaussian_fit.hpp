#pragma once

#include <filesystem>
#include <span>
#include <vector>

#include "busuq/common.hpp"

namespace busuq::gaussian {

inline constexpr double kSigmaFloor = 0.1;    // seconds
inline constexpr double kTruncationFloor = 1.0;  // seconds

struct GaussianLinkFit {
  double mean = 0.0;      // seconds
  double sigma = 1.0;     // seconds
  double residual = 0.0;  // RMS probability error at the fitted sigma
  std::vector<double> levels;
  int iterations = 0;
  bool converged = true;
};

// Least-squares fit of sigma so that Phi((q_i - mean) / sigma) matches p_i,
// by Levenberg-Marquardt started from the probit-regression estimate.
GaussianLinkFit fit_sigma(double mean, std::span<const double> quantiles, std::span<const double> levels);

// Objective minimized by fit_sigma, exposed for oracles.
double fit_objective(double mean, double sigma, std::span<const double> quantiles, std::span<const double> levels);

// One N(mean, sigma^2) draw; values below 1 s are redrawn once, then clamped.
double draw_truncated(double mean, double sigma, Rng& rng);
std::vector<double> sample_link(const GaussianLinkFit& fit, int n, Rng& rng);

struct FitRow {
  int link = 0;
  int horizon = 1;
  GaussianLinkFit fit;
};
// CSV `link,horizon,mean_s,sigma_s,residual`.
void write_fits_csv(const std::filesystem::path& path, std::span<const FitRow> rows);

}  // namespace busuq::gaussian
