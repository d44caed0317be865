#include "busuq/gaussian_fit.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>

#include "busuq/normal.hpp"

namespace busuq::gaussian {

double fit_objective(double mean, double sigma, std::span<const double> quantiles, std::span<const double> levels) {
  double cost = 0.0;
  for (std::size_t i = 0; i < quantiles.size(); ++i) {
    const double r = normal_cdf((quantiles[i] - mean) / sigma) - levels[i];
    cost += r * r;
  }
  return cost;
}

GaussianLinkFit fit_sigma(double mean, std::span<const double> quantiles, std::span<const double> levels) {
  require(quantiles.size() == levels.size(), "fit_sigma: quantile and level counts differ");
  require(quantiles.size() >= 2, "fit_sigma: at least two quantiles are needed");
  for (std::size_t i = 0; i < levels.size(); ++i) {
    require(levels[i] > 0.0 && levels[i] < 1.0, "fit_sigma: levels must lie in (0,1)");
    require(std::isfinite(quantiles[i]), "fit_sigma: non-finite quantile");
    if (i > 0) require(quantiles[i] >= quantiles[i - 1], "fit_sigma: quantiles must be sorted ascending");
  }
  GaussianLinkFit fit;
  fit.mean = mean;
  fit.levels.assign(levels.begin(), levels.end());
  const std::size_t J = quantiles.size();
  std::vector<double> d(J), z(J);
  for (std::size_t i = 0; i < J; ++i) {
    d[i] = quantiles[i] - mean;
    z[i] = normal_quantile(levels[i]);
  }
  if (quantiles.front() == quantiles.back()) {
    fit.sigma = kSigmaFloor;
    fit.residual = std::sqrt(fit_objective(mean, fit.sigma, quantiles, levels) / static_cast<double>(J));
    return fit;
  }

  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < J; ++i) {
    num += z[i] * d[i];
    den += z[i] * z[i];
  }
  double sigma = den > 0.0 ? num / den : 0.0;
  if (!(sigma > kSigmaFloor)) {
    // Probit slope unusable (quantiles mostly on the wrong side of the mean);
    // start from the spread of the quantiles instead.
    sigma = std::max(kSigmaFloor, (quantiles.back() - quantiles.front()) / 2.0);
  }

  auto cost_and_derivs = [&](double s, double& g, double& h) {
    double c = 0.0;
    g = 0.0;
    h = 0.0;
    for (std::size_t i = 0; i < J; ++i) {
      const double u = d[i] / s;
      const double r = normal_cdf(u) - levels[i];
      const double jac = -normal_pdf(u) * u / s;  // dr/dsigma
      c += r * r;
      g += jac * r;
      h += jac * jac;
    }
    return c;
  };

  double g = 0.0, h = 0.0;
  double cost = cost_and_derivs(sigma, g, h);
  double lambda = 1e-3;
  bool converged = false;
  int it = 0;
  for (; it < 100; ++it) {
    if (h <= 0.0 || std::abs(g) <= 1e-15 * std::max(1.0, cost)) {
      converged = true;
      break;
    }
    const double step = -g / (h * (1.0 + lambda));
    const double candidate = std::max(kSigmaFloor, sigma + step);
    double g2 = 0.0, h2 = 0.0;
    const double c2 = cost_and_derivs(candidate, g2, h2);
    if (c2 <= cost) {
      const double moved = std::abs(candidate - sigma);
      sigma = candidate;
      const double drop = cost - c2;
      cost = c2;
      g = g2;
      h = h2;
      lambda = std::max(lambda / 10.0, 1e-12);
      if (moved <= 1e-12 * sigma || drop <= 1e-18) {
        converged = true;
        break;
      }
      if (sigma == kSigmaFloor && g > 0.0) {
        converged = true;
        break;
      }
    } else {
      lambda *= 10.0;
      if (lambda > 1e12) {
        converged = true;  // no descent direction left at machine precision
        break;
      }
    }
  }
  fit.sigma = std::max(kSigmaFloor, sigma);
  fit.iterations = it;
  fit.converged = converged;
  fit.residual = std::sqrt(cost / static_cast<double>(J));
  return fit;
}

double draw_truncated(double mean, double sigma, Rng& rng) {
  std::normal_distribution<double> n(mean, sigma);
  double x = n(rng);
  if (x < kTruncationFloor) x = n(rng);
  return std::max(x, kTruncationFloor);
}

std::vector<double> sample_link(const GaussianLinkFit& fit, int n, Rng& rng) {
  require(n >= 1, "sample_link: n must be >= 1");
  std::vector<double> out(static_cast<std::size_t>(n));
  for (auto& v : out) v = draw_truncated(fit.mean, fit.sigma, rng);
  return out;
}

void write_fits_csv(const std::filesystem::path& path, std::span<const FitRow> rows) {
  std::ofstream out(path);
  require(static_cast<bool>(out), "cannot write " + path.string());
  out << "link,horizon,mean_s,sigma_s,residual\n";
  char buf[160];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%d,%d,%.6f,%.6f,%.8f\n", r.link, r.horizon, r.fit.mean, r.fit.sigma, r.fit.residual);
    out << buf;
  }
}

}  // namespace busuq::gaussian
