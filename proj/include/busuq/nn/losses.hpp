#pragma once

#include <cmath>
#include <limits>

#include "busuq/nn/tape.hpp"
#include "busuq/normal.hpp"

namespace busuq::nn {

// Sum over masked cells of (target - pred)^2.
template <typename Scalar>
Var<Scalar> masked_l2(Var<Scalar> pred, const Matrix<Scalar>& target, const Matrix<Scalar>& mask,
                      const std::string& layer = "l2_loss") {
  detail::check(pred.rows() == target.rows() && pred.cols() == target.cols() && mask.rows() == target.rows() &&
                    mask.cols() == target.cols(),
                layer, "prediction, target and mask shapes differ");
  Matrix<Scalar> resid = (target - pred.value()).cwiseProduct(mask);
  Matrix<Scalar> out(1, 1);
  out(0, 0) = static_cast<Scalar>(resid.template cast<double>().squaredNorm());
  const int ip = pred.id;
  return pred.tape->push(std::move(out), [ip, resid = std::move(resid)](Tape<Scalar>& t, int self) {
    t.grad(ip) -= (Scalar(2) * t.grad(self)(0, 0)) * resid;
  });
}

// Sum over masked cells of max(p*r, (p-1)*r), r = target - q.
template <typename Scalar>
Var<Scalar> masked_pinball(Var<Scalar> q, const Matrix<Scalar>& target, const Matrix<Scalar>& mask, double p,
                           const std::string& layer = "pinball_loss") {
  detail::check(p > 0.0 && p < 1.0, layer, "quantile level must lie in (0,1)");
  detail::check(q.rows() == target.rows() && q.cols() == target.cols() && mask.rows() == target.rows() &&
                    mask.cols() == target.cols(),
                layer, "prediction, target and mask shapes differ");
  const Scalar ps = static_cast<Scalar>(p);
  double total = 0.0;
  Matrix<Scalar> slope(q.rows(), q.cols());  // d loss / d q per cell
  for (Index i = 0; i < slope.size(); ++i) {
    const Scalar m = mask.data()[i];
    const Scalar r = target.data()[i] - q.value().data()[i];
    total += static_cast<double>(m) * std::max(static_cast<double>(ps * r), static_cast<double>((ps - 1) * r));
    slope.data()[i] = m * (r >= 0 ? -ps : Scalar(1) - ps);
  }
  Matrix<Scalar> out(1, 1);
  out(0, 0) = static_cast<Scalar>(total);
  const int iq = q.id;
  return q.tape->push(std::move(out), [iq, slope = std::move(slope)](Tape<Scalar>& t, int self) {
    t.grad(iq) += t.grad(self)(0, 0) * slope;
  });
}

// Negative Gaussian log-likelihood summed over masked cells with one shared
// log-variance (1x1 node).
template <typename Scalar>
Var<Scalar> masked_gaussian_nll(Var<Scalar> pred, const Matrix<Scalar>& target, const Matrix<Scalar>& mask,
                                Var<Scalar> log_variance, const std::string& layer = "gaussian_nll") {
  detail::check(pred.rows() == target.rows() && pred.cols() == target.cols() && mask.rows() == target.rows() &&
                    mask.cols() == target.cols(),
                layer, "prediction, target and mask shapes differ");
  detail::check(log_variance.rows() == 1 && log_variance.cols() == 1, layer, "log-variance must be 1x1");
  const double lv = static_cast<double>(log_variance.scalar());
  const double inv_var = std::exp(-lv);
  Matrix<Scalar> resid = (target - pred.value()).cwiseProduct(mask);
  const double n = mask.template cast<double>().sum();
  const double sq = resid.template cast<double>().squaredNorm();
  Matrix<Scalar> out(1, 1);
  out(0, 0) = static_cast<Scalar>(n * (kLogSqrt2Pi + 0.5 * lv) + 0.5 * sq * inv_var);
  const int ip = pred.id, il = log_variance.id;
  return pred.tape->push(std::move(out), [ip, il, resid = std::move(resid), n, sq, inv_var](Tape<Scalar>& t,
                                                                                          int self) {
    const Scalar g = t.grad(self)(0, 0);
    t.grad(ip) -= (g * static_cast<Scalar>(inv_var)) * resid;
    t.grad(il)(0, 0) += g * static_cast<Scalar>(0.5 * n - 0.5 * sq * inv_var);
  });
}

// w = mu + softplus(rho) * eps
template <typename Scalar>
Var<Scalar> reparameterize(Var<Scalar> mu, Var<Scalar> rho, const Matrix<Scalar>& eps,
                           const std::string& layer = "reparameterize") {
  detail::check(mu.rows() == rho.rows() && mu.cols() == rho.cols() && eps.rows() == mu.rows() &&
                    eps.cols() == mu.cols(),
                layer, "mu, rho and noise shapes differ");
  const Matrix<Scalar> sigma = rho.value().unaryExpr([](Scalar x) { return detail::softplus(x); });
  Matrix<Scalar> w = mu.value() + sigma.cwiseProduct(eps);
  const int im = mu.id, ir = rho.id;
  return mu.tape->push(std::move(w), [im, ir, eps](Tape<Scalar>& t, int self) {
    const auto& g = t.grad(self);
    t.grad(im) += g;
    const auto s = t.value(ir).unaryExpr([](Scalar x) { return detail::sigmoid(x); });
    t.grad(ir) += g.cwiseProduct(eps).cwiseProduct(s);
  });
}

// Sum of log N(w | mu, softplus(rho)^2).
template <typename Scalar>
Var<Scalar> log_variational_density(Var<Scalar> w, Var<Scalar> mu, Var<Scalar> rho,
                                    const std::string& layer = "log_q") {
  detail::check(w.rows() == mu.rows() && w.cols() == mu.cols() && rho.rows() == mu.rows() &&
                    rho.cols() == mu.cols(),
                layer, "w, mu and rho shapes differ");
  double total = 0.0;
  for (Index i = 0; i < w.value().size(); ++i) {
    const double s = static_cast<double>(detail::softplus(rho.value().data()[i]));
    total += normal_log_pdf(static_cast<double>(w.value().data()[i]), static_cast<double>(mu.value().data()[i]), s);
  }
  Matrix<Scalar> out(1, 1);
  out(0, 0) = static_cast<Scalar>(total);
  const int iw = w.id, im = mu.id, ir = rho.id;
  return w.tape->push(std::move(out), [iw, im, ir](Tape<Scalar>& t, int self) {
    const Scalar g = t.grad(self)(0, 0);
    const auto& wv = t.value(iw);
    const auto& mv = t.value(im);
    const auto& rv = t.value(ir);
    auto& gw = t.grad(iw);
    auto& gm = t.grad(im);
    auto& gr = t.grad(ir);
    for (Index i = 0; i < wv.size(); ++i) {
      const Scalar s = detail::softplus(rv.data()[i]);
      const Scalar d = wv.data()[i] - mv.data()[i];
      const Scalar inv_s2 = Scalar(1) / (s * s);
      gw.data()[i] -= g * d * inv_s2;
      gm.data()[i] += g * d * inv_s2;
      gr.data()[i] += g * (-Scalar(1) / s + d * d * inv_s2 / s) * detail::sigmoid(rv.data()[i]);
    }
  });
}

struct MixturePrior {
  double pi = 1.0;
  double sigma1 = 1.0;
  double sigma2 = 0.01;
};

// log(pi N(w|0,s1^2) + (1-pi) N(w|0,s2^2)) for one weight and its derivative.
inline std::pair<double, double> log_mixture_density(double w, const MixturePrior& prior) {
  const double a = std::log(prior.pi) + normal_log_pdf(w, 0.0, prior.sigma1);
  if (prior.pi >= 1.0) return {a, -w / (prior.sigma1 * prior.sigma1)};
  const double b = std::log1p(-prior.pi) + normal_log_pdf(w, 0.0, prior.sigma2);
  const double m = std::max(a, b);
  const double lse = m + std::log(std::exp(a - m) + std::exp(b - m));
  const double r1 = std::exp(a - lse), r2 = std::exp(b - lse);
  const double d = -w * (r1 / (prior.sigma1 * prior.sigma1) + r2 / (prior.sigma2 * prior.sigma2));
  return {lse, d};
}

template <typename Scalar>
Var<Scalar> log_mixture_prior(Var<Scalar> w, const MixturePrior& prior) {
  double total = 0.0;
  Matrix<Scalar> dw(w.rows(), w.cols());
  for (Index i = 0; i < w.value().size(); ++i) {
    const auto [lp, d] = log_mixture_density(static_cast<double>(w.value().data()[i]), prior);
    total += lp;
    dw.data()[i] = static_cast<Scalar>(d);
  }
  Matrix<Scalar> out(1, 1);
  out(0, 0) = static_cast<Scalar>(total);
  const int iw = w.id;
  return w.tape->push(std::move(out), [iw, dw = std::move(dw)](Tape<Scalar>& t, int self) {
    t.grad(iw) += t.grad(self)(0, 0) * dw;
  });
}

}  // namespace busuq::nn
