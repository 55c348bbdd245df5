#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <stdexcept>
#include <vector>

#include "scenegen/geometry.hpp"
#include "scenegen/rng.hpp"

namespace scenegen {

inline constexpr double kLogTwoPi = 1.8378770664093454835606594728112;
inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// Clamp bounds for log-scale / tanh-scale raw parameters. Outside the bounds
// the transform saturates (zero gradient); kappa is capped at 500 which is the
// range the Bessel evaluation is guaranteed accurate on.
inline constexpr double kLogKappaMin = -12.0;
inline constexpr double kLogKappaMax = 6.2146080984221916;  // log(500)
inline constexpr double kLogSigmaMin = -7.0;
inline constexpr double kLogSigmaMax = 8.0;
inline constexpr double kRhoRawClamp = 8.0;
inline constexpr double kBiternionEps = 1e-12;

inline double log_sum_exp(std::span<const double> v) {
  double best = kNegInf;
  for (double x : v) best = std::max(best, x);
  if (best == kNegInf) return kNegInf;
  double acc = 0.0;
  for (double x : v) acc += std::exp(x - best);
  return best + std::log(acc);
}

inline std::vector<double> softmax(std::span<const double> logits) {
  double best = kNegInf;
  for (double x : logits) best = std::max(best, x);
  std::vector<double> out(logits.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] - best);
    acc += out[i];
  }
  for (double& x : out) x /= acc;
  return out;
}

// ---------------------------------------------------------------------------
// Modified Bessel function of order 0 (and the I1/I0 ratio), evaluated in
// log space from the power series with exponential scaling; accurate for the
// whole supported range kappa in [0, 500].

inline double log_bessel_i0(double kappa) {
  if (kappa < 0.0) throw std::invalid_argument("log_bessel_i0: kappa must be non-negative");
  if (kappa == 0.0) return 0.0;
  if (kappa <= 1.0) {
    // Direct series keeps relative precision where log I0 is near zero.
    const double x = 0.25 * kappa * kappa;
    double term = x, sum = 0.0;
    for (int m = 1; m <= 24 && term > 1e-20; ++m) {
      sum += term;
      term *= x / ((m + 1.0) * (m + 1.0));
    }
    return std::log1p(sum);
  }
  const double lx = std::log(kappa * 0.5);
  double best = 0.0;  // m = 0 term is exactly log(1) = 0
  std::vector<double> terms;
  terms.push_back(0.0);
  for (int m = 1; m < 4000; ++m) {
    const double t = 2.0 * m * lx - 2.0 * std::lgamma(m + 1.0);
    terms.push_back(t);
    best = std::max(best, t);
    if (m > kappa * 0.5 && t < best - 60.0) break;
  }
  return log_sum_exp(terms);
}

inline double log_bessel_i1(double kappa) {
  if (kappa <= 0.0) return kNegInf;
  if (kappa <= 1.0) {
    const double x = 0.25 * kappa * kappa;
    double term = 0.5 * x, sum = 0.0;  // m = 1 term of the bracket series
    for (int m = 1; m <= 24 && std::abs(term) > 1e-20; ++m) {
      sum += term;
      term *= x / ((m + 1.0) * (m + 2.0));
    }
    return std::log(kappa * 0.5) + std::log1p(sum);
  }
  const double lx = std::log(kappa * 0.5);
  double best = kNegInf;
  std::vector<double> terms;
  for (int m = 0; m < 4000; ++m) {
    const double t = (2.0 * m + 1.0) * lx - std::lgamma(m + 1.0) - std::lgamma(m + 2.0);
    terms.push_back(t);
    best = std::max(best, t);
    if (m > kappa * 0.5 && t < best - 60.0) break;
  }
  return log_sum_exp(terms);
}

inline double bessel_i1_over_i0(double kappa) {
  if (kappa <= 0.0) return 0.0;
  return std::exp(log_bessel_i1(kappa) - log_bessel_i0(kappa));
}

// ---------------------------------------------------------------------------
// Von Mises

// Log density of the Von Mises distribution; kappa = 0 gives the uniform
// circle density.
inline double von_mises_log_prob(double theta, double mu, double kappa) {
  if (kappa < 0.0) throw std::invalid_argument("von_mises_log_prob: kappa must be non-negative");
  return kappa * std::cos(theta - mu) - kLogTwoPi - log_bessel_i0(kappa);
}

// Best-Fisher rejection sampler; returns an angle in [0, 2*pi).
inline double von_mises_sample(double mu, double kappa, Rng& rng) {
  if (kappa < 0.0) throw std::invalid_argument("von_mises_sample: kappa must be non-negative");
  if (kappa < 1e-10) return rng.angle();
  const double a = 1.0 + std::sqrt(1.0 + 4.0 * kappa * kappa);
  const double b = (a - std::sqrt(2.0 * a)) / (2.0 * kappa);
  const double r = (1.0 + b * b) / (2.0 * b);
  double f = 0.0;
  while (true) {
    const double u1 = rng.uniform();
    const double u2 = 1.0 - rng.uniform();  // (0, 1]
    const double z = std::cos(3.141592653589793 * u1);
    f = (1.0 + r * z) / (r + z);
    const double c = kappa * (r - f);
    if (c * (2.0 - c) - u2 > 0.0) break;
    if (std::log(c / u2) + 1.0 - c >= 0.0) break;
  }
  const double u3 = rng.uniform();
  const double theta = u3 > 0.5 ? mu + std::acos(f) : mu - std::acos(f);
  return wrap_angle(theta);
}

// ---------------------------------------------------------------------------
// Categorical

struct CategoricalParams {
  std::vector<double> probs;

  void validate() const {
    double sum = 0.0;
    for (double p : probs) {
      if (p < 0.0) throw std::invalid_argument("CategoricalParams: negative probability");
      sum += p;
    }
    if (std::abs(sum - 1.0) > 1e-6)
      throw std::invalid_argument("CategoricalParams: probabilities must sum to 1");
  }

  double log_prob(int i) const { return std::log(probs.at(i)); }
};

inline CategoricalParams categorical_from_logits(std::span<const double> logits) {
  return CategoricalParams{softmax(logits)};
}

// Inverse-CDF draw over arbitrary non-negative weights.
inline int categorical_sample(std::span<const double> probs, Rng& rng) {
  double total = 0.0;
  for (double p : probs) total += p;
  if (!(total > 0.0)) throw std::invalid_argument("categorical_sample: no mass");
  double u = rng.uniform() * total;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    u -= probs[i];
    if (u < 0.0) return static_cast<int>(i);
  }
  return static_cast<int>(probs.size()) - 1;
}

// ---------------------------------------------------------------------------
// Von Mises mixture
//
// Raw layout (4K): [weight logits (K) | biternion cos (K) | biternion sin (K)
// | log kappa (K)]. Means are stored as (possibly unnormalized) biternion
// pairs and normalized on use; kappa is stored in log scale.

struct VonMisesMixtureParams {
  std::vector<double> weights;
  std::vector<double> mean_cos;  // unit-normalized
  std::vector<double> mean_sin;
  std::vector<double> kappa;

  int components() const { return static_cast<int>(weights.size()); }
  double mean(int k) const { return wrap_angle(std::atan2(mean_sin[k], mean_cos[k])); }

  double log_prob(double theta) const {
    const double ct = std::cos(theta), st = std::sin(theta);
    std::vector<double> terms(weights.size());
    for (std::size_t k = 0; k < weights.size(); ++k) {
      const double cos_diff = ct * mean_cos[k] + st * mean_sin[k];
      terms[k] = (weights[k] > 0.0 ? std::log(weights[k]) : kNegInf) + kappa[k] * cos_diff -
                 kLogTwoPi - log_bessel_i0(kappa[k]);
    }
    return log_sum_exp(terms);
  }

  double sample(Rng& rng) const {
    const int k = categorical_sample(weights, rng);
    return von_mises_sample(mean(k), kappa[k], rng);
  }
};

inline int vm_mixture_raw_size(int k) { return 4 * k; }

inline VonMisesMixtureParams vm_mixture_from_raw(std::span<const double> raw, int k) {
  if (static_cast<int>(raw.size()) != vm_mixture_raw_size(k))
    throw std::invalid_argument("vm_mixture_from_raw: raw size mismatch");
  VonMisesMixtureParams p;
  p.weights = softmax(raw.subspan(0, k));
  p.mean_cos.resize(k);
  p.mean_sin.resize(k);
  p.kappa.resize(k);
  for (int i = 0; i < k; ++i) {
    const double a = raw[k + i], b = raw[2 * k + i];
    const double n = std::sqrt(a * a + b * b + kBiternionEps);
    p.mean_cos[i] = a / n;
    p.mean_sin[i] = b / n;
    p.kappa[i] = std::exp(std::clamp(raw[3 * k + i], kLogKappaMin, kLogKappaMax));
  }
  return p;
}

inline double vm_mixture_log_prob_raw(std::span<const double> raw, int k, double theta) {
  return vm_mixture_from_raw(raw, k).log_prob(theta);
}

// Analytic gradient of log_prob with respect to the raw vector; returns the
// log probability. grad must have the raw size and is accumulated into with
// the given scale.
inline double vm_mixture_grad_raw(std::span<const double> raw, int k, double theta,
                                  std::span<double> grad, double scale = 1.0) {
  const double ct = std::cos(theta), st = std::sin(theta);
  const auto pi = softmax(raw.subspan(0, k));
  std::vector<double> terms(k), kap(k), un(k), vn(k), n3(k);
  for (int i = 0; i < k; ++i) {
    const double a = raw[k + i], b = raw[2 * k + i];
    const double n2 = a * a + b * b + kBiternionEps;
    const double n = std::sqrt(n2);
    un[i] = a / n;
    vn[i] = b / n;
    n3[i] = n2 * n;
    kap[i] = std::exp(std::clamp(raw[3 * k + i], kLogKappaMin, kLogKappaMax));
    terms[i] = std::log(pi[i]) + kap[i] * (ct * un[i] + st * vn[i]) - kLogTwoPi -
               log_bessel_i0(kap[i]);
  }
  const double logp = log_sum_exp(terms);
  for (int i = 0; i < k; ++i) {
    const double r = std::exp(terms[i] - logp);
    grad[i] += scale * (r - pi[i]);
    const double a = raw[k + i], b = raw[2 * k + i];
    grad[k + i] += scale * r * kap[i] * (ct * (b * b + kBiternionEps) - st * a * b) / n3[i];
    grad[2 * k + i] += scale * r * kap[i] * (st * (a * a + kBiternionEps) - ct * a * b) / n3[i];
    const double lk = raw[3 * k + i];
    if (lk > kLogKappaMin && lk < kLogKappaMax) {
      const double dlogp_dkappa = (ct * un[i] + st * vn[i]) - bessel_i1_over_i0(kap[i]);
      grad[3 * k + i] += scale * r * kap[i] * dlogp_dkappa;
    }
  }
  return logp;
}

// ---------------------------------------------------------------------------
// Bivariate log-normal mixture (box width/length)
//
// Raw layout (6K): [weight logits (K) | mu1 (K) | mu2 (K) | log sigma1 (K) |
// log sigma2 (K) | rho raw (K, tanh-transformed)].

struct LogNormal2MixtureParams {
  std::vector<double> weights;
  std::vector<double> mean1, mean2;
  std::vector<double> sigma1, sigma2;  // positive
  std::vector<double> rho;             // in (-1, 1)

  int components() const { return static_cast<int>(weights.size()); }

  double component_log_prob(int k, double width, double length) const {
    const double x1 = std::log(width), x2 = std::log(length);
    const double z1 = (x1 - mean1[k]) / sigma1[k];
    const double z2 = (x2 - mean2[k]) / sigma2[k];
    const double om = 1.0 - rho[k] * rho[k];
    const double q = (z1 * z1 - 2.0 * rho[k] * z1 * z2 + z2 * z2) / om;
    return -kLogTwoPi - std::log(sigma1[k]) - std::log(sigma2[k]) - 0.5 * std::log(om) -
           0.5 * q - x1 - x2;  // includes the 1/(width*length) Jacobian
  }

  double log_prob(double width, double length) const {
    if (!(width > 0.0) || !(length > 0.0))
      throw std::invalid_argument("LogNormal2MixtureParams::log_prob: sizes must be positive");
    std::vector<double> terms(weights.size());
    for (int k = 0; k < components(); ++k)
      terms[k] = (weights[k] > 0.0 ? std::log(weights[k]) : kNegInf) +
                 component_log_prob(k, width, length);
    return log_sum_exp(terms);
  }

  std::pair<double, double> sample(Rng& rng) const {
    const int k = categorical_sample(weights, rng);
    const double n1 = rng.normal(), n2 = rng.normal();
    const double z1 = n1;
    const double z2 = rho[k] * n1 + std::sqrt(1.0 - rho[k] * rho[k]) * n2;
    return {std::exp(mean1[k] + sigma1[k] * z1), std::exp(mean2[k] + sigma2[k] * z2)};
  }
};

inline int lognormal2_raw_size(int k) { return 6 * k; }

inline LogNormal2MixtureParams lognormal2_from_raw(std::span<const double> raw, int k) {
  if (static_cast<int>(raw.size()) != lognormal2_raw_size(k))
    throw std::invalid_argument("lognormal2_from_raw: raw size mismatch");
  LogNormal2MixtureParams p;
  p.weights = softmax(raw.subspan(0, k));
  p.mean1.assign(raw.begin() + k, raw.begin() + 2 * k);
  p.mean2.assign(raw.begin() + 2 * k, raw.begin() + 3 * k);
  p.sigma1.resize(k);
  p.sigma2.resize(k);
  p.rho.resize(k);
  for (int i = 0; i < k; ++i) {
    p.sigma1[i] = std::exp(std::clamp(raw[3 * k + i], kLogSigmaMin, kLogSigmaMax));
    p.sigma2[i] = std::exp(std::clamp(raw[4 * k + i], kLogSigmaMin, kLogSigmaMax));
    p.rho[i] = std::tanh(std::clamp(raw[5 * k + i], -kRhoRawClamp, kRhoRawClamp));
  }
  return p;
}

inline double lognormal2_mixture_log_prob(double width, double length,
                                          const LogNormal2MixtureParams& p) {
  return p.log_prob(width, length);
}

inline double lognormal2_grad_raw(std::span<const double> raw, int k, double width, double length,
                                  std::span<double> grad, double scale = 1.0) {
  if (!(width > 0.0) || !(length > 0.0))
    throw std::invalid_argument("lognormal2_grad_raw: sizes must be positive");
  const auto p = lognormal2_from_raw(raw, k);
  std::vector<double> terms(k);
  for (int i = 0; i < k; ++i)
    terms[i] = std::log(p.weights[i]) + p.component_log_prob(i, width, length);
  const double logp = log_sum_exp(terms);
  const double x1 = std::log(width), x2 = std::log(length);
  for (int i = 0; i < k; ++i) {
    const double r = std::exp(terms[i] - logp);
    grad[i] += scale * (r - p.weights[i]);
    const double z1 = (x1 - p.mean1[i]) / p.sigma1[i];
    const double z2 = (x2 - p.mean2[i]) / p.sigma2[i];
    const double rho = p.rho[i];
    const double om = 1.0 - rho * rho;
    grad[k + i] += scale * r * (z1 - rho * z2) / (p.sigma1[i] * om);
    grad[2 * k + i] += scale * r * (z2 - rho * z1) / (p.sigma2[i] * om);
    if (raw[3 * k + i] > kLogSigmaMin && raw[3 * k + i] < kLogSigmaMax)
      grad[3 * k + i] += scale * r * (z1 * (z1 - rho * z2) / om - 1.0);
    if (raw[4 * k + i] > kLogSigmaMin && raw[4 * k + i] < kLogSigmaMax)
      grad[4 * k + i] += scale * r * (z2 * (z2 - rho * z1) / om - 1.0);
    if (std::abs(raw[5 * k + i]) < kRhoRawClamp) {
      const double q = (z1 * z1 - 2.0 * rho * z1 * z2 + z2 * z2) / om;
      // d/drho of [-0.5 log(om) - 0.5 q]
      const double dq_drho = (-2.0 * z1 * z2 + 2.0 * rho * q) / om;
      const double dl_drho = rho / om - 0.5 * dq_drho;
      grad[5 * k + i] += scale * r * dl_drho * om;  // chain through tanh
    }
  }
  return logp;
}

// ---------------------------------------------------------------------------
// Velocity mixture: component 0 is the exactly-zero-velocity atom; moving
// components pair a log-normal speed with a Von Mises direction.
//
// Raw layout (K + 5(K-1)): [weight logits (K) | mu_s (K-1) | log sigma_s (K-1)
// | dir biternion cos (K-1) | dir biternion sin (K-1) | dir log kappa (K-1)].

struct VelocityMixtureParams {
  std::vector<double> weights;  // K >= 2, index 0 = zero-velocity component
  std::vector<double> speed_mean, speed_sigma;           // K-1 entries
  std::vector<double> dir_cos, dir_sin, dir_kappa;       // K-1 entries

  int components() const { return static_cast<int>(weights.size()); }
  double dir_mean(int moving_k) const {
    return wrap_angle(std::atan2(dir_sin[moving_k], dir_cos[moving_k]));
  }

  void validate() const {
    if (components() < 2)
      throw std::invalid_argument("VelocityMixtureParams: needs at least 2 components");
  }

  double log_prob(double speed, double direction) const {
    if (speed < 0.0) throw std::invalid_argument("velocity log_prob: speed must be non-negative");
    if (speed == 0.0) return weights[0] > 0.0 ? std::log(weights[0]) : kNegInf;
    const double ls = std::log(speed);
    const double cd = std::cos(direction), sd = std::sin(direction);
    std::vector<double> terms(weights.size() - 1);
    for (std::size_t k = 1; k < weights.size(); ++k) {
      const std::size_t m = k - 1;
      const double z = (ls - speed_mean[m]) / speed_sigma[m];
      const double speed_term = -ls - std::log(speed_sigma[m]) - 0.5 * kLogTwoPi - 0.5 * z * z;
      const double cos_diff = cd * dir_cos[m] + sd * dir_sin[m];
      const double dir_term =
          dir_kappa[m] * cos_diff - kLogTwoPi - log_bessel_i0(dir_kappa[m]);
      terms[m] = (weights[k] > 0.0 ? std::log(weights[k]) : kNegInf) + speed_term + dir_term;
    }
    return log_sum_exp(terms);
  }

  // Returns (speed, direction); the zero component yields exactly (0, 0).
  std::pair<double, double> sample(Rng& rng) const {
    const int k = categorical_sample(weights, rng);
    if (k == 0) return {0.0, 0.0};
    const int m = k - 1;
    const double speed = std::exp(speed_mean[m] + speed_sigma[m] * rng.normal());
    const double dir = von_mises_sample(dir_mean(m), dir_kappa[m], rng);
    return {speed, dir};
  }
};

inline int velocity_raw_size(int k) { return k + 5 * (k - 1); }

inline VelocityMixtureParams velocity_from_raw(std::span<const double> raw, int k) {
  if (k < 2) throw std::invalid_argument("velocity_from_raw: needs at least 2 components");
  if (static_cast<int>(raw.size()) != velocity_raw_size(k))
    throw std::invalid_argument("velocity_from_raw: raw size mismatch");
  VelocityMixtureParams p;
  p.weights = softmax(raw.subspan(0, k));
  const int m = k - 1;
  p.speed_mean.assign(raw.begin() + k, raw.begin() + k + m);
  p.speed_sigma.resize(m);
  p.dir_cos.resize(m);
  p.dir_sin.resize(m);
  p.dir_kappa.resize(m);
  for (int i = 0; i < m; ++i) {
    p.speed_sigma[i] = std::exp(std::clamp(raw[k + m + i], kLogSigmaMin, kLogSigmaMax));
    const double a = raw[k + 2 * m + i], b = raw[k + 3 * m + i];
    const double n = std::sqrt(a * a + b * b + kBiternionEps);
    p.dir_cos[i] = a / n;
    p.dir_sin[i] = b / n;
    p.dir_kappa[i] = std::exp(std::clamp(raw[k + 4 * m + i], kLogKappaMin, kLogKappaMax));
  }
  return p;
}

inline double velocity_log_prob(double speed, double direction, const VelocityMixtureParams& p) {
  return p.log_prob(speed, direction);
}

inline double velocity_grad_raw(std::span<const double> raw, int k, double speed, double direction,
                                std::span<double> grad, double scale = 1.0) {
  const auto p = velocity_from_raw(raw, k);
  const auto pi = p.weights;
  if (speed < 0.0) throw std::invalid_argument("velocity_grad_raw: speed must be non-negative");
  if (speed == 0.0) {
    for (int j = 0; j < k; ++j) grad[j] += scale * ((j == 0 ? 1.0 : 0.0) - pi[j]);
    return pi[0] > 0.0 ? std::log(pi[0]) : kNegInf;
  }
  const int m = k - 1;
  const double ls = std::log(speed);
  const double cd = std::cos(direction), sd = std::sin(direction);
  std::vector<double> terms(m), z(m), kap(m);
  for (int i = 0; i < m; ++i) {
    z[i] = (ls - p.speed_mean[i]) / p.speed_sigma[i];
    kap[i] = p.dir_kappa[i];
    const double speed_term =
        -ls - std::log(p.speed_sigma[i]) - 0.5 * kLogTwoPi - 0.5 * z[i] * z[i];
    const double dir_term = kap[i] * (cd * p.dir_cos[i] + sd * p.dir_sin[i]) - kLogTwoPi -
                            log_bessel_i0(kap[i]);
    terms[i] = (pi[i + 1] > 0.0 ? std::log(pi[i + 1]) : kNegInf) + speed_term + dir_term;
  }
  const double logp = log_sum_exp(terms);
  std::vector<double> resp(m);
  for (int i = 0; i < m; ++i) resp[i] = std::exp(terms[i] - logp);
  for (int j = 0; j < k; ++j) grad[j] += scale * ((j >= 1 ? resp[j - 1] : 0.0) - pi[j]);
  for (int i = 0; i < m; ++i) {
    const double r = resp[i];
    grad[k + i] += scale * r * z[i] / p.speed_sigma[i];
    if (raw[k + m + i] > kLogSigmaMin && raw[k + m + i] < kLogSigmaMax)
      grad[k + m + i] += scale * r * (z[i] * z[i] - 1.0);
    const double a = raw[k + 2 * m + i], b = raw[k + 3 * m + i];
    const double n2 = a * a + b * b + kBiternionEps;
    const double n3 = n2 * std::sqrt(n2);
    grad[k + 2 * m + i] += scale * r * kap[i] * (cd * (b * b + kBiternionEps) - sd * a * b) / n3;
    grad[k + 3 * m + i] += scale * r * kap[i] * (sd * (a * a + kBiternionEps) - cd * a * b) / n3;
    const double lk = raw[k + 4 * m + i];
    if (lk > kLogKappaMin && lk < kLogKappaMax) {
      const double dl_dkappa =
          (cd * p.dir_cos[i] + sd * p.dir_sin[i]) - bessel_i1_over_i0(kap[i]);
      grad[k + 4 * m + i] += scale * r * kap[i] * dl_dkappa;
    }
  }
  return logp;
}

// ---------------------------------------------------------------------------
// Quantized location grid

struct DegenerateMaskError : std::runtime_error {
  DegenerateMaskError() : std::runtime_error("mask removed all probability mass") {}
};

// Categorical over H x W spatial bins with a uniform density inside each bin.
// Bins are half-open [lo, lo + res); the +x/+y region boundary is exclusive.
struct QuantizedLocationParams {
  int rows = 0;
  int cols = 0;
  double region_m = 40.0;
  double resolution_m = 0.25;
  std::vector<double> probs;  // [row][col], sums to 1

  int col_of(double x) const { return static_cast<int>(std::floor((x + region_m) / resolution_m)); }
  int row_of(double y) const { return static_cast<int>(std::floor((y + region_m) / resolution_m)); }
  bool in_region(double x, double y) const {
    return x >= -region_m && x < region_m && y >= -region_m && y < region_m;
  }

  double log_prob(double x, double y) const {
    if (!in_region(x, y))
      throw std::invalid_argument("QuantizedLocationParams::log_prob: point outside region");
    const double p = probs[std::size_t(row_of(y)) * cols + col_of(x)];
    const double bin_area_log = 2.0 * std::log(resolution_m);
    return (p > 0.0 ? std::log(p) : kNegInf) - bin_area_log;
  }

  // Index draw over the grid (row-major bin index).
  int sample_bin(Rng& rng) const { return categorical_sample(probs, rng); }
};

inline QuantizedLocationParams location_from_probs(std::vector<double> probs, int rows, int cols,
                                                   double region_m, double resolution_m) {
  QuantizedLocationParams p;
  p.rows = rows;
  p.cols = cols;
  p.region_m = region_m;
  p.resolution_m = resolution_m;
  p.probs = std::move(probs);
  if (static_cast<int>(p.probs.size()) != rows * cols)
    throw std::invalid_argument("location_from_probs: grid size mismatch");
  return p;
}

// Zeroes masked bins and rescales the remainder to sum to one. Throws
// DegenerateMaskError when no positive mass survives.
inline QuantizedLocationParams mask_and_renormalize(const QuantizedLocationParams& p,
                                                    std::span<const std::uint8_t> allowed) {
  if (allowed.size() != p.probs.size())
    throw std::invalid_argument("mask_and_renormalize: mask size mismatch");
  QuantizedLocationParams out = p;
  double total = 0.0;
  for (std::size_t i = 0; i < out.probs.size(); ++i) {
    if (!allowed[i]) out.probs[i] = 0.0;
    total += out.probs[i];
  }
  if (!(total > 0.0)) throw DegenerateMaskError();
  for (double& v : out.probs) v /= total;
  return out;
}

}  // namespace scenegen
