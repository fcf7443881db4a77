#ifndef U2C_SYNTH_HPP
#define U2C_SYNTH_HPP

#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "u2c/common.hpp"
#include "u2c/data.hpp"
#include "u2c/linalg.hpp"
#include "u2c/rng.hpp"

namespace u2c {

/// Configuration of the synthetic benchmark: class-conditional Gaussians for
/// the in-domain distribution, a separate Gaussian for the out-domain one,
/// label noise driving aleatoric uncertainty, and a fixed linear head that
/// turns features into logits.
struct SynthConfig {
  int c = 3;
  int d_feat = 2;
  std::vector<std::vector<double>> class_means;
  Matrix class_cov;
  std::vector<double> out_mean;
  Matrix out_cov;
  double eta = 0.2;  // label-noise rate, in [0, 0.5)
  LinearHead head;
  std::size_t n_val = 10000;
  std::size_t n_test = 10000;
  std::size_t n_out = 10000;
  std::uint64_t seed = 0;
  double logit_scale = 1.0;

  // misspecified-u preset: write a passthrough u column (true Mahalanobis
  // distance to the closest class mean) with a deterministic fraction of the
  // scores negated, so that region C gets populated
  bool write_u = false;
  double negate_fraction = 0.0;

  /// c=3 Gaussians at the corners of an equilateral triangle of side 6,
  /// identity covariance, out-domain blob shifted to (10,10) with 4*I, and
  /// the Bayes linear head for the identity-covariance mixture. Other class
  /// counts keep the layout: a circle with adjacent means 6 apart.
  static SynthConfig defaults(std::uint64_t seed = 0, int classes = 3) {
    SynthConfig cfg;
    cfg.seed = seed;
    cfg.c = classes;
    const double radius = 6.0 / (2.0 * std::sin(std::numbers::pi / cfg.c));
    cfg.class_means.resize(cfg.c);
    for (int k = 0; k < cfg.c; ++k) {
      const double ang = 2.0 * std::numbers::pi * k / cfg.c + std::numbers::pi / 2.0;
      cfg.class_means[k] = {radius * std::cos(ang), radius * std::sin(ang)};
    }
    cfg.class_cov = Matrix::identity(2);
    cfg.out_mean = {10.0, 10.0};
    cfg.out_cov = Matrix::identity(2);
    for (auto& v : cfg.out_cov.data()) v *= 4.0;
    cfg.head.weights = Matrix(cfg.c, cfg.d_feat);
    cfg.head.bias.resize(cfg.c);
    for (int k = 0; k < cfg.c; ++k) {
      double sq = 0.0;
      for (int j = 0; j < cfg.d_feat; ++j) {
        cfg.head.weights(k, j) = cfg.class_means[k][j];
        sq += cfg.class_means[k][j] * cfg.class_means[k][j];
      }
      cfg.head.bias[k] = -0.5 * sq;
    }
    return cfg;
  }

  static SynthConfig misspecified(std::uint64_t seed = 0) {
    SynthConfig cfg = defaults(seed);
    cfg.write_u = true;
    cfg.negate_fraction = 0.2;
    return cfg;
  }
};

struct SynthData {
  Dataset train_val;
  Dataset test_in;
  Dataset out_domain;
};

namespace detail {

inline void validate_config(const SynthConfig& cfg) {
  if (cfg.c < 2) throw InputError("synth: need at least 2 classes");
  if (static_cast<int>(cfg.class_means.size()) != cfg.c)
    throw InputError("synth: one mean per class required");
  for (int a = 0; a < cfg.c; ++a)
    for (int b = a + 1; b < cfg.c; ++b)
      if (cfg.class_means[a] == cfg.class_means[b])
        throw InputError("synth: class means must be distinct");
  if (!(cfg.eta >= 0.0 && cfg.eta < 0.5)) throw InputError("synth: eta must lie in [0, 0.5)");
}

inline std::vector<double> sample_gaussian(const CounterRng& rng, std::uint64_t counter,
                                           std::span<const double> mean, const Matrix& chol) {
  const std::size_t d = mean.size();
  std::vector<double> z(d);
  for (std::size_t j = 0; j < d; ++j)
    z[j] = rng.normal(counter, 10 + 2 * static_cast<std::uint64_t>(j));
  std::vector<double> out(d);
  for (std::size_t a = 0; a < d; ++a) {
    double s = mean[a];
    for (std::size_t b = 0; b <= a; ++b) s += chol(a, b) * z[b];
    out[a] = s;
  }
  return out;
}

inline double true_mahalanobis(const SynthConfig& cfg, const Matrix& chol,
                               std::span<const double> phi) {
  double best = std::numeric_limits<double>::infinity();
  std::vector<double> diff(phi.size());
  for (const auto& mu : cfg.class_means) {
    for (std::size_t j = 0; j < phi.size(); ++j) diff[j] = phi[j] - mu[j];
    const auto x = cholesky_solve(chol, diff);
    best = std::min(best, dot(diff, x));
  }
  return std::sqrt(std::max(best, 0.0));
}

}  // namespace detail

/// Deterministic generator. Every record is a pure function of
/// (seed, split stream, record index), so splits and records can be produced
/// in any order with identical results.
inline SynthData generate(const SynthConfig& cfg) {
  detail::validate_config(cfg);
  Matrix in_chol, out_chol;
  try {
    in_chol = cholesky(cfg.class_cov);
    out_chol = cholesky(cfg.out_cov);
  } catch (const NumericError&) {
    throw InputError("synth: covariance must be symmetric positive definite");
  }

  const auto make_in = [&](Split split, std::uint64_t stream, std::size_t n,
                           const std::string& prefix) {
    CounterRng rng(cfg.seed, stream);
    Dataset ds;
    ds.c = cfg.c;
    ds.d_feat = cfg.d_feat;
    ds.split = split;
    ds.records.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
      Record r;
      r.id = prefix + std::to_string(i);
      const int true_class =
          std::min(cfg.c - 1, static_cast<int>(rng.uniform(i, 0) * cfg.c));
      auto phi = detail::sample_gaussian(rng, i, cfg.class_means[true_class], in_chol);
      r.label = true_class + 1;
      if (cfg.eta > 0.0 && rng.uniform(i, 4) < cfg.eta) {
        int other = std::min(cfg.c - 2, static_cast<int>(rng.uniform(i, 6) * (cfg.c - 1)));
        if (other >= true_class) ++other;
        r.label = other + 1;
      }
      r.logits = cfg.head.apply(phi);
      for (auto& l : r.logits) l *= cfg.logit_scale;
      if (cfg.write_u) {
        double u = detail::true_mahalanobis(cfg, in_chol, phi);
        if (rng.uniform(i, 8) < cfg.negate_fraction) u = -u;
        r.u_score = u;
      }
      r.features = std::move(phi);
      ds.records.push_back(std::move(r));
    }
    return ds;
  };

  SynthData data;
  data.train_val = make_in(Split::train_val, 1, cfg.n_val, "va-");
  data.test_in = make_in(Split::test_in, 2, cfg.n_test, "in-");

  {
    CounterRng rng(cfg.seed, 3);
    Dataset ds;
    ds.c = cfg.c;
    ds.d_feat = cfg.d_feat;
    ds.split = Split::out_domain;
    ds.records.reserve(cfg.n_out);
    for (std::size_t i = 0; i < cfg.n_out; ++i) {
      Record r;
      r.id = "out-" + std::to_string(i);
      auto phi = detail::sample_gaussian(rng, i, cfg.out_mean, out_chol);
      r.label = cfg.c + 1;
      r.logits = cfg.head.apply(phi);
      for (auto& l : r.logits) l *= cfg.logit_scale;
      if (cfg.write_u) {
        double u = detail::true_mahalanobis(cfg, in_chol, phi);
        if (rng.uniform(i, 8) < cfg.negate_fraction) u = -u;
        r.u_score = u;
      }
      r.features = std::move(phi);
      ds.records.push_back(std::move(r));
    }
    data.out_domain = ds;
  }
  return data;
}

}  // namespace u2c

#endif
