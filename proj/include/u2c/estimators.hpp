#ifndef U2C_ESTIMATORS_HPP
#define U2C_ESTIMATORS_HPP

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "u2c/common.hpp"
#include "u2c/data.hpp"
#include "u2c/linalg.hpp"

namespace u2c {

enum class EstimatorKind { maxlogit, mahalanobis, knn, ash, passthrough };

inline std::string to_string(EstimatorKind k) {
  switch (k) {
    case EstimatorKind::maxlogit: return "maxlogit";
    case EstimatorKind::mahalanobis: return "mahalanobis";
    case EstimatorKind::knn: return "knn";
    case EstimatorKind::ash: return "ash";
    case EstimatorKind::passthrough: return "passthrough";
  }
  throw InputError("unknown estimator kind");
}

inline EstimatorKind estimator_kind_from_string(std::string_view s) {
  if (s == "maxlogit") return EstimatorKind::maxlogit;
  if (s == "mahalanobis") return EstimatorKind::mahalanobis;
  if (s == "knn") return EstimatorKind::knn;
  if (s == "ash") return EstimatorKind::ash;
  if (s == "passthrough") return EstimatorKind::passthrough;
  throw InputError("unknown estimator kind: " + std::string(s));
}

struct EstimatorOptions {
  int k = 5;                 // knn
  double ash_p = 0.1;        // ash keep-fraction, in (0,1)
  double ash_fill = 1.0;     // ash fill constant
  std::optional<LinearHead> head;  // required by ash
};

/// A fitted epistemic scorer u(x). Immutable after fitting; score() is pure.
struct EpistemicEstimator {
  EstimatorKind kind = EstimatorKind::maxlogit;

  // mahalanobis
  std::vector<std::vector<double>> class_means;  // c vectors of d'
  Matrix covariance;                             // d' x d', ridge-regularized
  Matrix cov_chol;                               // cached Cholesky factor

  // knn
  Matrix reference;  // m x d'
  int k = 0;

  // ash
  double ash_p = 0.1;
  double ash_fill = 1.0;
  std::optional<LinearHead> head;

  bool needs_features() const {
    return kind == EstimatorKind::mahalanobis || kind == EstimatorKind::knn ||
           kind == EstimatorKind::ash;
  }
};

namespace detail {

inline std::vector<double> ash_reshape(std::span<const double> features, double p, double fill) {
  const std::size_t d = features.size();
  const auto keep = static_cast<std::size_t>(std::ceil(p * static_cast<double>(d)));
  std::vector<std::size_t> idx(d);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  // larger magnitude first; magnitude ties go to the lower index
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    return std::abs(features[a]) > std::abs(features[b]);
  });
  std::vector<double> out(d, 0.0);
  for (std::size_t i = 0; i < keep && i < d; ++i) out[idx[i]] = fill;
  return out;
}

}  // namespace detail

inline EpistemicEstimator fit_estimator(EstimatorKind kind, const Dataset& validation,
                                        const EstimatorOptions& options = {}) {
  if (validation.split == Split::out_domain)
    throw FitError("fit_estimator: validation split must be in-domain");
  EpistemicEstimator e;
  e.kind = kind;
  switch (kind) {
    case EstimatorKind::maxlogit:
    case EstimatorKind::passthrough:
      return e;
    case EstimatorKind::mahalanobis: {
      if (!validation.d_feat) throw FitError("mahalanobis: validation features required");
      const int c = validation.c;
      const int d = *validation.d_feat;
      e.class_means.assign(c, std::vector<double>(d, 0.0));
      std::vector<std::size_t> counts(c, 0);
      for (const auto& r : validation.records) {
        const auto& phi = r.features.value();
        auto& mu = e.class_means[r.label - 1];
        for (int j = 0; j < d; ++j) mu[j] += phi[j];
        ++counts[r.label - 1];
      }
      for (int cls = 0; cls < c; ++cls) {
        if (counts[cls] == 0)
          throw FitError("mahalanobis: class " + std::to_string(cls + 1) +
                         " has no validation examples");
        for (int j = 0; j < d; ++j) e.class_means[cls][j] /= static_cast<double>(counts[cls]);
      }
      // pooled within-class covariance
      Matrix sigma(d, d);
      for (const auto& r : validation.records) {
        const auto& phi = r.features.value();
        const auto& mu = e.class_means[r.label - 1];
        for (int a = 0; a < d; ++a)
          for (int b = 0; b < d; ++b) sigma(a, b) += (phi[a] - mu[a]) * (phi[b] - mu[b]);
      }
      const auto n = static_cast<double>(validation.size());
      for (auto& v : sigma.data()) v /= n;
      double trace = 0.0;
      for (int j = 0; j < d; ++j) trace += sigma(j, j);
      // ridge; floored so zero within-class scatter still yields an SPD matrix
      const double eps = 1e-6 * std::max(trace / static_cast<double>(d), 1.0);
      for (int j = 0; j < d; ++j) sigma(j, j) += eps;
      e.covariance = sigma;
      try {
        e.cov_chol = cholesky(sigma);
      } catch (const NumericError&) {
        throw NumericError("mahalanobis: covariance singular despite ridge");
      }
      return e;
    }
    case EstimatorKind::knn: {
      if (!validation.d_feat) throw FitError("knn: validation features required");
      if (options.k < 1) throw FitError("knn: k must be positive");
      if (static_cast<std::size_t>(options.k) > validation.size())
        throw FitError("knn: k exceeds the number of reference vectors");
      const int d = *validation.d_feat;
      e.reference = Matrix(validation.size(), d);
      for (std::size_t i = 0; i < validation.size(); ++i) {
        const auto& phi = validation.records[i].features.value();
        for (int j = 0; j < d; ++j) e.reference(i, j) = phi[j];
      }
      e.k = options.k;
      return e;
    }
    case EstimatorKind::ash: {
      if (!validation.d_feat) throw FitError("ash: validation features required");
      if (!options.head) throw FitError("ash: a LinearHead is required");
      if (!(options.ash_p > 0.0 && options.ash_p < 1.0))
        throw FitError("ash: keep-fraction p must lie in (0,1)");
      e.ash_p = options.ash_p;
      e.ash_fill = options.ash_fill;
      e.head = options.head;
      return e;
    }
  }
  throw FitError("unknown estimator kind");
}

/// Evaluates u(x). A precomputed Record.u_score always takes precedence, so
/// externally computed scores can be plugged in unchanged.
inline double score(const EpistemicEstimator& e, const Record& r) {
  if (r.u_score) return *r.u_score;
  switch (e.kind) {
    case EstimatorKind::passthrough:
      throw InputError("passthrough estimator: record '" + r.id + "' has no u column");
    case EstimatorKind::maxlogit: {
      return -*std::max_element(r.logits.begin(), r.logits.end());
    }
    case EstimatorKind::mahalanobis: {
      if (!r.features) throw InputError("mahalanobis: record '" + r.id + "' has no features");
      const auto& phi = *r.features;
      double best = std::numeric_limits<double>::infinity();
      std::vector<double> diff(phi.size());
      for (const auto& mu : e.class_means) {
        for (std::size_t j = 0; j < phi.size(); ++j) diff[j] = phi[j] - mu[j];
        const auto x = cholesky_solve(e.cov_chol, diff);
        best = std::min(best, dot(diff, x));
      }
      return std::sqrt(std::max(best, 0.0));
    }
    case EstimatorKind::knn: {
      if (!r.features) throw InputError("knn: record '" + r.id + "' has no features");
      const auto& phi = *r.features;
      std::vector<std::pair<double, std::size_t>> dists(e.reference.rows());
      for (std::size_t i = 0; i < e.reference.rows(); ++i)
        dists[i] = {squared_distance(e.reference.row(i), phi), i};
      // ties at the k-th distance break by reference-row index
      std::partial_sort(dists.begin(), dists.begin() + e.k, dists.end());
      double acc = 0.0;
      for (int i = 0; i < e.k; ++i) acc += std::sqrt(dists[i].first);
      return acc / e.k;
    }
    case EstimatorKind::ash: {
      if (!r.features) throw InputError("ash: record '" + r.id + "' has no features");
      const auto reshaped = detail::ash_reshape(*r.features, e.ash_p, e.ash_fill);
      const auto logits = e.head->apply(reshaped);
      return -*std::max_element(logits.begin(), logits.end());
    }
  }
  throw InputError("unknown estimator kind");
}

inline std::vector<double> score_all(const EpistemicEstimator& e, const Dataset& d) {
  std::vector<double> out;
  out.reserve(d.size());
  for (const auto& r : d.records) out.push_back(score(e, r));
  return out;
}

}  // namespace u2c

#endif
