#ifndef U2C_CALIBRATION_HPP
#define U2C_CALIBRATION_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "u2c/common.hpp"
#include "u2c/data.hpp"
#include "u2c/estimators.hpp"
#include "u2c/rng.hpp"

namespace u2c {

enum class CalibratorForm { linear, mlp };

inline std::string to_string(CalibratorForm f) {
  return f == CalibratorForm::linear ? "linear" : "mlp";
}

inline CalibratorForm calibrator_form_from_string(std::string_view s) {
  if (s == "linear") return CalibratorForm::linear;
  if (s == "mlp") return CalibratorForm::mlp;
  throw InputError("unknown calibrator form: " + std::string(s));
}

/// Scalar map from an epistemic score to a logit commensurate with the class
/// logits. Inputs are standardized with constants frozen at fit time.
struct EpistemicCalibrator {
  CalibratorForm form = CalibratorForm::linear;
  double u_mean = 0.0;
  double u_std = 1.0;

  // linear: a*z + b
  double a = 0.0;
  double b = 0.0;

  // mlp: sum_j w2[j] * tanh(w1[j]*z + b1[j]) + b2
  std::vector<double> w1, b1, w2;
  double b2 = 0.0;

  double standardize(double u) const { return (u - u_mean) / u_std; }

  double eval_standardized(double z) const {
    if (form == CalibratorForm::linear) return a * z + b;
    double acc = b2;
    for (std::size_t j = 0; j < w1.size(); ++j) acc += w2[j] * std::tanh(w1[j] * z + b1[j]);
    return acc;
  }

  double operator()(double u) const { return eval_standardized(standardize(u)); }

  std::vector<double> pack() const {
    if (form == CalibratorForm::linear) return {a, b};
    std::vector<double> p;
    p.insert(p.end(), w1.begin(), w1.end());
    p.insert(p.end(), b1.begin(), b1.end());
    p.insert(p.end(), w2.begin(), w2.end());
    p.push_back(b2);
    return p;
  }

  void unpack(std::span<const double> p) {
    if (form == CalibratorForm::linear) {
      a = p[0];
      b = p[1];
      return;
    }
    const std::size_t h = w1.size();
    for (std::size_t j = 0; j < h; ++j) w1[j] = p[j];
    for (std::size_t j = 0; j < h; ++j) b1[j] = p[h + j];
    for (std::size_t j = 0; j < h; ++j) w2[j] = p[2 * h + j];
    b2 = p[3 * h];
  }

  /// d g(z) / d params, in pack() order.
  std::vector<double> grad_params(double z) const {
    if (form == CalibratorForm::linear) return {z, 1.0};
    const std::size_t h = w1.size();
    std::vector<double> g(3 * h + 1);
    for (std::size_t j = 0; j < h; ++j) {
      const double t = std::tanh(w1[j] * z + b1[j]);
      const double dt = 1.0 - t * t;
      g[j] = w2[j] * dt * z;
      g[h + j] = w2[j] * dt;
      g[2 * h + j] = t;
    }
    g[3 * h] = 1.0;
    return g;
  }
};

struct CalibratedModel {
  int c = 0;
  double tau = 1.0;
  double theta = 0.0;
  double alpha = 0.95;
  bool theta_degenerate = false;
  EpistemicCalibrator tau_u;
  EpistemicEstimator estimator;
};

/// Compatibility gate between a dataset and a fitted model.
inline void validate_compatibility(const Dataset& d, const CalibratedModel& m) {
  if (d.c != m.c)
    throw CompatError("class count mismatch: dataset c=" + std::to_string(d.c) + ", model c=" +
                      std::to_string(m.c));
  if (m.estimator.needs_features()) {
    const bool all_precomputed =
        std::all_of(d.records.begin(), d.records.end(),
                    [](const Record& r) { return r.u_score.has_value(); });
    if (!d.d_feat && !all_precomputed)
      throw CompatError("features required by the " + to_string(m.estimator.kind) +
                        " estimator but absent from the dataset");
    if (d.d_feat && m.estimator.kind == EstimatorKind::mahalanobis &&
        !m.estimator.class_means.empty() &&
        static_cast<std::size_t>(*d.d_feat) != m.estimator.class_means.front().size())
      throw CompatError("feature dimension mismatch");
  }
}

namespace detail {

constexpr double kTauLo = 0.05;
constexpr double kTauHi = 20.0;

inline double golden_minimize(const std::function<double(double)>& f, double a, double b,
                              double tol) {
  const double gr = (1.0 + std::sqrt(5.0)) / 2.0;
  double c = b - (b - a) / gr;
  double d = a + (b - a) / gr;
  double fc = f(c), fd = f(d);
  while (std::abs(b - a) > tol) {
    if (fc < fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - (b - a) / gr;
      fc = f(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + (b - a) / gr;
      fd = f(d);
    }
  }
  return 0.5 * (a + b);
}

inline double temperature_nll(const Dataset& d, double tau) {
  std::vector<double> per(d.size());
  for (std::size_t i = 0; i < d.size(); ++i) {
    const auto& r = d.records[i];
    double zmax = -std::numeric_limits<double>::infinity();
    for (double l : r.logits) zmax = std::max(zmax, l / tau);
    double s = 0.0;
    for (double l : r.logits) s += std::exp(l / tau - zmax);
    per[i] = std::log(s) + zmax - r.logits[r.label - 1] / tau;
  }
  return pairwise_mean(per);
}

}  // namespace detail

/// Fits the temperature by minimizing validation cross-entropy over
/// tau in [0.05, 20]. A coarse log-spaced scan (which contains tau = 1
/// exactly) brackets the minimum before golden-section refinement, so the
/// result never ends up worse than no scaling at all.
inline double fit_temperature(const Dataset& validation) {
  if (validation.records.empty()) throw FitError("fit_temperature: empty validation set");
  for (const auto& r : validation.records)
    if (r.label > validation.c) throw FitError("fit_temperature: out-domain label in validation");

  const auto obj = [&](double tau) { return detail::temperature_nll(validation, tau); };

  constexpr int kGrid = 65;  // odd count; geometric midpoint of [0.05,20] is exactly 1
  const double log_lo = std::log(detail::kTauLo);
  const double log_hi = std::log(detail::kTauHi);
  std::vector<double> grid(kGrid);
  for (int i = 0; i < kGrid; ++i)
    grid[i] = std::exp(log_lo + (log_hi - log_lo) * i / (kGrid - 1));
  grid[kGrid / 2] = 1.0;

  int best_i = 0;
  double best_f = obj(grid[0]);
  for (int i = 1; i < kGrid; ++i) {
    const double fi = obj(grid[i]);
    if (fi < best_f) {
      best_f = fi;
      best_i = i;
    }
  }
  const double lo = grid[std::max(0, best_i - 1)];
  const double hi = grid[std::min(kGrid - 1, best_i + 1)];
  const double refined = detail::golden_minimize(obj, lo, hi, 1e-6);
  return obj(refined) <= best_f ? refined : grid[best_i];
}

struct ThresholdFit {
  double theta = 0.0;
  bool degenerate = false;       // more than the intended tail ties at theta
  std::size_t rejected = 0;      // validation points with u >= theta
};

/// theta is the alpha-percentile rule on the validation scores: with the
/// ascending order statistics u_(1..m) and k = ceil(alpha*m), theta is
/// u_(k+1) when k < m and u_(m) + 1 otherwise. Rejection everywhere in the
/// toolkit is u >= theta.
inline ThresholdFit fit_threshold(std::vector<double> u_values, double alpha) {
  const std::size_t m = u_values.size();
  if (m < 20) throw FitError("fit_threshold: need at least 20 validation scores");
  if (!(alpha > 0.0 && alpha < 1.0)) throw FitError("fit_threshold: alpha must lie in (0,1)");
  std::sort(u_values.begin(), u_values.end());
  const auto k = static_cast<std::size_t>(std::ceil(alpha * static_cast<double>(m)));
  ThresholdFit fit;
  fit.theta = (k < m) ? u_values[k] : u_values[m - 1] + 1.0;
  fit.rejected = static_cast<std::size_t>(
      u_values.end() - std::lower_bound(u_values.begin(), u_values.end(), fit.theta));
  fit.degenerate = fit.rejected > m - k;
  return fit;
}

/// Copy of the validation set where every record scoring u >= theta is
/// relabeled as the out-domain class c+1. Logits and features are untouched.
inline Dataset relabel(const Dataset& validation, const EpistemicEstimator& estimator,
                       double theta) {
  Dataset out = validation;
  for (auto& r : out.records)
    if (score(estimator, r) >= theta) r.label = out.c + 1;
  return out;
}

namespace detail {

/// Cross-entropy over the extended (c+1)-class softmax, as a function of the
/// calibrator parameters. Per-record in-domain sum-exps are precomputed, so
/// one evaluation is O(m).
class CalibratorObjective {
 public:
  CalibratorObjective(const Dataset& relabeled, double tau,
                      const EpistemicEstimator& estimator) {
    const int c = relabeled.c;
    n_ = relabeled.size();
    max_scaled_.resize(n_);
    sumexp_.resize(n_);
    target_logit_.resize(n_);
    is_out_.resize(n_);
    std::vector<double> u = score_all(estimator, relabeled);
    double mean = pairwise_mean(u);
    std::vector<double> sq(n_);
    for (std::size_t i = 0; i < n_; ++i) sq[i] = (u[i] - mean) * (u[i] - mean);
    double sd = std::sqrt(pairwise_mean(sq));
    if (sd == 0.0) sd = 1.0;
    u_mean_ = mean;
    u_std_ = sd;
    z_.resize(n_);
    min_scaled_ = std::numeric_limits<double>::infinity();
    max_scaled_any_ = -std::numeric_limits<double>::infinity();
    bool any_out = false, any_in = false;
    for (std::size_t i = 0; i < n_; ++i) {
      const auto& r = relabeled.records[i];
      double mx = -std::numeric_limits<double>::infinity();
      for (double l : r.logits) {
        const double s = l / tau;
        mx = std::max(mx, s);
        min_scaled_ = std::min(min_scaled_, s);
        max_scaled_any_ = std::max(max_scaled_any_, s);
      }
      double se = 0.0;
      for (double l : r.logits) se += std::exp(l / tau - mx);
      max_scaled_[i] = mx;
      sumexp_[i] = se;
      is_out_[i] = (r.label == c + 1);
      target_logit_[i] = is_out_[i] ? 0.0 : r.logits[r.label - 1] / tau;
      z_[i] = (u[i] - u_mean_) / u_std_;
      (is_out_[i] ? any_out : any_in) = true;
    }
    if (!any_out) throw FitError("fit_epistemic_calibrator: no out-domain labels after relabeling");
    if (!any_in) throw FitError("fit_epistemic_calibrator: no in-domain labels after relabeling");
  }

  std::size_t size() const { return n_; }
  double u_mean() const { return u_mean_; }
  double u_std() const { return u_std_; }
  double min_scaled_logit() const { return min_scaled_; }
  double max_scaled_logit() const { return max_scaled_any_; }
  const std::vector<double>& standardized_u() const { return z_; }

  /// Mean negative log-likelihood for a given calibrator (standardized input).
  double loss(const EpistemicCalibrator& cal) const {
    std::vector<double> per(n_);
    for (std::size_t i = 0; i < n_; ++i) per[i] = record_nll(cal.eval_standardized(z_[i]), i);
    return pairwise_mean(per);
  }

  /// Loss and its analytic gradient with respect to cal.pack() order.
  double loss_grad(const EpistemicCalibrator& cal, std::vector<double>& grad) const {
    std::vector<double> per(n_);
    std::fill(grad.begin(), grad.end(), 0.0);
    for (std::size_t i = 0; i < n_; ++i) {
      const double g = cal.eval_standardized(z_[i]);
      const double zmax = std::max(max_scaled_[i], g);
      const double denom = sumexp_[i] * std::exp(max_scaled_[i] - zmax) + std::exp(g - zmax);
      per[i] = std::log(denom) + zmax - (is_out_[i] ? g : target_logit_[i]);
      const double p_out = std::exp(g - zmax) / denom;
      const double dldg = (p_out - (is_out_[i] ? 1.0 : 0.0)) / static_cast<double>(n_);
      const auto dg = cal.grad_params(z_[i]);
      for (std::size_t p = 0; p < grad.size(); ++p) grad[p] += dldg * dg[p];
    }
    return pairwise_mean(per);
  }

  /// Loss of a constant calibrator tau_u == b; convex in b.
  double constant_loss(double b) const {
    std::vector<double> per(n_);
    for (std::size_t i = 0; i < n_; ++i) per[i] = record_nll(b, i);
    return pairwise_mean(per);
  }

 private:
  double record_nll(double g, std::size_t i) const {
    const double zmax = std::max(max_scaled_[i], g);
    const double denom = sumexp_[i] * std::exp(max_scaled_[i] - zmax) + std::exp(g - zmax);
    return std::log(denom) + zmax - (is_out_[i] ? g : target_logit_[i]);
  }

  std::size_t n_ = 0;
  double u_mean_ = 0.0, u_std_ = 1.0;
  double min_scaled_ = 0.0;
  double max_scaled_any_ = 0.0;
  std::vector<double> max_scaled_, sumexp_, target_logit_, z_;
  std::vector<char> is_out_;
};

struct GdResult {
  std::vector<double> best_params;
  double best_loss = std::numeric_limits<double>::infinity();
};

/// Full-batch gradient descent with momentum 0.9, step 0.05, 2000 iterations.
/// Returns the best iterate seen rather than the last one.
inline GdResult momentum_descent(const CalibratorObjective& obj, EpistemicCalibrator cal) {
  constexpr int kIters = 2000;
  constexpr double kStep = 0.05;
  constexpr double kMomentum = 0.9;
  std::vector<double> params = cal.pack();
  std::vector<double> velocity(params.size(), 0.0);
  std::vector<double> grad(params.size());
  GdResult res;
  res.best_params = params;
  res.best_loss = obj.loss(cal);
  for (int it = 0; it < kIters; ++it) {
    const double l = obj.loss_grad(cal, grad);
    if (!std::isfinite(l))
      throw NumericError("fit_epistemic_calibrator: non-finite loss at iteration " +
                         std::to_string(it));
    if (l < res.best_loss) {
      res.best_loss = l;
      res.best_params = params;
    }
    for (std::size_t p = 0; p < params.size(); ++p) {
      velocity[p] = kMomentum * velocity[p] - kStep * grad[p];
      params[p] += velocity[p];
    }
    cal.unpack(params);
  }
  const double l = obj.loss(cal);
  if (l < res.best_loss) {
    res.best_loss = l;
    res.best_params = params;
  }
  return res;
}

/// Least-squares line through (sorted standardized u, sorted max scaled
/// logit) pairs; aligns the score scale with the logit scale.
inline std::pair<double, double> linear_init(const CalibratorObjective& obj,
                                             const std::vector<double>& max_scaled) {
  std::vector<double> x = obj.standardized_u();
  std::vector<double> y = max_scaled;
  std::sort(x.begin(), x.end());
  std::sort(y.begin(), y.end());
  const auto n = static_cast<double>(x.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxx = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
  }
  const double a = sxx > 0.0 ? sxy / sxx : 0.0;
  return {a, my - a * mx};
}

inline EpistemicCalibrator make_linear(const CalibratorObjective& obj, double a, double b) {
  EpistemicCalibrator cal;
  cal.form = CalibratorForm::linear;
  cal.u_mean = obj.u_mean();
  cal.u_std = obj.u_std();
  cal.a = a;
  cal.b = b;
  return cal;
}

/// mlp whose units jointly emulate the line a*z + b: with input scale s,
/// sum_j (a/(h s)) tanh(s z) + b -> a z + b as s -> 0.
inline EpistemicCalibrator make_nested_mlp(const CalibratorObjective& obj, std::size_t h,
                                           double a, double b, double s) {
  EpistemicCalibrator cal;
  cal.form = CalibratorForm::mlp;
  cal.u_mean = obj.u_mean();
  cal.u_std = obj.u_std();
  cal.w1.assign(h, s);
  cal.b1.assign(h, 0.0);
  cal.w2.assign(h, a / (static_cast<double>(h) * s));
  cal.b2 = b;
  return cal;
}

}  // namespace detail

struct CalibratorFitResult {
  EpistemicCalibrator calibrator;
  double loss = 0.0;
  double best_constant = 0.0;
  double best_constant_loss = 0.0;
};

/// Fits tau_u on the relabeled validation set by full-batch momentum descent.
/// The optimizer keeps the best iterate, and the final pick also considers
/// the exact best-constant calibrator (a 1-D convex problem) and, for the
/// mlp form, an unperturbed emulation of the fitted linear solution; the
/// returned loss therefore never exceeds either reference.
inline CalibratorFitResult fit_epistemic_calibrator(const Dataset& relabeled, double tau,
                                                    const EpistemicEstimator& estimator,
                                                    CalibratorForm form, std::uint64_t seed,
                                                    std::size_t hidden = 8) {
  detail::CalibratorObjective obj(relabeled, tau, estimator);

  // exact best constant: convex in the single logit, so golden section nails it
  const double lo = obj.min_scaled_logit() - 10.0;
  const double hi = obj.max_scaled_logit() + 10.0;
  const double best_const = detail::golden_minimize(
      [&](double b) { return obj.constant_loss(b); }, lo, hi, 1e-10);
  const double best_const_loss = obj.constant_loss(best_const);

  std::vector<double> max_scaled(obj.size());
  {
    // per-record max scaled logits for the quantile alignment init
    std::size_t i = 0;
    for (const auto& r : relabeled.records) {
      double mx = -std::numeric_limits<double>::infinity();
      for (double l : r.logits) mx = std::max(mx, l / tau);
      max_scaled[i++] = mx;
    }
  }
  const auto [a0, b0] = detail::linear_init(obj, max_scaled);

  auto fit_linear = [&]() {
    auto cal = detail::make_linear(obj, a0, b0);
    auto gd = detail::momentum_descent(obj, cal);
    cal.unpack(gd.best_params);
    double best = gd.best_loss;
    if (best_const_loss < best) {
      cal.a = 0.0;
      cal.b = best_const;
      best = best_const_loss;
    }
    return std::make_pair(cal, best);
  };

  CalibratorFitResult res;
  res.best_constant = best_const;
  res.best_constant_loss = best_const_loss;

  if (form == CalibratorForm::linear) {
    auto [cal, loss] = fit_linear();
    res.calibrator = cal;
    res.loss = loss;
    return res;
  }

  if (hidden < 1) throw FitError("fit_epistemic_calibrator: mlp needs at least one unit");
  auto [lin, lin_loss] = fit_linear();

  auto cal = detail::make_nested_mlp(obj, hidden, lin.a, lin.b, 0.1);
  {
    // seed-controlled +-1e-2 uniform perturbation of the linear-init
    CounterRng rng(seed, /*stream=*/7);
    auto params = cal.pack();
    for (std::size_t p = 0; p < params.size(); ++p)
      params[p] += 2e-2 * (rng.uniform(p, 0) - 0.5);
    cal.unpack(params);
  }
  auto gd = detail::momentum_descent(obj, cal);
  cal.unpack(gd.best_params);
  double best = gd.best_loss;

  // loss floors: the fitted linear solution (emulated exactly up to O(s^2))
  // and the best constant
  auto nested = detail::make_nested_mlp(obj, hidden, lin.a, lin.b, 1e-6);
  const double nested_loss = obj.loss(nested);
  if (nested_loss < best) {
    cal = nested;
    best = nested_loss;
  }
  if (best_const_loss < best) {
    cal = detail::make_nested_mlp(obj, hidden, 0.0, best_const, 1e-6);
    cal.w2.assign(hidden, 0.0);
    cal.b2 = best_const;
    best = best_const_loss;
  }
  res.calibrator = cal;
  res.loss = best;
  return res;
}

struct GradientCheckResult {
  double max_rel_err = 0.0;
  bool pass = false;
};

/// Compares analytic gradients of the calibrator loss against central finite
/// differences at random parameter points.
inline GradientCheckResult gradient_check(const Dataset& relabeled, double tau,
                                          const EpistemicEstimator& estimator,
                                          CalibratorForm form, std::uint64_t seed,
                                          std::size_t hidden = 8, int n_points = 10,
                                          double tol = 1e-4) {
  detail::CalibratorObjective obj(relabeled, tau, estimator);
  EpistemicCalibrator cal;
  cal.form = form;
  cal.u_mean = obj.u_mean();
  cal.u_std = obj.u_std();
  if (form == CalibratorForm::mlp) {
    cal.w1.assign(hidden, 0.0);
    cal.b1.assign(hidden, 0.0);
    cal.w2.assign(hidden, 0.0);
  }
  const std::size_t n_params = cal.pack().size();
  CounterRng rng(seed, /*stream=*/11);
  GradientCheckResult res;
  res.max_rel_err = 0.0;
  for (int pt = 0; pt < n_points; ++pt) {
    std::vector<double> params(n_params);
    for (std::size_t p = 0; p < n_params; ++p)
      params[p] = 2.0 * rng.uniform(static_cast<std::uint64_t>(pt), p) - 1.0;
    cal.unpack(params);
    std::vector<double> analytic(n_params);
    obj.loss_grad(cal, analytic);
    std::vector<double> fd(n_params);
    for (std::size_t p = 0; p < n_params; ++p) {
      const double h = 1e-5 * std::max(1.0, std::abs(params[p]));
      auto plus = params, minus = params;
      plus[p] += h;
      minus[p] -= h;
      cal.unpack(plus);
      const double lp = obj.loss(cal);
      cal.unpack(minus);
      const double lm = obj.loss(cal);
      fd[p] = (lp - lm) / (2.0 * h);
    }
    double num = 0.0, da = 0.0, df = 0.0;
    for (std::size_t p = 0; p < n_params; ++p) {
      num += (analytic[p] - fd[p]) * (analytic[p] - fd[p]);
      da += analytic[p] * analytic[p];
      df += fd[p] * fd[p];
    }
    const double rel = std::sqrt(num) / std::max({std::sqrt(da), std::sqrt(df), 1e-12});
    res.max_rel_err = std::max(res.max_rel_err, rel);
  }
  res.pass = res.max_rel_err < tol;
  return res;
}

}  // namespace u2c

#endif
