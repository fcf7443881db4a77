#ifndef U2C_REGIONS_HPP
#define U2C_REGIONS_HPP

#include <array>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "u2c/calibration.hpp"
#include "u2c/common.hpp"
#include "u2c/metrics.hpp"
#include "u2c/predictors.hpp"

namespace u2c {

struct RegionSummary {
  std::size_t n = 0;
  std::array<std::size_t, 4> counts{};
  std::array<double, 4> masses{};
  // conditional error of the bare classifier argmax_j f_tau(x)_j per region;
  // empty regions stay unset rather than reporting 0 or NaN
  std::array<std::optional<double>, 4> classifier_err{};
};

namespace detail {

inline int bare_argmax_class(const Record& r) {
  std::size_t best = 0;
  for (std::size_t j = 1; j < r.logits.size(); ++j)
    if (r.logits[j] > r.logits[best]) best = j;
  return static_cast<int>(best) + 1;
}

}  // namespace detail

/// Empirical region masses plus the per-region conditional error of the bare
/// in-domain classifier.
inline RegionSummary region_masses(const CalibratedModel& m, const Dataset& d) {
  if (d.records.empty()) throw InputError("region_masses: empty dataset");
  validate_compatibility(d, m);
  RegionSummary s;
  s.n = d.size();
  std::array<std::size_t, 4> wrong{};
  for (const auto& r : d.records) {
    const auto reg = static_cast<std::size_t>(assign_region(m, r));
    ++s.counts[reg];
    if (detail::bare_argmax_class(r) != r.label) ++wrong[reg];
  }
  for (std::size_t g = 0; g < 4; ++g) {
    s.masses[g] = static_cast<double>(s.counts[g]) / static_cast<double>(s.n);
    if (s.counts[g] > 0)
      s.classifier_err[g] = static_cast<double>(wrong[g]) / static_cast<double>(s.counts[g]);
  }
  return s;
}

struct ErrorIdentityResiduals {
  double residual_out = 0.0;
  double residual_in = 0.0;
};

/// Both identities are exact on empirical measures, so the residuals must
/// vanish up to rounding for any model/dataset pair.
inline ErrorIdentityResiduals verify_error_identities(const CalibratedModel& m, const Dataset& d_in,
                                     const Dataset& d_out) {
  const auto in_labels = labels_of(d_in);
  const auto out_labels = labels_of(d_out);
  const double err_in_rc = err(predict_all(Method::rc, m, d_in), in_labels);
  const double err_in_u2c = err(predict_all(Method::u2c, m, d_in), in_labels);
  const double err_out_rc = err(predict_all(Method::rc, m, d_out), out_labels);
  const double err_out_u2c = err(predict_all(Method::u2c, m, d_out), out_labels);
  const auto reg_in = region_masses(m, d_in);
  const auto reg_out = region_masses(m, d_out);

  ErrorIdentityResiduals res;
  res.residual_out = (err_out_rc - err_out_u2c) - (reg_out.masses[1] - reg_out.masses[2]);
  const auto mass_err = [&](std::size_t g) {
    return reg_in.counts[g] == 0 ? 0.0 : reg_in.masses[g] * *reg_in.classifier_err[g];
  };
  res.residual_in = (err_in_rc - err_in_u2c) -
                    (reg_in.masses[2] - reg_in.masses[1] + mass_err(1) - mass_err(2));
  return res;
}

struct NllDecompositionReport {
  double u2c_nll_out_formula = 0.0;
  double u2c_nll_out_metrics = 0.0;
  double u2c_nll_in_formula = 0.0;
  double u2c_nll_in_metrics = 0.0;
  std::size_t rc_out_cd_zero_records = 0;   // out-domain in C or D: per-record nll exactly 0
  std::size_t rc_out_ab_infinite_records = 0;
  std::size_t rc_in_cd_infinite_records = 0;
  std::optional<double> rc_nll_in_ab_formula;    // plain f_tau nll, independent route
  std::optional<double> rc_nll_in_ab_predictor;  // same, via rc_predict probabilities
};

namespace detail {

// -log of the extended softmax coordinate, straight from raw inputs
inline double extended_nll_term(const Record& r, double tau, double g, int coord) {
  double zmax = g;
  for (double l : r.logits) zmax = std::max(zmax, l / tau);
  double denom = std::exp(g - zmax);
  for (double l : r.logits) denom += std::exp(l / tau - zmax);
  const double target = coord == static_cast<int>(r.logits.size()) + 1
                            ? g
                            : r.logits[coord - 1] / tau;
  return std::log(denom) + zmax - target;
}

inline double in_softmax_nll_term(const Record& r, double tau, int coord) {
  double zmax = -std::numeric_limits<double>::infinity();
  for (double l : r.logits) zmax = std::max(zmax, l / tau);
  double denom = 0.0;
  for (double l : r.logits) denom += std::exp(l / tau - zmax);
  return std::log(denom) + zmax - r.logits[coord - 1] / tau;
}

inline double in_softmax_max_prob(const Record& r, double tau) {
  double zmax = -std::numeric_limits<double>::infinity();
  for (double l : r.logits) zmax = std::max(zmax, l / tau);
  double denom = 0.0;
  for (double l : r.logits) denom += std::exp(l / tau - zmax);
  return 1.0 / denom;  // exp(zmax - zmax) / denom
}

inline double extended_out_prob(const Record& r, double tau, double g) {
  double zmax = g;
  for (double l : r.logits) zmax = std::max(zmax, l / tau);
  double denom = std::exp(g - zmax);
  for (double l : r.logits) denom += std::exp(l / tau - zmax);
  return std::exp(g - zmax) / denom;
}

inline double extended_max_in_prob(const Record& r, double tau, double g) {
  double mx = -std::numeric_limits<double>::infinity();
  double zmax = g;
  for (double l : r.logits) {
    mx = std::max(mx, l / tau);
    zmax = std::max(zmax, l / tau);
  }
  double denom = std::exp(g - zmax);
  for (double l : r.logits) denom += std::exp(l / tau - zmax);
  return std::exp(mx - zmax) / denom;
}

}  // namespace detail

/// Cross-checks the closed-form nll expressions against the metrics module
/// and asserts the exact 0/infinity pattern of RC per region. The optional
/// formula_offset shifts the independent route's tau_u values; it exists only
/// as a negative control and must be 0 in real use.
inline NllDecompositionReport verify_nll_decomposition(const CalibratedModel& m, const Dataset& d_in,
                                  const Dataset& d_out, double tol = 1e-9,
                                  double formula_offset = 0.0) {
  if (d_in.records.empty() || d_out.records.empty())
    throw InputError("verify_nll_decomposition: empty dataset");
  NllDecompositionReport rep;

  // (i)+(ii): U2C nll via the closed-form route vs the metrics route
  const auto u2c_formula = [&](const Dataset& d) {
    std::vector<double> terms(d.size());
    for (std::size_t i = 0; i < d.size(); ++i) {
      const auto& r = d.records[i];
      const double g = m.tau_u(score(m.estimator, r)) + formula_offset;
      terms[i] = detail::extended_nll_term(r, m.tau, g, r.label);
    }
    return pairwise_mean(terms);
  };
  rep.u2c_nll_out_formula = u2c_formula(d_out);
  rep.u2c_nll_in_formula = u2c_formula(d_in);
  {
    const auto out_res = nll(predict_all(Method::u2c, m, d_out), labels_of(d_out));
    const auto in_res = nll(predict_all(Method::u2c, m, d_in), labels_of(d_in));
    if (out_res.infinite || in_res.infinite)
      throw VerifyError("nll decomposition: U2C nll must be finite on every dataset");
    rep.u2c_nll_out_metrics = out_res.finite_mean;
    rep.u2c_nll_in_metrics = in_res.finite_mean;
  }
  if (std::abs(rep.u2c_nll_out_formula - rep.u2c_nll_out_metrics) > tol)
    throw VerifyError("nll decomposition: out-domain U2C nll formula disagrees with metrics");
  if (std::abs(rep.u2c_nll_in_formula - rep.u2c_nll_in_metrics) > tol)
    throw VerifyError("nll decomposition: in-domain U2C nll formula disagrees with metrics");

  // (iii): RC per-region pattern
  std::vector<double> ab_formula, ab_pred;
  for (const auto& r : d_out.records) {
    const auto reg = assign_region(m, r);
    const auto p = rc_predict(m, r);
    if (reg == Region::C || reg == Region::D) {
      if (p.probs.back() != 1.0)
        throw VerifyError("nll decomposition: RC must abstain with probability 1 in C and D");
      ++rep.rc_out_cd_zero_records;
    } else {
      if (p.probs.back() != 0.0)
        throw VerifyError("nll decomposition: RC out-domain probability must be 0 in A and B");
      ++rep.rc_out_ab_infinite_records;
    }
  }
  for (const auto& r : d_in.records) {
    const auto reg = assign_region(m, r);
    const auto p = rc_predict(m, r);
    if (reg == Region::C || reg == Region::D) {
      if (p.probs[r.label - 1] != 0.0)
        throw VerifyError("nll decomposition: RC in-domain true-class probability must be 0 in C and D");
      ++rep.rc_in_cd_infinite_records;
    } else {
      ab_formula.push_back(detail::in_softmax_nll_term(r, m.tau, r.label));
      ab_pred.push_back(-std::log(p.probs[r.label - 1]));
    }
  }
  if (!ab_formula.empty()) {
    rep.rc_nll_in_ab_formula = pairwise_mean(ab_formula);
    rep.rc_nll_in_ab_predictor = pairwise_mean(ab_pred);
    if (std::abs(*rep.rc_nll_in_ab_formula - *rep.rc_nll_in_ab_predictor) > tol)
      throw VerifyError("nll decomposition: RC nll on in-domain A and B disagrees with f_tau nll");
  }
  return rep;
}

struct CalibrationGapEntry {
  std::optional<double> closed_form;  // stated expectation from raw logits and u
  std::optional<double> rederived;    // |confidence - correctness| via the predictors
};

struct CalibrationGapReport {
  CalibrationGapEntry out_rc_a, out_rc_b, out_rc_c, out_rc_d;
  CalibrationGapEntry out_u2c_a, out_u2c_b, out_u2c_c, out_u2c_d;
  CalibrationGapEntry in_rc_c, in_rc_d;
  CalibrationGapEntry in_u2c_b, in_u2c_d;
};

/// Evaluates the region-conditional calibration-gap expectations two ways:
/// the stated closed forms computed directly from raw logits and scores, and
/// an independent per-record |confidence - correctness| derivation through
/// the predictors. Throws VerifyError naming the first clause that drifts
/// past the tolerance.
inline CalibrationGapReport verify_calibration_gaps(const CalibratedModel& m, const Dataset& d_in,
                                        const Dataset& d_out, double tol = 1e-9) {
  if (d_in.records.empty() || d_out.records.empty())
    throw InputError("verify_calibration_gaps: empty dataset");
  CalibrationGapReport rep;

  struct Acc {
    std::vector<double> closed, derived;
    void add(double c, double d) {
      closed.push_back(c);
      derived.push_back(d);
    }
    void finish(CalibrationGapEntry& e) const {
      if (closed.empty()) return;
      e.closed_form = pairwise_mean(closed);
      e.rederived = pairwise_mean(derived);
    }
  };
  std::array<Acc, 4> out_rc, out_u2c;
  std::array<Acc, 4> in_rc, in_u2c;

  const auto gap = [](const ExtendedPrediction& p, int label) {
    return std::abs(p.confidence - (p.predicted == label ? 1.0 : 0.0));
  };

  for (const auto& r : d_out.records) {
    const auto reg = static_cast<std::size_t>(assign_region(m, r));
    const double g = m.tau_u(score(m.estimator, r));
    const auto rc = rc_predict(m, r);
    const auto uc = u2c_predict(m, r);
    // RC: max in-domain softmax in A and B, exact 0 in C and D
    if (reg <= 1)
      out_rc[reg].add(detail::in_softmax_max_prob(r, m.tau), gap(rc, r.label));
    else
      out_rc[reg].add(0.0, gap(rc, r.label));
    // U2C: accepted regions show the damped in-domain max, rejected regions
    // the complement of the abstention probability
    if (reg == 0 || reg == 2)
      out_u2c[reg].add(detail::extended_max_in_prob(r, m.tau, g), gap(uc, r.label));
    else
      out_u2c[reg].add(1.0 - detail::extended_out_prob(r, m.tau, g), gap(uc, r.label));
  }
  for (const auto& r : d_in.records) {
    const auto reg = static_cast<std::size_t>(assign_region(m, r));
    const double g = m.tau_u(score(m.estimator, r));
    if (reg >= 2) in_rc[reg].add(1.0, gap(rc_predict(m, r), r.label));
    if (reg == 1 || reg == 3)
      in_u2c[reg].add(detail::extended_out_prob(r, m.tau, g), gap(u2c_predict(m, r), r.label));
  }

  out_rc[0].finish(rep.out_rc_a);
  out_rc[1].finish(rep.out_rc_b);
  out_rc[2].finish(rep.out_rc_c);
  out_rc[3].finish(rep.out_rc_d);
  out_u2c[0].finish(rep.out_u2c_a);
  out_u2c[1].finish(rep.out_u2c_b);
  out_u2c[2].finish(rep.out_u2c_c);
  out_u2c[3].finish(rep.out_u2c_d);
  in_rc[2].finish(rep.in_rc_c);
  in_rc[3].finish(rep.in_rc_d);
  in_u2c[1].finish(rep.in_u2c_b);
  in_u2c[3].finish(rep.in_u2c_d);

  const auto check = [&](const CalibrationGapEntry& e, const std::string& clause) {
    if (!e.closed_form) return;
    if (std::abs(*e.closed_form - *e.rederived) > tol)
      throw VerifyError("calibration-gap clause '" + clause + "' disagrees: closed form " +
                        std::to_string(*e.closed_form) + " vs rederived " +
                        std::to_string(*e.rederived));
  };
  check(rep.out_rc_a, "out rc A");
  check(rep.out_rc_b, "out rc B");
  check(rep.out_rc_c, "out rc C");
  check(rep.out_rc_d, "out rc D");
  check(rep.out_u2c_a, "out u2c A");
  check(rep.out_u2c_b, "out u2c B");
  check(rep.out_u2c_c, "out u2c C");
  check(rep.out_u2c_d, "out u2c D");
  check(rep.in_rc_c, "in rc C");
  check(rep.in_rc_d, "in rc D");
  check(rep.in_u2c_b, "in u2c B");
  check(rep.in_u2c_d, "in u2c D");
  return rep;
}

}  // namespace u2c

#endif
