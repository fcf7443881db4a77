#ifndef U2C_PREDICTORS_HPP
#define U2C_PREDICTORS_HPP

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "u2c/calibration.hpp"
#include "u2c/common.hpp"
#include "u2c/data.hpp"
#include "u2c/estimators.hpp"

namespace u2c {

enum class Region { A, B, C, D };

inline char region_letter(Region r) {
  switch (r) {
    case Region::A: return 'A';
    case Region::B: return 'B';
    case Region::C: return 'C';
    case Region::D: return 'D';
  }
  throw InputError("unknown region");
}

struct ExtendedPrediction {
  std::vector<double> probs;  // c+1 entries, sums to 1
  int predicted = 0;          // 1..c+1, lowest-index tie-break
  double confidence = 0.0;    // max entry of probs
  Region region = Region::A;
};

/// Max-subtracted stable softmax.
inline std::vector<double> softmax(std::span<const double> z) {
  for (double v : z)
    if (!std::isfinite(v)) throw NumericError("softmax: non-finite input");
  const double mx = *std::max_element(z.begin(), z.end());
  std::vector<double> out(z.size());
  double s = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    out[i] = std::exp(z[i] - mx);
    s += out[i];
  }
  for (auto& v : out) v /= s;
  return out;
}

namespace detail {

inline void finalize(ExtendedPrediction& p) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < p.probs.size(); ++i)
    if (p.probs[i] > p.probs[best]) best = i;
  p.predicted = static_cast<int>(best) + 1;
  p.confidence = p.probs[best];
}

}  // namespace detail

/// Region partition from the two rejection predicates: RC rejects when
/// u >= theta; U2C rejects when max_i f_tau(x)_i < tau_u(u). The strict
/// inequality keeps the region label consistent with the extended argmax,
/// whose lowest-index tie-break resolves boundary ties in favor of an
/// in-domain class.
inline Region assign_region(const CalibratedModel& m, const Record& r) {
  const double u = score(m.estimator, r);
  const bool rc_rej = u >= m.theta;
  double mx = -std::numeric_limits<double>::infinity();
  for (double l : r.logits) mx = std::max(mx, l / m.tau);
  const bool u2c_rej = mx < m.tau_u(u);
  if (!rc_rej && !u2c_rej) return Region::A;
  if (!rc_rej && u2c_rej) return Region::B;
  if (rc_rej && !u2c_rej) return Region::C;
  return Region::D;
}

/// Reject-or-classify: total-confidence abstention when u >= theta, else the
/// in-domain softmax padded with a zero.
inline ExtendedPrediction rc_predict(const CalibratedModel& m, const Record& r) {
  const double u = score(m.estimator, r);
  ExtendedPrediction p;
  p.region = assign_region(m, r);
  if (u >= m.theta) {
    p.probs.assign(static_cast<std::size_t>(m.c) + 1, 0.0);
    p.probs.back() = 1.0;
  } else {
    std::vector<double> scaled(r.logits.size());
    for (std::size_t i = 0; i < scaled.size(); ++i) scaled[i] = r.logits[i] / m.tau;
    p.probs = softmax(scaled);
    p.probs.push_back(0.0);
  }
  detail::finalize(p);
  return p;
}

/// Extended softmax over the c temperature-scaled logits plus tau_u(u).
inline ExtendedPrediction u2c_predict(const CalibratedModel& m, const Record& r) {
  const double u = score(m.estimator, r);
  ExtendedPrediction p;
  p.region = assign_region(m, r);
  std::vector<double> scaled(r.logits.size() + 1);
  for (std::size_t i = 0; i < r.logits.size(); ++i) scaled[i] = r.logits[i] / m.tau;
  scaled.back() = m.tau_u(u);
  p.probs = softmax(scaled);
  detail::finalize(p);
  return p;
}

enum class Method { rc, u2c };

inline std::string to_string(Method m) { return m == Method::rc ? "rc" : "u2c"; }

inline ExtendedPrediction predict(Method method, const CalibratedModel& m, const Record& r) {
  return method == Method::rc ? rc_predict(m, r) : u2c_predict(m, r);
}

inline std::vector<ExtendedPrediction> predict_all(Method method, const CalibratedModel& m,
                                                   const Dataset& d) {
  validate_compatibility(d, m);
  std::vector<ExtendedPrediction> out;
  out.reserve(d.size());
  for (const auto& r : d.records) out.push_back(predict(method, m, r));
  return out;
}

}  // namespace u2c

#endif
