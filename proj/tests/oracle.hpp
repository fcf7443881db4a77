// Independent brute-force oracles. These deliberately share no helpers with
// the library's metrics/calibration code paths: plain loops, naive summation,
// explicit binning.
#ifndef U2C_TESTS_ORACLE_HPP
#define U2C_TESTS_ORACLE_HPP

#include <cmath>
#include <cstddef>
#include <vector>

#include "u2c/data.hpp"
#include "u2c/predictors.hpp"

namespace oracle {

struct Metrics {
  double err = 0.0;
  double ece = 0.0;
  double nll = 0.0;
  bool nll_infinite = false;
  std::size_t nll_zero_events = 0;
};

inline Metrics metrics(const std::vector<u2c::ExtendedPrediction>& preds,
                       const std::vector<int>& labels, int n_bins) {
  Metrics m;
  const std::size_t n = preds.size();

  std::size_t wrong = 0;
  for (std::size_t i = 0; i < n; ++i)
    if (preds[i].predicted != labels[i]) ++wrong;
  m.err = double(wrong) / double(n);

  double ece_total = 0.0;
  for (int b = 0; b < n_bins; ++b) {
    const double lo = double(b) / n_bins;
    const double hi = double(b + 1) / n_bins;
    double conf_sum = 0.0;
    std::size_t cnt = 0, correct = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const double c = preds[i].confidence;
      const bool inside = (b == 0) ? (c >= 0.0 && c <= hi) : (c > lo && c <= hi);
      if (!inside) continue;
      ++cnt;
      conf_sum += c;
      if (preds[i].predicted == labels[i]) ++correct;
    }
    if (cnt > 0)
      ece_total += (double(cnt) / double(n)) * std::abs(double(correct) / cnt - conf_sum / cnt);
  }
  m.ece = ece_total;

  double nll_sum = 0.0;
  std::size_t finite = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double p = preds[i].probs[labels[i] - 1];
    if (p == 0.0) {
      m.nll_infinite = true;
      ++m.nll_zero_events;
    } else {
      nll_sum += -std::log(p);
      ++finite;
    }
  }
  m.nll = finite > 0 ? nll_sum / finite : 0.0;
  return m;
}

// Eq-by-eq re-implementation of the constant-calibrator loss: extended
// softmax cross-entropy with the (c+1)-th logit fixed to b.
inline double constant_loss(const u2c::Dataset& relabeled, double tau, double b) {
  double total = 0.0;
  for (const auto& r : relabeled.records) {
    double zmax = b;
    for (double l : r.logits) zmax = std::max(zmax, l / tau);
    double denom = std::exp(b - zmax);
    for (double l : r.logits) denom += std::exp(l / tau - zmax);
    const double target = r.label == relabeled.c + 1 ? b : r.logits[r.label - 1] / tau;
    total += std::log(denom) + zmax - target;
  }
  return total / double(relabeled.size());
}

struct BestConstant {
  double value = 0.0;
  double loss = 0.0;
};

/// 1001-point grid over [min scaled logit - 5, max scaled logit + 5].
inline BestConstant best_constant_calibrator(const u2c::Dataset& relabeled, double tau) {
  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  for (const auto& r : relabeled.records)
    for (double l : r.logits) {
      lo = std::min(lo, l / tau);
      hi = std::max(hi, l / tau);
    }
  lo -= 5.0;
  hi += 5.0;
  BestConstant best;
  best.loss = std::numeric_limits<double>::infinity();
  for (int i = 0; i <= 1000; ++i) {
    const double b = lo + (hi - lo) * i / 1000.0;
    const double l = constant_loss(relabeled, tau, b);
    if (l < best.loss) {
      best.loss = l;
      best.value = b;
    }
  }
  return best;
}

/// Brute-force ASH reshape: a position survives when fewer than `keep`
/// positions beat it (larger magnitude, or equal magnitude at lower index).
inline std::vector<double> ash_reshape(const std::vector<double>& phi, double p, double fill) {
  const std::size_t d = phi.size();
  const auto keep = static_cast<std::size_t>(std::ceil(p * double(d)));
  std::vector<double> out(d, 0.0);
  for (std::size_t i = 0; i < d; ++i) {
    std::size_t beaten_by = 0;
    for (std::size_t j = 0; j < d; ++j) {
      if (j == i) continue;
      const double mi = std::abs(phi[i]), mj = std::abs(phi[j]);
      if (mj > mi || (mj == mi && j < i)) ++beaten_by;
    }
    if (beaten_by < keep) out[i] = fill;
  }
  return out;
}

}  // namespace oracle

#endif
