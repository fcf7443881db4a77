#ifndef U2C_METRICS_HPP
#define U2C_METRICS_HPP

#include <cmath>
#include <cstddef>
#include <vector>

#include "u2c/common.hpp"
#include "u2c/predictors.hpp"

namespace u2c {

struct EceBin {
  std::size_t count = 0;
  double mean_confidence = 0.0;
  double accuracy = 0.0;
};

struct MetricsReport {
  double err = 0.0;
  double ece = 0.0;
  double nll = 0.0;            // finite mean; over non-zero-probability records when flagged
  bool nll_infinite = false;   // some record had zero probability on its true class
  std::size_t nll_zero_events = 0;
  std::size_t n = 0;
  std::vector<EceBin> bins;
};

/// Fraction of records whose extended argmax misses the label.
inline double err(const std::vector<ExtendedPrediction>& preds, const std::vector<int>& labels) {
  if (preds.size() != labels.size()) throw InputError("err: length mismatch");
  if (preds.empty()) throw InputError("err: empty input");
  std::size_t wrong = 0;
  for (std::size_t i = 0; i < preds.size(); ++i)
    if (preds[i].predicted != labels[i]) ++wrong;
  return static_cast<double>(wrong) / static_cast<double>(preds.size());
}

namespace detail {

// equal-width right-closed bins over [0,1]; confidence 0 lands in bin 0
inline std::size_t ece_bin_index(double conf, int n_bins) {
  if (conf <= 0.0) return 0;
  const auto b = static_cast<std::size_t>(std::ceil(conf * n_bins)) - 1;
  return std::min(b, static_cast<std::size_t>(n_bins - 1));
}

}  // namespace detail

/// Binned expected calibration error; empty bins contribute nothing.
inline double ece(const std::vector<ExtendedPrediction>& preds, const std::vector<int>& labels,
                  int n_bins, std::vector<EceBin>* bins_out = nullptr) {
  if (preds.size() != labels.size()) throw InputError("ece: length mismatch");
  if (preds.empty()) throw InputError("ece: empty input");
  if (n_bins < 1) throw InputError("ece: n_bins must be at least 1");
  std::vector<std::size_t> count(n_bins, 0);
  std::vector<double> conf_sum(n_bins, 0.0);
  std::vector<std::size_t> correct(n_bins, 0);
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const double c = preds[i].confidence;
    if (c < 0.0 || c > 1.0) throw InputError("ece: confidence outside [0,1]");
    const auto b = detail::ece_bin_index(c, n_bins);
    ++count[b];
    conf_sum[b] += c;
    if (preds[i].predicted == labels[i]) ++correct[b];
  }
  const auto n = static_cast<double>(preds.size());
  double total = 0.0;
  if (bins_out) bins_out->assign(n_bins, EceBin{});
  for (int b = 0; b < n_bins; ++b) {
    if (count[b] == 0) continue;
    const auto nb = static_cast<double>(count[b]);
    const double acc = static_cast<double>(correct[b]) / nb;
    const double conf = conf_sum[b] / nb;
    total += (nb / n) * std::abs(acc - conf);
    if (bins_out) (*bins_out)[b] = EceBin{count[b], conf, acc};
  }
  return total;
}

struct NllResult {
  double finite_mean = 0.0;
  bool infinite = false;
  std::size_t zero_events = 0;
};

/// Mean of -log(probability assigned to the true class). Zero probabilities
/// set the infinite flag; the finite mean over the remaining records and the
/// zero-event count are reported alongside.
inline NllResult nll(const std::vector<ExtendedPrediction>& preds, const std::vector<int>& labels) {
  if (preds.size() != labels.size()) throw InputError("nll: length mismatch");
  if (preds.empty()) throw InputError("nll: empty input");
  std::vector<double> terms;
  terms.reserve(preds.size());
  NllResult res;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const double p = preds[i].probs[labels[i] - 1];
    if (p == 0.0) {
      res.infinite = true;
      ++res.zero_events;
    } else {
      terms.push_back(-std::log(p));
    }
  }
  res.finite_mean = terms.empty() ? 0.0 : pairwise_mean(terms);
  return res;
}

inline std::vector<int> labels_of(const Dataset& d) {
  std::vector<int> out;
  out.reserve(d.size());
  for (const auto& r : d.records) out.push_back(r.label);
  return out;
}

inline MetricsReport evaluate(const std::vector<ExtendedPrediction>& preds,
                              const std::vector<int>& labels, int n_bins = 15) {
  MetricsReport rep;
  rep.n = preds.size();
  rep.err = err(preds, labels);
  rep.ece = ece(preds, labels, n_bins, &rep.bins);
  const auto r = nll(preds, labels);
  rep.nll = r.finite_mean;
  rep.nll_infinite = r.infinite;
  rep.nll_zero_events = r.zero_events;
  return rep;
}

}  // namespace u2c

#endif
