#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "oracle.hpp"
#include "u2c/metrics.hpp"
#include "u2c/rng.hpp"

namespace {

u2c::ExtendedPrediction pred(std::vector<double> probs) {
  u2c::ExtendedPrediction p;
  p.probs = std::move(probs);
  std::size_t best = 0;
  for (std::size_t i = 1; i < p.probs.size(); ++i)
    if (p.probs[i] > p.probs[best]) best = i;
  p.predicted = static_cast<int>(best) + 1;
  p.confidence = p.probs[best];
  return p;
}

// random prediction sets with occasional exact-boundary confidences and zeros
std::pair<std::vector<u2c::ExtendedPrediction>, std::vector<int>> random_case(
    u2c::CounterRng& rng, std::uint64_t t) {
  const std::size_t n = 1 + static_cast<std::size_t>(rng.uniform(t, 0) * 40);
  const int k = 2 + static_cast<int>(rng.uniform(t, 1) * 3);  // 3..5 outcomes
  std::vector<u2c::ExtendedPrediction> preds;
  std::vector<int> labels;
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> raw(k + 1);
    double s = 0.0;
    for (int j = 0; j <= k; ++j) {
      raw[j] = rng.uniform(t, 10 + 100 * i + j);
      if (rng.uniform(t, 500 + 100 * i + j) < 0.15) raw[j] = 0.0;  // exact zeros
      s += raw[j];
    }
    if (s == 0.0) {
      raw[0] = 1.0;
      s = 1.0;
    }
    for (auto& v : raw) v /= s;
    auto p = pred(raw);
    if (rng.uniform(t, 900 + i) < 0.2) {
      // snap confidence to a bin edge to exercise the right-closed rule
      const int edge = 1 + static_cast<int>(rng.uniform(t, 901 + i) * 14);
      p.confidence = static_cast<double>(edge) / 15.0;
    }
    preds.push_back(p);
    labels.push_back(1 + static_cast<int>(rng.uniform(t, 950 + i) * (k + 1)));
  }
  return {preds, labels};
}

}  // namespace

TEST_CASE("err counts extended-label mismatches") {
  const std::vector<u2c::ExtendedPrediction> preds{
      pred({0.9, 0.05, 0.05}), pred({0.1, 0.8, 0.1}), pred({0.2, 0.1, 0.7})};
  // predicted 1,2,3 against labels 1,3,3
  CHECK(u2c::err(preds, {1, 3, 3}) == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
  CHECK(u2c::err(preds, {1, 2, 3}) == 0.0);
  CHECK(u2c::err(preds, {2, 3, 1}) == 1.0);
}

TEST_CASE("err rejects mismatched or empty input") {
  const std::vector<u2c::ExtendedPrediction> preds{pred({1.0, 0.0})};
  CHECK_THROWS_AS(u2c::err(preds, {1, 2}), u2c::InputError);
  CHECK_THROWS_AS(u2c::err({}, {}), u2c::InputError);
}

TEST_CASE("ece worked example: two records at confidence 0.8, half correct") {
  const std::vector<u2c::ExtendedPrediction> preds{pred({0.8, 0.2}), pred({0.8, 0.2})};
  // both land in the same bin: |acc - conf| = |0.5 - 0.8| = 0.3
  CHECK(u2c::ece(preds, {1, 2}, 15) == doctest::Approx(0.3).epsilon(1e-15));
}

TEST_CASE("ece bin index follows the right-closed convention") {
  CHECK(u2c::detail::ece_bin_index(0.0, 15) == 0);
  CHECK(u2c::detail::ece_bin_index(1.0 / 15.0, 15) == 0);   // edge belongs below
  CHECK(u2c::detail::ece_bin_index(std::nextafter(1.0 / 15.0, 1.0), 15) == 1);
  CHECK(u2c::detail::ece_bin_index(1.0, 15) == 14);
}

TEST_CASE("single-bin ece equals |accuracy - mean confidence| exactly") {
  u2c::CounterRng rng(55, 0);
  for (std::uint64_t t = 0; t < 50; ++t) {
    auto [preds, labels] = random_case(rng, t);
    double conf = 0.0;
    std::size_t correct = 0;
    for (std::size_t i = 0; i < preds.size(); ++i) {
      conf += preds[i].confidence;
      if (preds[i].predicted == labels[i]) ++correct;
    }
    const double want =
        std::abs(double(correct) / preds.size() - conf / preds.size());
    CHECK(u2c::ece(preds, labels, 1) == want);
  }
}

TEST_CASE("ece rejects confidence outside the unit interval") {
  auto p = pred({0.5, 0.5});
  p.confidence = 1.5;
  CHECK_THROWS_AS(u2c::ece({p}, {1}, 15), u2c::InputError);
}

TEST_CASE("nll worked examples") {
  SUBCASE("zero probability on the label flags infinity and counts the event") {
    const std::vector<u2c::ExtendedPrediction> preds{pred({0.0, 0.0, 1.0}), pred({0.5, 0.25, 0.25})};
    const auto r = u2c::nll(preds, {1, 1});
    CHECK(r.infinite);
    CHECK(r.zero_events == 1);
    CHECK(r.finite_mean == doctest::Approx(std::log(2.0)).epsilon(1e-15));
  }
  SUBCASE("uniform probabilities give log of the outcome count") {
    const std::vector<u2c::ExtendedPrediction> preds{pred({0.25, 0.25, 0.25, 0.25})};
    const auto r = u2c::nll(preds, {3});
    CHECK_FALSE(r.infinite);
    CHECK(r.finite_mean == doctest::Approx(std::log(4.0)).epsilon(1e-15));
  }
}

TEST_CASE("metrics are invariant under permuting the records") {
  u2c::CounterRng rng(56, 0);
  auto [preds, labels] = random_case(rng, 7);
  std::vector<std::size_t> idx(preds.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::reverse(idx.begin(), idx.end());
  std::vector<u2c::ExtendedPrediction> p2;
  std::vector<int> l2;
  for (auto i : idx) {
    p2.push_back(preds[i]);
    l2.push_back(labels[i]);
  }
  CHECK(u2c::err(preds, labels) == u2c::err(p2, l2));
  CHECK(u2c::ece(preds, labels, 15) == doctest::Approx(u2c::ece(p2, l2, 15)).epsilon(1e-15));
  const auto a = u2c::nll(preds, labels);
  const auto b = u2c::nll(p2, l2);
  CHECK(a.infinite == b.infinite);
  CHECK(a.finite_mean == doctest::Approx(b.finite_mean).epsilon(1e-14));
}

TEST_CASE("all three metrics match the brute-force oracle on random inputs") {
  u2c::CounterRng rng(57, 0);
  for (std::uint64_t t = 0; t < 1000; ++t) {
    auto [preds, labels] = random_case(rng, t);
    const int n_bins = 1 + static_cast<int>(rng.uniform(t, 2) * 20);
    const auto want = oracle::metrics(preds, labels, n_bins);
    const auto rep = u2c::evaluate(preds, labels, n_bins);
    CHECK(std::abs(rep.err - want.err) <= 1e-12);
    CHECK(std::abs(rep.ece - want.ece) <= 1e-12);
    CHECK(rep.nll_infinite == want.nll_infinite);
    CHECK(rep.nll_zero_events == want.nll_zero_events);
    CHECK(std::abs(rep.nll - want.nll) <= 1e-12);
  }
}

TEST_CASE("evaluate exposes per-bin diagnostics") {
  const std::vector<u2c::ExtendedPrediction> preds{pred({0.8, 0.2}), pred({0.8, 0.2})};
  const auto rep = u2c::evaluate(preds, {1, 2}, 15);
  REQUIRE(rep.bins.size() == 15);
  const auto b = u2c::detail::ece_bin_index(0.8, 15);
  CHECK(rep.bins[b].count == 2);
  CHECK(rep.bins[b].mean_confidence == doctest::Approx(0.8).epsilon(1e-15));
  CHECK(rep.bins[b].accuracy == 0.5);
}
