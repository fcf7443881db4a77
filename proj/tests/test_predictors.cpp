#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "u2c/predictors.hpp"
#include "u2c/rng.hpp"

namespace {

u2c::Record rec(std::vector<double> logits, std::optional<double> u = std::nullopt) {
  u2c::Record r;
  r.id = "t";
  r.label = 1;
  r.logits = std::move(logits);
  r.u_score = u;
  return r;
}

// maxlogit estimator plus a constant tau_u, the simplest fully explicit model
u2c::CalibratedModel make_model(int c, double tau, double theta, double tau_u_const) {
  u2c::CalibratedModel m;
  m.c = c;
  m.tau = tau;
  m.theta = theta;
  m.alpha = 0.95;
  m.estimator.kind = u2c::EstimatorKind::maxlogit;
  m.tau_u.form = u2c::CalibratorForm::linear;
  m.tau_u.u_mean = 0.0;
  m.tau_u.u_std = 1.0;
  m.tau_u.a = 0.0;
  m.tau_u.b = tau_u_const;
  return m;
}

}  // namespace

TEST_CASE("softmax worked examples") {
  const std::vector<double> even{0.0, 0.0};
  CHECK(u2c::softmax(even) == std::vector<double>{0.5, 0.5});

  const std::vector<double> ln2{std::log(2.0), 0.0};
  const auto p = u2c::softmax(ln2);
  CHECK(p[0] == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
  CHECK(p[1] == doctest::Approx(1.0 / 3.0).epsilon(1e-15));

  // extreme inputs stay finite thanks to max subtraction
  const std::vector<double> big{1000.0, 0.0};
  const auto q = u2c::softmax(big);
  CHECK(q[0] == 1.0);
  CHECK(q[1] == 0.0);
}

TEST_CASE("softmax rejects non-finite input") {
  const std::vector<double> bad{1.0, std::numeric_limits<double>::infinity()};
  CHECK_THROWS_AS(u2c::softmax(bad), u2c::NumericError);
}

TEST_CASE("softmax sums to one on random inputs") {
  u2c::CounterRng rng(21, 0);
  for (int t = 0; t < 100; ++t) {
    std::vector<double> z(2 + t % 6);
    for (std::size_t j = 0; j < z.size(); ++j) z[j] = 50.0 * rng.normal(t, 2 * j);
    const auto p = u2c::softmax(z);
    double s = 0.0;
    for (double v : p) {
      CHECK(v >= 0.0);
      s += v;
    }
    CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("rc_predict keeps the scaled softmax when u is below theta") {
  const auto m = make_model(2, 2.0, /*theta=*/0.0, -100.0);
  // u = -max logit = -2, below theta
  const auto p = u2c::rc_predict(m, rec({2.0, 0.0}));
  REQUIRE(p.probs.size() == 3);
  const auto base = u2c::softmax(std::vector<double>{1.0, 0.0});
  CHECK(p.probs[0] == base[0]);
  CHECK(p.probs[1] == base[1]);
  CHECK(p.probs[2] == 0.0);
  CHECK(p.predicted == 1);
  CHECK(p.confidence == base[0]);
}

TEST_CASE("rc_predict abstains with total confidence at u == theta") {
  const auto m = make_model(2, 1.0, /*theta=*/-2.0, -100.0);
  const auto p = u2c::rc_predict(m, rec({2.0, 0.0}));  // u = -2 exactly
  CHECK(p.probs == std::vector<double>{0.0, 0.0, 1.0});
  CHECK(p.predicted == 3);
  CHECK(p.confidence == 1.0);
}

TEST_CASE("u2c_predict appends tau_u(u) as an extra logit") {
  const auto m = make_model(2, 1.0, 1e18, /*tau_u=*/0.5);
  const auto p = u2c::u2c_predict(m, rec({2.0, 0.0}));
  const auto want = u2c::softmax(std::vector<double>{2.0, 0.0, 0.5});
  REQUIRE(p.probs.size() == 3);
  for (int i = 0; i < 3; ++i) CHECK(p.probs[i] == want[i]);
  CHECK(p.predicted == 1);
}

TEST_CASE("a huge tau_u drives the out-domain probability to one") {
  const auto m = make_model(2, 1.0, 1e18, /*tau_u=*/50.0);
  const auto p = u2c::u2c_predict(m, rec({2.0, 0.0}));
  CHECK(p.probs[2] >= 1.0 - 1e-20);
  CHECK(p.predicted == 3);
}

TEST_CASE("assign_region covers all four quadrants") {
  // theta = 0, tau_u = 0: RC rejects when u >= 0, U2C when max scaled logit < 0
  const auto m = make_model(2, 1.0, 0.0, 0.0);
  CHECK(u2c::assign_region(m, rec({1.0, 0.0})) == u2c::Region::A);    // u=-1, max=1
  CHECK(u2c::assign_region(m, rec({-1.0, -2.0})) == u2c::Region::D);  // u=1, max=-1
  // passthrough u decouples the two predicates
  CHECK(u2c::assign_region(m, rec({-1.0, -2.0}, -5.0)) == u2c::Region::B);  // accept RC, reject U2C
  CHECK(u2c::assign_region(m, rec({1.0, 0.0}, 5.0)) == u2c::Region::C);     // reject RC, accept U2C
}

TEST_CASE("region boundary: max scaled logit equal to tau_u accepts under U2C") {
  const auto m = make_model(2, 1.0, 1e18, /*tau_u=*/1.0);
  // tie between logit 1.0 and the appended 1.0: extended argmax picks class 1
  CHECK(u2c::assign_region(m, rec({1.0, 0.0})) == u2c::Region::A);
  const auto p = u2c::u2c_predict(m, rec({1.0, 0.0}));
  CHECK(p.predicted == 1);
}

TEST_CASE("U2C rejection predicate agrees with the extended argmax") {
  const auto m = make_model(3, 1.7, 0.3, 0.8);
  u2c::CounterRng rng(33, 0);
  for (int t = 0; t < 500; ++t) {
    std::vector<double> z(3);
    for (int j = 0; j < 3; ++j) z[j] = 3.0 * rng.normal(t, 2 * j);
    const auto r = rec(z);
    const auto region = u2c::assign_region(m, r);
    const auto p = u2c::u2c_predict(m, r);
    const bool u2c_rejected = (region == u2c::Region::B || region == u2c::Region::D);
    CHECK(u2c_rejected == (p.predicted == 4));
  }
}

TEST_CASE("RC and U2C agree on the argmax in region A") {
  const auto m = make_model(3, 1.3, 0.5, -0.5);
  u2c::CounterRng rng(34, 0);
  for (int t = 0; t < 500; ++t) {
    std::vector<double> z(3);
    for (int j = 0; j < 3; ++j) z[j] = 2.0 * rng.normal(t, 2 * j);
    const auto r = rec(z);
    if (u2c::assign_region(m, r) != u2c::Region::A) continue;
    CHECK(u2c::rc_predict(m, r).predicted == u2c::u2c_predict(m, r).predicted);
  }
}

TEST_CASE("rc probabilities are invariant to a constant logit shift") {
  const auto m = make_model(3, 2.0, 1e18, 0.0);
  const auto p1 = u2c::rc_predict(m, rec({1.0, 2.0, 3.0}));
  const auto p2 = u2c::rc_predict(m, rec({1.0 + 7.0, 2.0 + 7.0, 3.0 + 7.0}));
  for (int i = 0; i < 4; ++i) CHECK(p1.probs[i] == doctest::Approx(p2.probs[i]).epsilon(1e-14));
}

TEST_CASE("predict_all validates compatibility before predicting") {
  const auto m = make_model(3, 1.0, 0.0, 0.0);
  u2c::Dataset ds;
  ds.c = 2;  // model expects 3 classes
  ds.records.push_back(rec({0.0, 0.0}));
  CHECK_THROWS_AS(u2c::predict_all(u2c::Method::rc, m, ds), u2c::CompatError);
}
