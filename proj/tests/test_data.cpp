#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>

#include "u2c/calibration.hpp"
#include "u2c/data.hpp"
#include "u2c/estimators.hpp"
#include "u2c/rng.hpp"

namespace {

std::string temp_file(const std::string& name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path);
  out << content;
}

}  // namespace

TEST_CASE("csv row maps directly onto a record") {
  const auto path = temp_file("u2c_basic.csv");
  write_file(path, "id,label,logit_0,logit_1\na,1,0.1,0.9\n");
  const auto ds = u2c::load_dataset(path, u2c::Split::train_val);
  REQUIRE(ds.c == 2);
  REQUIRE(ds.size() == 1);
  CHECK(ds.records[0].id == "a");
  CHECK(ds.records[0].label == 1);
  CHECK(ds.records[0].logits == std::vector<double>{0.1, 0.9});
  CHECK_FALSE(ds.records[0].features.has_value());
  CHECK_FALSE(ds.records[0].u_score.has_value());
}

TEST_CASE("non-finite logit is a data error naming the cell") {
  const auto path = temp_file("u2c_nan.csv");
  write_file(path, "id,label,logit_0,logit_1\na,1,NaN,0.9\n");
  CHECK_THROWS_WITH_AS(u2c::load_dataset(path, u2c::Split::train_val),
                       doctest::Contains("logit_0"), u2c::DataError);
}

TEST_CASE("row order is preserved") {
  const auto path = temp_file("u2c_order.csv");
  write_file(path, "id,label,logit_0,logit_1\nx,1,0,0\ny,2,0,0\nz,1,0,0\n");
  const auto ds = u2c::load_dataset(path, u2c::Split::train_val);
  REQUIRE(ds.size() == 3);
  CHECK(ds.records[0].id == "x");
  CHECK(ds.records[1].id == "y");
  CHECK(ds.records[2].id == "z");
}

TEST_CASE("label out of range is a data error") {
  const auto path = temp_file("u2c_label.csv");
  write_file(path, "id,label,logit_0,logit_1\na,4,0,0\n");
  CHECK_THROWS_AS(u2c::load_dataset(path, u2c::Split::train_val), u2c::DataError);
}

TEST_CASE("cell count mismatch is a schema error naming the row") {
  const auto path = temp_file("u2c_dims.csv");
  write_file(path, "id,label,logit_0,logit_1\na,1,0.5\n");
  CHECK_THROWS_WITH_AS(u2c::load_dataset(path, u2c::Split::train_val), doctest::Contains("row 2"),
                       u2c::SchemaError);
}

TEST_CASE("in-domain split rejects the out-domain label") {
  const auto path = temp_file("u2c_ood_label.csv");
  write_file(path, "id,label,logit_0,logit_1\na,3,0,0\n");
  CHECK_THROWS_AS(u2c::load_dataset(path, u2c::Split::test_in), u2c::DataError);
  CHECK_NOTHROW(u2c::load_dataset(path, u2c::Split::out_domain));
}

TEST_CASE("out-domain file without a label column assigns c+1 everywhere") {
  const auto path = temp_file("u2c_nolabel.csv");
  write_file(path, "id,logit_0,logit_1\na,0.3,0.7\nb,1,2\n");
  const auto ds = u2c::load_dataset(path, u2c::Split::out_domain);
  REQUIRE(ds.size() == 2);
  CHECK(ds.records[0].label == 3);
  CHECK(ds.records[1].label == 3);
}

TEST_CASE("save/load round-trip is bit-exact and loading is pure") {
  u2c::Dataset ds;
  ds.c = 3;
  ds.d_feat = 2;
  ds.split = u2c::Split::test_in;
  u2c::CounterRng rng(42, 0);
  for (int i = 0; i < 50; ++i) {
    u2c::Record r;
    r.id = "r" + std::to_string(i);
    r.label = 1 + static_cast<int>(rng.uniform(i, 0) * 3);
    for (int j = 0; j < 3; ++j) r.logits.push_back(100.0 * (rng.uniform(i, j + 1) - 0.5));
    r.features = std::vector<double>{rng.normal(i, 20), rng.normal(i, 22)};
    r.u_score = rng.normal(i, 24) * 1e-7;
    ds.records.push_back(r);
  }
  const auto path = temp_file("u2c_roundtrip.csv");
  u2c::save_dataset(ds, path);
  const auto back = u2c::load_dataset(path, u2c::Split::test_in);
  const auto again = u2c::load_dataset(path, u2c::Split::test_in);
  REQUIRE(back.size() == ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i) {
    CHECK(back.records[i].label == ds.records[i].label);
    for (int j = 0; j < 3; ++j) CHECK(back.records[i].logits[j] == ds.records[i].logits[j]);
    for (int j = 0; j < 2; ++j)
      CHECK((*back.records[i].features)[j] == (*ds.records[i].features)[j]);
    CHECK(*back.records[i].u_score == *ds.records[i].u_score);
    CHECK(again.records[i].logits == back.records[i].logits);
  }
}

TEST_CASE("validate_compatibility") {
  u2c::Dataset ds;
  ds.c = 2;
  ds.records.push_back({"a", 1, {0.0, 0.0}, std::nullopt, std::nullopt});
  u2c::CalibratedModel model;
  model.c = 2;

  SUBCASE("matching class count is ok") { CHECK_NOTHROW(u2c::validate_compatibility(ds, model)); }
  SUBCASE("class count mismatch names the dimension") {
    model.c = 3;
    CHECK_THROWS_WITH_AS(u2c::validate_compatibility(ds, model),
                         doctest::Contains("class count"), u2c::CompatError);
  }
  SUBCASE("feature-hungry estimator without features") {
    model.estimator.kind = u2c::EstimatorKind::knn;
    CHECK_THROWS_WITH_AS(u2c::validate_compatibility(ds, model),
                         doctest::Contains("features required"), u2c::CompatError);
  }
  SUBCASE("precomputed u column satisfies a feature-hungry estimator") {
    model.estimator.kind = u2c::EstimatorKind::knn;
    ds.records[0].u_score = 1.0;
    CHECK_NOTHROW(u2c::validate_compatibility(ds, model));
  }
}
