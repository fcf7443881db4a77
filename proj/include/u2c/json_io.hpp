#ifndef U2C_JSON_IO_HPP
#define U2C_JSON_IO_HPP

#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "u2c/calibration.hpp"
#include "u2c/common.hpp"
#include "u2c/data.hpp"
#include "u2c/estimators.hpp"
#include "u2c/metrics.hpp"
#include "u2c/regions.hpp"
#include "u2c/synth.hpp"

namespace u2c {

using json = nlohmann::json;

inline constexpr int kModelVersion = 1;

namespace detail {

inline json matrix_to_json(const Matrix& m) {
  json rows = json::array();
  for (std::size_t r = 0; r < m.rows(); ++r) {
    json row = json::array();
    for (std::size_t c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

inline Matrix matrix_from_json(const json& j) {
  if (!j.is_array() || j.empty()) throw DataError("model JSON: expected a non-empty matrix");
  const std::size_t rows = j.size();
  const std::size_t cols = j.front().size();
  Matrix m(rows, cols);
  for (std::size_t r = 0; r < rows; ++r) {
    if (j[r].size() != cols) throw DataError("model JSON: ragged matrix");
    for (std::size_t c = 0; c < cols; ++c) m(r, c) = j[r][c].get<double>();
  }
  return m;
}

inline json head_to_json(const LinearHead& h) {
  return json{{"weights", matrix_to_json(h.weights)}, {"bias", h.bias}};
}

inline LinearHead head_from_json(const json& j) {
  LinearHead h;
  h.weights = matrix_from_json(j.at("weights"));
  h.bias = j.at("bias").get<std::vector<double>>();
  if (h.bias.size() != h.weights.rows()) throw DataError("head JSON: bias/weights mismatch");
  return h;
}

}  // namespace detail

inline json estimator_to_json(const EpistemicEstimator& e) {
  json params = json::object();
  switch (e.kind) {
    case EstimatorKind::maxlogit:
    case EstimatorKind::passthrough:
      break;
    case EstimatorKind::mahalanobis:
      params["means"] = e.class_means;
      params["covariance"] = detail::matrix_to_json(e.covariance);
      break;
    case EstimatorKind::knn:
      params["k"] = e.k;
      params["reference"] = detail::matrix_to_json(e.reference);
      break;
    case EstimatorKind::ash:
      params["p"] = e.ash_p;
      params["fill"] = e.ash_fill;
      params["head"] = detail::head_to_json(e.head.value());
      break;
  }
  return json{{"kind", to_string(e.kind)}, {"params", std::move(params)}};
}

inline EpistemicEstimator estimator_from_json(const json& j) {
  EpistemicEstimator e;
  e.kind = estimator_kind_from_string(j.at("kind").get<std::string>());
  const json& p = j.at("params");
  switch (e.kind) {
    case EstimatorKind::maxlogit:
    case EstimatorKind::passthrough:
      break;
    case EstimatorKind::mahalanobis:
      e.class_means = p.at("means").get<std::vector<std::vector<double>>>();
      e.covariance = detail::matrix_from_json(p.at("covariance"));
      e.cov_chol = cholesky(e.covariance);
      break;
    case EstimatorKind::knn:
      e.k = p.at("k").get<int>();
      e.reference = detail::matrix_from_json(p.at("reference"));
      if (e.k < 1 || static_cast<std::size_t>(e.k) > e.reference.rows())
        throw DataError("model JSON: knn k out of range");
      break;
    case EstimatorKind::ash:
      e.ash_p = p.at("p").get<double>();
      e.ash_fill = p.at("fill").get<double>();
      e.head = detail::head_from_json(p.at("head"));
      break;
  }
  return e;
}

inline json model_to_json(const CalibratedModel& m) {
  json tu;
  tu["form"] = to_string(m.tau_u.form);
  tu["u_mean"] = m.tau_u.u_mean;
  tu["u_std"] = m.tau_u.u_std;
  if (m.tau_u.form == CalibratorForm::linear) {
    tu["params"] = json{{"a", m.tau_u.a}, {"b", m.tau_u.b}};
  } else {
    tu["params"] = json{{"w1", m.tau_u.w1}, {"b1", m.tau_u.b1}, {"w2", m.tau_u.w2},
                        {"b2", m.tau_u.b2}};
  }
  return json{{"version", kModelVersion},
              {"c", m.c},
              {"tau", m.tau},
              {"theta", m.theta},
              {"theta_degenerate", m.theta_degenerate},
              {"alpha", m.alpha},
              {"tau_u", std::move(tu)},
              {"estimator", estimator_to_json(m.estimator)}};
}

inline CalibratedModel model_from_json(const json& j) {
  if (!j.contains("version")) throw DataError("model JSON: missing 'version' field");
  if (j.at("version").get<int>() != kModelVersion)
    throw DataError("model JSON: unsupported version " + j.at("version").dump());
  CalibratedModel m;
  m.c = j.at("c").get<int>();
  m.tau = j.at("tau").get<double>();
  m.theta = j.at("theta").get<double>();
  m.alpha = j.at("alpha").get<double>();
  m.theta_degenerate = j.value("theta_degenerate", false);
  if (!(m.tau >= 0.05 && m.tau <= 20.0))
    throw DataError("model JSON: tau violates the [0.05, 20] invariant");
  if (!(m.alpha > 0.0 && m.alpha < 1.0))
    throw DataError("model JSON: alpha violates the (0,1) invariant");
  const json& tu = j.at("tau_u");
  m.tau_u.form = calibrator_form_from_string(tu.at("form").get<std::string>());
  m.tau_u.u_mean = tu.at("u_mean").get<double>();
  m.tau_u.u_std = tu.at("u_std").get<double>();
  const json& p = tu.at("params");
  if (m.tau_u.form == CalibratorForm::linear) {
    m.tau_u.a = p.at("a").get<double>();
    m.tau_u.b = p.at("b").get<double>();
  } else {
    m.tau_u.w1 = p.at("w1").get<std::vector<double>>();
    m.tau_u.b1 = p.at("b1").get<std::vector<double>>();
    m.tau_u.w2 = p.at("w2").get<std::vector<double>>();
    m.tau_u.b2 = p.at("b2").get<double>();
    if (m.tau_u.w1.empty() || m.tau_u.b1.size() != m.tau_u.w1.size() ||
        m.tau_u.w2.size() != m.tau_u.w1.size())
      throw DataError("model JSON: inconsistent mlp parameter sizes");
  }
  for (double v : m.tau_u.pack())
    if (!std::isfinite(v)) throw DataError("model JSON: non-finite calibrator parameter");
  m.estimator = estimator_from_json(j.at("estimator"));
  return m;
}

inline void save_model(const CalibratedModel& m, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot open for writing: " + path);
  out << model_to_json(m).dump(2) << "\n";
}

inline CalibratedModel load_model(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open model file: " + path);
  json j;
  try {
    in >> j;
  } catch (const json::parse_error& e) {
    throw DataError("model JSON parse error: " + std::string(e.what()));
  }
  try {
    return model_from_json(j);
  } catch (const json::exception& e) {
    throw DataError("model JSON: " + std::string(e.what()));
  }
}

inline json metrics_to_json(const MetricsReport& rep, const std::string& split,
                            const std::string& predictor) {
  json bins = json::array();
  for (const auto& b : rep.bins)
    bins.push_back(json{{"count", b.count},
                        {"mean_confidence", b.mean_confidence},
                        {"accuracy", b.accuracy}});
  return json{{"split", split},         {"predictor", predictor},
              {"err", rep.err},         {"ece", rep.ece},
              {"nll", rep.nll},         {"nll_infinite", rep.nll_infinite},
              {"nll_zero_events", rep.nll_zero_events},
              {"n", rep.n},             {"bins", std::move(bins)}};
}

inline json region_summary_to_json(const RegionSummary& s) {
  const char* names[4] = {"A", "B", "C", "D"};
  json j;
  j["n"] = s.n;
  for (int g = 0; g < 4; ++g) {
    json entry{{"count", s.counts[g]}, {"mass", s.masses[g]}};
    if (s.classifier_err[g])
      entry["classifier_err"] = *s.classifier_err[g];
    else
      entry["classifier_err"] = nullptr;  // undefined on an empty region
    j[names[g]] = std::move(entry);
  }
  return j;
}

struct ManifestEntry {
  std::string path;
  Split split = Split::test_in;
  std::string role;  // validation | evaluation
};

inline std::vector<ManifestEntry> load_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open manifest: " + path);
  json j;
  try {
    in >> j;
  } catch (const json::parse_error& e) {
    throw DataError("manifest parse error: " + std::string(e.what()));
  }
  if (!j.is_array()) throw DataError("manifest: expected a top-level array");
  std::vector<ManifestEntry> out;
  for (const auto& item : j) {
    ManifestEntry e;
    e.path = item.at("path").get<std::string>();
    e.split = split_from_string(item.at("split").get<std::string>());
    e.role = item.at("role").get<std::string>();
    if (e.role != "validation" && e.role != "evaluation")
      throw DataError("manifest: role must be 'validation' or 'evaluation'");
    out.push_back(std::move(e));
  }
  return out;
}

inline json synth_config_to_json(const SynthConfig& cfg) {
  return json{{"c", cfg.c},
              {"d_feat", cfg.d_feat},
              {"class_means", cfg.class_means},
              {"class_cov", detail::matrix_to_json(cfg.class_cov)},
              {"out_mean", cfg.out_mean},
              {"out_cov", detail::matrix_to_json(cfg.out_cov)},
              {"eta", cfg.eta},
              {"head", detail::head_to_json(cfg.head)},
              {"n_val", cfg.n_val},
              {"n_test", cfg.n_test},
              {"n_out", cfg.n_out},
              {"seed", cfg.seed},
              {"logit_scale", cfg.logit_scale},
              {"write_u", cfg.write_u},
              {"negate_fraction", cfg.negate_fraction}};
}

inline void save_head(const LinearHead& h, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot open for writing: " + path);
  out << detail::head_to_json(h).dump(2) << "\n";
}

inline LinearHead load_head(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open head file: " + path);
  json j;
  try {
    in >> j;
  } catch (const json::parse_error& e) {
    throw DataError("head JSON parse error: " + std::string(e.what()));
  }
  return detail::head_from_json(j);
}

}  // namespace u2c

#endif
