// Command-line front end: synth, fit, predict, eval, verify, regions.
//
// Exit codes: 0 success, 2 usage, 3 data/compatibility, 4 verification
// failure, 5 numeric failure.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "u2c/calibration.hpp"
#include "u2c/json_io.hpp"
#include "u2c/metrics.hpp"
#include "u2c/predictors.hpp"
#include "u2c/regions.hpp"
#include "u2c/synth.hpp"

namespace fs = std::filesystem;
using u2c::json;

namespace {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

u2c::Dataset load_auto(const std::string& path) {
  // peek at the header: a file without a label column is out-domain
  std::ifstream in(path);
  if (!in) throw u2c::DataError("cannot open dataset file: " + path);
  std::string header;
  std::getline(in, header);
  in.close();
  const bool has_label = header.rfind("id,label", 0) == 0;
  if (!has_label) return u2c::load_dataset(path, u2c::Split::out_domain);
  try {
    return u2c::load_dataset(path, u2c::Split::test_in);
  } catch (const u2c::DataError& e) {
    if (std::string(e.what()).find("out-domain label") != std::string::npos)
      return u2c::load_dataset(path, u2c::Split::out_domain);
    throw;
  }
}

u2c::Dataset load_with_split(const std::string& path, const std::string& split) {
  if (split.empty()) return load_auto(path);
  return u2c::load_dataset(path, u2c::split_from_string(split));
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw u2c::DataError("cannot open for writing: " + path);
  out << text;
}

std::string pct(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.1f", 100.0 * v);
  return buf;
}

std::string nll_str(const u2c::MetricsReport& r) {
  if (r.nll_infinite) return "inf";
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.4f", r.nll);
  return buf;
}

// ---------------------------------------------------------------- synth ---

int cmd_synth(const std::string& out_dir, std::uint64_t seed, int classes, double eta,
              std::size_t n_val, std::size_t n_test, std::size_t n_out, double logit_scale,
              const std::string& preset) {
  u2c::SynthConfig cfg = u2c::SynthConfig::defaults(seed, classes);
  if (preset == "misspecified-u") {
    cfg.write_u = true;
    cfg.negate_fraction = 0.2;
  }
  cfg.eta = eta;
  cfg.n_val = n_val;
  cfg.n_test = n_test;
  cfg.n_out = n_out;
  cfg.logit_scale = logit_scale;

  const auto data = u2c::generate(cfg);
  fs::create_directories(out_dir);
  const fs::path dir(out_dir);
  u2c::save_dataset(data.train_val, (dir / "train_val.csv").string());
  u2c::save_dataset(data.test_in, (dir / "test_in.csv").string());
  u2c::save_dataset(data.out_domain, (dir / "out_domain.csv").string());
  write_text((dir / "config.json").string(), u2c::synth_config_to_json(cfg).dump(2) + "\n");
  u2c::save_head(cfg.head, (dir / "head.json").string());
  json manifest = json::array();
  manifest.push_back({{"path", "train_val.csv"}, {"split", "train-val"}, {"role", "validation"}});
  manifest.push_back({{"path", "test_in.csv"}, {"split", "test-in"}, {"role", "evaluation"}});
  manifest.push_back(
      {{"path", "out_domain.csv"}, {"split", "out-domain"}, {"role", "evaluation"}});
  write_text((dir / "manifest.json").string(), manifest.dump(2) + "\n");
  std::cout << "wrote " << out_dir << ": train_val.csv test_in.csv out_domain.csv config.json "
            << "head.json manifest.json\n";
  return 0;
}

// ------------------------------------------------------------------ fit ---

int cmd_fit(const std::string& val_path, const std::string& manifest_path,
            const std::string& estimator_name, int k, double ash_p, double ash_fill,
            const std::string& head_path, double alpha, const std::string& tau_u_form,
            std::size_t hidden, std::uint64_t seed, const std::string& out_path) {
  std::string va = val_path;
  if (va.empty() && !manifest_path.empty()) {
    const auto entries = u2c::load_manifest(manifest_path);
    const fs::path base = fs::path(manifest_path).parent_path();
    for (const auto& e : entries)
      if (e.role == "validation") va = (base / e.path).string();
    if (va.empty()) throw u2c::DataError("manifest has no validation entry");
  }
  if (va.empty()) throw UsageError("fit: --val or --manifest is required");

  const auto validation = u2c::load_dataset(va, u2c::Split::train_val);
  u2c::EstimatorOptions opts;
  opts.k = k;
  opts.ash_p = ash_p;
  opts.ash_fill = ash_fill;
  const auto kind = u2c::estimator_kind_from_string(estimator_name);
  if (kind == u2c::EstimatorKind::ash) {
    if (head_path.empty()) throw UsageError("fit: --head is required for the ash estimator");
    opts.head = u2c::load_head(head_path);
  }

  const double tau = u2c::fit_temperature(validation);
  const auto estimator = u2c::fit_estimator(kind, validation, opts);
  const auto u_values = u2c::score_all(estimator, validation);
  const auto threshold = u2c::fit_threshold(u_values, alpha);
  const auto relabeled = u2c::relabel(validation, estimator, threshold.theta);
  std::size_t relabeled_count = 0;
  for (const auto& r : relabeled.records)
    if (r.label == relabeled.c + 1) ++relabeled_count;

  const auto form = u2c::calibrator_form_from_string(tau_u_form);
  const auto fit = u2c::fit_epistemic_calibrator(relabeled, tau, estimator, form, seed, hidden);
  const auto grad = u2c::gradient_check(relabeled, tau, estimator, form, seed, hidden);

  u2c::CalibratedModel model;
  model.c = validation.c;
  model.tau = tau;
  model.theta = threshold.theta;
  model.alpha = alpha;
  model.theta_degenerate = threshold.degenerate;
  model.tau_u = fit.calibrator;
  model.estimator = estimator;
  u2c::save_model(model, out_path);

  char log[1024];
  std::snprintf(log, sizeof(log),
                "tau: %.17g\ntheta: %.17g\ntheta_degenerate: %s\nrelabeled: %zu of %zu\n"
                "final_loss: %.17g\nbest_constant_loss: %.17g\n"
                "gradient_check: %s (max relative error %.3e)\n",
                tau, threshold.theta, threshold.degenerate ? "yes" : "no", relabeled_count,
                validation.size(), fit.loss, fit.best_constant_loss,
                grad.pass ? "pass" : "FAIL", grad.max_rel_err);
  write_text(out_path + ".log", log);
  std::cout << log;
  if (!grad.pass) throw u2c::NumericError("fit: analytic gradient check failed");
  return 0;
}

// -------------------------------------------------------------- predict ---

int cmd_predict(const std::string& model_path, const std::string& data_path,
                const std::string& split, const std::string& method_name,
                const std::string& out_path) {
  const auto model = u2c::load_model(model_path);
  const auto data = load_with_split(data_path, split);
  const auto method = method_name == "rc" ? u2c::Method::rc : u2c::Method::u2c;
  const auto preds = u2c::predict_all(method, model, data);
  std::ofstream out(out_path);
  if (!out) throw u2c::DataError("cannot open for writing: " + out_path);
  out << "id,predicted,confidence,region";
  for (int j = 1; j <= model.c + 1; ++j) out << ",prob_" << j;
  out << "\n";
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const auto& p = preds[i];
    out << data.records[i].id << "," << p.predicted << ","
        << u2c::detail::format_double(p.confidence) << "," << u2c::region_letter(p.region);
    for (double v : p.probs) out << "," << u2c::detail::format_double(v);
    out << "\n";
  }
  return 0;
}

// ----------------------------------------------------------------- eval ---

int cmd_eval(const std::string& model_path, std::vector<std::string> eval_paths,
             const std::string& manifest_path, int n_bins, const std::string& out_dir) {
  const auto model = u2c::load_model(model_path);
  std::vector<std::pair<std::string, u2c::Dataset>> datasets;
  for (const auto& p : eval_paths) datasets.emplace_back(p, load_auto(p));
  if (!manifest_path.empty()) {
    const fs::path base = fs::path(manifest_path).parent_path();
    for (const auto& e : u2c::load_manifest(manifest_path))
      if (e.role == "evaluation") {
        const auto full = (base / e.path).string();
        datasets.emplace_back(full, u2c::load_dataset(full, e.split));
      }
  }
  if (datasets.empty()) throw UsageError("eval: --eval or --manifest is required");
  if (!out_dir.empty()) fs::create_directories(out_dir);

  std::printf("%-24s %8s %8s %8s %8s %8s %8s %9s %9s\n", "dataset", "errRC", "errU2C", "eceRC",
              "eceU2C", "dErr", "dEce", "nllRC", "nllU2C");
  for (const auto& [path, ds] : datasets) {
    u2c::validate_compatibility(ds, model);
    const auto labels = u2c::labels_of(ds);
    const auto rc = u2c::evaluate(u2c::predict_all(u2c::Method::rc, model, ds), labels, n_bins);
    const auto uc = u2c::evaluate(u2c::predict_all(u2c::Method::u2c, model, ds), labels, n_bins);
    const std::string stem = fs::path(path).stem().string();
    if (!out_dir.empty()) {
      const auto split = u2c::to_string(ds.split);
      write_text((fs::path(out_dir) / (stem + ".rc.json")).string(),
                 u2c::metrics_to_json(rc, split, "rc").dump(2) + "\n");
      write_text((fs::path(out_dir) / (stem + ".u2c.json")).string(),
                 u2c::metrics_to_json(uc, split, "u2c").dump(2) + "\n");
    }
    // err/ece as percentages to one decimal; delta is U2C minus RC
    std::printf("%-24s %8s %8s %8s %8s %8s %8s %9s %9s\n", stem.c_str(), pct(rc.err).c_str(),
                pct(uc.err).c_str(), pct(rc.ece).c_str(), pct(uc.ece).c_str(),
                pct(uc.err - rc.err).c_str(), pct(uc.ece - rc.ece).c_str(), nll_str(rc).c_str(),
                nll_str(uc).c_str());
  }
  return 0;
}

// --------------------------------------------------------------- verify ---

int cmd_verify(const std::string& model_path, const std::string& in_path,
               const std::string& out_path, const std::string& json_path, bool sabotage) {
  const auto model = u2c::load_model(model_path);
  const auto d_in = load_with_split(in_path, "test-in");
  const auto d_out = load_with_split(out_path, "out-domain");

  const auto l1 = u2c::verify_error_identities(model, d_in, d_out);
  if (std::abs(l1.residual_out) > 1e-12 || std::abs(l1.residual_in) > 1e-12)
    throw u2c::VerifyError("error identity: residuals exceed 1e-12 (out " +
                           std::to_string(l1.residual_out) + ", in " +
                           std::to_string(l1.residual_in) + ")");
  std::printf("error identities   pass  (residual out %.3e, in %.3e)\n", l1.residual_out,
              l1.residual_in);

  const double offset = sabotage ? 0.25 : 0.0;
  const auto l2 = u2c::verify_nll_decomposition(model, d_in, d_out, 1e-9, offset);
  std::printf("nll decomposition  pass  (u2c nll out %.6f, in %.6f)\n", l2.u2c_nll_out_metrics,
              l2.u2c_nll_in_metrics);

  const auto el = u2c::verify_calibration_gaps(model, d_in, d_out);
  std::printf("calibration gaps   pass\n");

  if (!json_path.empty()) {
    json j;
    j["error_identities"] = {{"residual_out", l1.residual_out}, {"residual_in", l1.residual_in}};
    j["nll_decomposition"] = {{"u2c_nll_out_formula", l2.u2c_nll_out_formula},
                   {"u2c_nll_out_metrics", l2.u2c_nll_out_metrics},
                   {"u2c_nll_in_formula", l2.u2c_nll_in_formula},
                   {"u2c_nll_in_metrics", l2.u2c_nll_in_metrics},
                   {"rc_out_cd_zero_records", l2.rc_out_cd_zero_records},
                   {"rc_out_ab_infinite_records", l2.rc_out_ab_infinite_records},
                   {"rc_in_cd_infinite_records", l2.rc_in_cd_infinite_records}};
    const auto entry = [](const u2c::CalibrationGapEntry& e) {
      json v;
      v["closed_form"] = e.closed_form ? json(*e.closed_form) : json(nullptr);
      v["rederived"] = e.rederived ? json(*e.rederived) : json(nullptr);
      return v;
    };
    j["calibration_gaps"] = {{"out_rc_A", entry(el.out_rc_a)},   {"out_rc_B", entry(el.out_rc_b)},
                       {"out_rc_C", entry(el.out_rc_c)},   {"out_rc_D", entry(el.out_rc_d)},
                       {"out_u2c_A", entry(el.out_u2c_a)}, {"out_u2c_B", entry(el.out_u2c_b)},
                       {"out_u2c_C", entry(el.out_u2c_c)}, {"out_u2c_D", entry(el.out_u2c_d)},
                       {"in_rc_C", entry(el.in_rc_c)},     {"in_rc_D", entry(el.in_rc_d)},
                       {"in_u2c_B", entry(el.in_u2c_b)},   {"in_u2c_D", entry(el.in_u2c_d)}};
    write_text(json_path, j.dump(2) + "\n");
  }
  return 0;
}

// -------------------------------------------------------------- regions ---

int cmd_regions(const std::string& model_path, const std::string& in_path,
                const std::string& out_path, const std::string& json_path,
                const std::string& triples_path) {
  const auto model = u2c::load_model(model_path);
  const auto d_in = load_with_split(in_path, "test-in");
  const auto d_out = load_with_split(out_path, "out-domain");
  const auto s_in = u2c::region_masses(model, d_in);
  const auto s_out = u2c::region_masses(model, d_out);

  const auto cell = [](const u2c::RegionSummary& s, int g) {
    char buf[64];
    if (s.classifier_err[g])
      std::snprintf(buf, sizeof(buf), "%.4f (err %.3f)", s.masses[g], *s.classifier_err[g]);
    else
      std::snprintf(buf, sizeof(buf), "%.4f (err n/a)", s.masses[g]);
    return std::string(buf);
  };
  // quadrants: max-logit high/low (rows) vs u below/above theta (columns)
  const std::pair<const char*, const u2c::RegionSummary&> tables[] = {{"in-domain", s_in},
                                                                      {"out-domain", s_out}};
  for (const auto& [name, s] : tables) {
    std::printf("%s (n=%zu)\n", name, s.n);
    std::printf("  %-24s | %-22s | %-22s\n", "", "u < theta", "u >= theta");
    std::printf("  %-24s | %-22s | %-22s\n", "max logit/tau >= tau_u", ("A " + cell(s, 0)).c_str(),
                ("C " + cell(s, 2)).c_str());
    std::printf("  %-24s | %-22s | %-22s\n", "max logit/tau <  tau_u", ("B " + cell(s, 1)).c_str(),
                ("D " + cell(s, 3)).c_str());
  }

  if (!json_path.empty()) {
    json j;
    j["in"] = u2c::region_summary_to_json(s_in);
    j["out"] = u2c::region_summary_to_json(s_out);
    write_text(json_path, j.dump(2) + "\n");
  }
  if (!triples_path.empty()) {
    std::ofstream out(triples_path);
    if (!out) throw u2c::DataError("cannot open for writing: " + triples_path);
    out << "split,u,confidence,correct\n";
    const auto dump = [&](const u2c::Dataset& d) {
      for (const auto& r : d.records) {
        const double u = u2c::score(model.estimator, r);
        const auto p = u2c::u2c_predict(model, r);
        out << u2c::to_string(d.split) << "," << u2c::detail::format_double(u) << ","
            << u2c::detail::format_double(p.confidence) << ","
            << (p.predicted == r.label ? 1 : 0) << "\n";
      }
    };
    dump(d_in);
    dump(d_out);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"post-hoc uncertainty calibration toolkit (reject-or-classify and unified "
               "uncertainty calibration)"};
  app.require_subcommand(1);

  // synth
  auto* synth = app.add_subcommand("synth", "generate the synthetic benchmark datasets");
  std::string s_out, s_preset = "default";
  std::uint64_t s_seed = 0;
  int s_classes = 3;
  double s_eta = 0.2, s_scale = 1.0;
  std::size_t s_nval = 10000, s_ntest = 10000, s_nout = 10000;
  synth->add_option("--out", s_out, "output directory")->required();
  synth->add_option("--seed", s_seed, "generator seed");
  synth->add_option("--c", s_classes, "number of in-domain classes");
  synth->add_option("--eta", s_eta, "label-noise rate in [0,0.5)");
  synth->add_option("--n-val", s_nval, "validation sample count");
  synth->add_option("--n-test", s_ntest, "in-domain test sample count");
  synth->add_option("--n-out", s_nout, "out-domain sample count");
  synth->add_option("--logit-scale", s_scale, "post-hoc logit multiplier");
  synth->add_option("--preset", s_preset, "default | misspecified-u")
      ->check(CLI::IsMember({"default", "misspecified-u"}));

  // fit
  auto* fit = app.add_subcommand("fit", "fit temperature, threshold, and tau_u");
  std::string f_val, f_manifest, f_estimator = "maxlogit", f_head, f_tau_u = "mlp", f_out;
  int f_k = 5;
  double f_ash_p = 0.1, f_ash_fill = 1.0, f_alpha = 0.95;
  std::size_t f_hidden = 8;
  std::uint64_t f_seed = 0;
  fit->add_option("--val", f_val, "validation CSV");
  fit->add_option("--manifest", f_manifest, "manifest JSON with a validation entry");
  fit->add_option("--estimator", f_estimator, "epistemic estimator")
      ->check(CLI::IsMember({"maxlogit", "mahalanobis", "knn", "ash", "passthrough"}));
  fit->add_option("--k", f_k, "knn neighbor count");
  fit->add_option("--ash-p", f_ash_p, "ash keep-fraction in (0,1)");
  fit->add_option("--ash-fill", f_ash_fill, "ash fill constant");
  fit->add_option("--head", f_head, "linear head JSON (required for ash)");
  fit->add_option("--alpha", f_alpha, "rejection percentile level");
  fit->add_option("--tau-u", f_tau_u, "calibrator form")
      ->check(CLI::IsMember({"linear", "mlp"}));
  fit->add_option("--hidden", f_hidden, "mlp hidden units");
  fit->add_option("--seed", f_seed, "fit seed");
  fit->add_option("--out", f_out, "output model JSON")->required();

  // predict
  auto* predict = app.add_subcommand("predict", "batch prediction CSV");
  std::string p_model, p_data, p_split, p_method = "u2c", p_out;
  predict->add_option("--model", p_model)->required();
  predict->add_option("--data", p_data)->required();
  predict->add_option("--split", p_split, "dataset split tag (default: inferred)");
  predict->add_option("--method", p_method)->check(CLI::IsMember({"rc", "u2c"}));
  predict->add_option("--out", p_out)->required();

  // eval
  auto* eval = app.add_subcommand("eval", "err/ece/nll for RC and U2C");
  std::string e_model, e_manifest, e_out;
  std::vector<std::string> e_paths;
  int e_bins = 15;
  eval->add_option("--model", e_model)->required();
  eval->add_option("--eval", e_paths, "evaluation CSV (repeatable)");
  eval->add_option("--manifest", e_manifest, "manifest JSON with evaluation entries");
  eval->add_option("--bins", e_bins, "ece bin count");
  eval->add_option("--out", e_out, "directory for report JSON files");

  // verify
  auto* verify = app.add_subcommand("verify", "check the error/nll/ece identities");
  std::string v_model, v_in, v_out, v_json;
  bool v_sabotage = false;
  verify->add_option("--model", v_model)->required();
  verify->add_option("--in", v_in, "in-domain CSV")->required();
  verify->add_option("--out-domain", v_out, "out-domain CSV")->required();
  verify->add_option("--json", v_json, "theory report JSON path");
  verify->add_flag("--sabotage", v_sabotage)->group("");  // hidden negative control

  // regions
  auto* regions = app.add_subcommand("regions", "region masses and conditional errors");
  std::string r_model, r_in, r_out, r_json, r_triples;
  regions->add_option("--model", r_model)->required();
  regions->add_option("--in", r_in, "in-domain CSV")->required();
  regions->add_option("--out-domain", r_out, "out-domain CSV")->required();
  regions->add_option("--json", r_json, "region report JSON path");
  regions->add_option("--triples", r_triples, "CSV export of (u, confidence, correct)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (synth->parsed())
      return cmd_synth(s_out, s_seed, s_classes, s_eta, s_nval, s_ntest, s_nout, s_scale,
                       s_preset);
    if (fit->parsed())
      return cmd_fit(f_val, f_manifest, f_estimator, f_k, f_ash_p, f_ash_fill, f_head, f_alpha,
                     f_tau_u, f_hidden, f_seed, f_out);
    if (predict->parsed()) return cmd_predict(p_model, p_data, p_split, p_method, p_out);
    if (eval->parsed()) return cmd_eval(e_model, e_paths, e_manifest, e_bins, e_out);
    if (verify->parsed()) return cmd_verify(v_model, v_in, v_out, v_json, v_sabotage);
    if (regions->parsed()) return cmd_regions(r_model, r_in, r_out, r_json, r_triples);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const u2c::VerifyError& e) {
    std::cerr << "verification failure: " << e.what() << "\n";
    return 4;
  } catch (const u2c::NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return 5;
  } catch (const u2c::FitError& e) {
    std::cerr << "fit error: " << e.what() << "\n";
    return 3;
  } catch (const u2c::DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 5;
  }
  return 2;
}
