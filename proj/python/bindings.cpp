#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "pascl/config.hpp"
#include "pascl/errors.hpp"
#include "pascl/gradsuite.hpp"
#include "pascl/longtail.hpp"
#include "pascl/metrics.hpp"
#include "pascl/objectives.hpp"
#include "pascl/pipeline.hpp"

namespace py = pybind11;
using namespace pascl;

namespace {

using Settings = std::map<std::string, py::object>;

ExperimentConfig make_config(const std::string& text, const Settings& overrides) {
  ExperimentConfig cfg = parse_config_text(text);
  for (const auto& [k, v] : overrides) apply_setting(cfg, k, py::str(v).cast<std::string>());
  cfg.sync();
  cfg.validate();
  return cfg;
}

std::vector<ScoredExample> scored(const std::vector<double>& scores,
                                  const std::vector<bool>& is_ood,
                                  const std::vector<int>& pred = {},
                                  const std::vector<int>& truth = {}) {
  if (scores.size() != is_ood.size()) throw InputError("scores and is_ood differ in length");
  if ((!pred.empty() || !truth.empty()) &&
      (pred.size() != scores.size() || truth.size() != scores.size())) {
    throw InputError("pred and true must match scores in length");
  }
  std::vector<ScoredExample> out(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i) {
    out[i] = {scores[i], static_cast<bool>(is_ood[i]), pred.empty() ? 0 : pred[i],
              truth.empty() ? 0 : truth[i]};
  }
  return out;
}

py::object rate(const MaybeRate& r) { return r ? py::cast(*r) : py::none(); }

py::dict report_dict(const MetricsReport& r) {
  py::dict d;
  d["auroc"] = r.auroc;
  d["aupr"] = r.aupr;
  py::dict fpr, acc_tpr, acc_fpr;
  for (std::size_t i = 0; i < kTprTargets.size(); ++i) {
    fpr[py::cast(kTprTargets[i])] = r.fpr_at_tpr[i];
    acc_tpr[py::cast(kTprTargets[i])] = rate(r.acc_at_tpr[i]);
  }
  for (std::size_t i = 0; i < kFprTargets.size(); ++i) {
    acc_fpr[py::cast(kFprTargets[i])] = rate(r.acc_at_fpr[i]);
  }
  d["fpr_at_tpr"] = fpr;
  d["acc_at_tpr"] = acc_tpr;
  d["acc_at_fpr"] = acc_fpr;
  d["acc_head"] = rate(r.acc_head);
  d["acc_tail"] = rate(r.acc_tail);
  d["seed"] = r.seed;
  d["config_hash"] = r.config_hash;
  d["score_fn"] = r.score_fn;
  d["abf"] = r.abf;
  return d;
}

py::dict split_part(const std::vector<LabeledExample>& ex, std::size_t dim) {
  py::array_t<double> x({ex.size(), dim});
  py::array_t<int> y(static_cast<py::ssize_t>(ex.size()));
  py::array_t<bool> tail(static_cast<py::ssize_t>(ex.size()));
  auto xm = x.mutable_unchecked<2>();
  auto ym = y.mutable_unchecked<1>();
  auto tm = tail.mutable_unchecked<1>();
  for (std::size_t i = 0; i < ex.size(); ++i) {
    for (std::size_t j = 0; j < dim; ++j) xm(i, j) = ex[i].features[j];
    ym(i) = ex[i].label;
    tm(i) = ex[i].tail;
  }
  py::dict d;
  d["x"] = x;
  d["y"] = y;
  d["tail"] = tail;
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Long-tailed OOD detection with partial, asymmetric contrastive learning";

  auto base = py::register_exception<InputError>(m, "InputError", PyExc_ValueError);
  py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);
  py::register_exception<StateError>(m, "StateError", PyExc_RuntimeError);
  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<DataError>(m, "DataError", PyExc_IOError);
  (void)base;

  m.def("default_config", [] { return render_config(ExperimentConfig{}); },
        "Default configuration as key = value text.");
  m.def("config_keys", &config_keys);
  m.def(
      "render_config",
      [](const std::string& text, const Settings& overrides) {
        return render_config(make_config(text, overrides));
      },
      py::arg("text") = "", py::arg("overrides") = Settings{});
  m.def(
      "config_hash",
      [](const std::string& text, const Settings& overrides) {
        return config_hash(make_config(text, overrides));
      },
      py::arg("text") = "", py::arg("overrides") = Settings{});

  m.def("longtailed_counts", &longtailed_counts, py::arg("num_classes"), py::arg("n_max"),
        py::arg("rho"));
  m.def("tail_class_set", &tail_class_set, py::arg("counts"), py::arg("k"));
  m.def("derive_seed", &derive_seed, py::arg("seed"), py::arg("stream"));

  m.def(
      "generate",
      [](const std::string& text, const Settings& overrides) {
        const ExperimentConfig cfg = make_config(text, overrides);
        const auto [profile, split] = generate_synthetic(cfg.data);
        py::dict d;
        d["counts"] = profile.counts;
        d["priors"] = profile.priors;
        d["tail_set"] = profile.tail_set;
        d["realized_rho"] = profile.realized_rho();
        d["train_in"] = split_part(split.train_in, cfg.data.dim);
        d["train_out"] = split_part(split.train_out, cfg.data.dim);
        d["test_in"] = split_part(split.test_in, cfg.data.dim);
        d["test_out"] = split_part(split.test_out, cfg.data.dim);
        return d;
      },
      py::arg("text") = "", py::arg("overrides") = Settings{},
      "Synthetic long-tailed benchmark; labels of OOD rows are -1.");

  m.def(
      "auroc",
      [](const std::vector<double>& s, const std::vector<bool>& o) { return auroc(scored(s, o)); },
      py::arg("scores"), py::arg("is_ood"));
  m.def(
      "aupr",
      [](const std::vector<double>& s, const std::vector<bool>& o) { return aupr(scored(s, o)); },
      py::arg("scores"), py::arg("is_ood"));
  m.def(
      "fpr_at_tpr",
      [](const std::vector<double>& s, const std::vector<bool>& o, double n) {
        return fpr_at_tpr(scored(s, o), n);
      },
      py::arg("scores"), py::arg("is_ood"), py::arg("tpr") = 0.95);
  m.def(
      "compute_report",
      [](const std::vector<double>& s, const std::vector<bool>& o, const std::vector<int>& pred,
         const std::vector<int>& truth, const std::vector<int>& tail_set) {
        return report_dict(compute_report(scored(s, o, pred, truth), tail_set));
      },
      py::arg("scores"), py::arg("is_ood"), py::arg("pred"), py::arg("true"),
      py::arg("tail_set") = std::vector<int>{});

  m.def(
      "ood_score",
      [](py::array_t<double, py::array::c_style | py::array::forcecast> logits,
         const std::string& fn) {
        if (logits.ndim() != 2) throw InputError("logits must be 2-d");
        TensorBuf t = TensorBuf::matrix(
            logits.shape(0), logits.shape(1),
            std::vector<double>(logits.data(), logits.data() + logits.size()));
        return ood_score(t, parse_score(fn));
      },
      py::arg("logits"), py::arg("score") = "msp");

  m.def(
      "pascl_contrastive",
      [](py::array_t<double, py::array::c_style | py::array::forcecast> z,
         const std::vector<int>& labels, const std::vector<bool>& is_ood,
         const std::string& variant, const std::vector<int>& tail_set, double tau) {
        if (z.ndim() != 2) throw InputError("z must be 2-d");
        std::vector<Domain> domains;
        for (bool b : is_ood) domains.push_back(b ? Domain::kOut : Domain::kIn);
        TensorBuf t = TensorBuf::matrix(z.shape(0), z.shape(1),
                                        std::vector<double>(z.data(), z.data() + z.size()));
        return pascl_contrastive(t, labels, domains, ContrastSpec{parse_variant(variant), tail_set},
                                 tau);
      },
      py::arg("z"), py::arg("labels"), py::arg("is_ood"), py::arg("variant") = "pascl",
      py::arg("tail_set") = std::vector<int>{}, py::arg("tau") = 0.1,
      "Contrastive loss value; rows of z must have unit norm.");

  m.def(
      "run_experiment",
      [](const std::string& text, const Settings& overrides) {
        const ExperimentConfig cfg = make_config(text, overrides);
        RunOutputs out = [&] {
          py::gil_scoped_release release;
          return run_experiment(cfg);
        }();
        const RunRecord& r = out.record;
        py::dict d;
        d["config"] = render_config(r.config);
        d["config_hash"] = r.config_hash;
        d["seed"] = r.seed;
        py::list reports;
        for (const auto& rep : r.reports) reports.append(report_dict(rep));
        d["reports"] = reports;
        py::list trace;
        for (const auto& e : r.trace) {
          py::dict t;
          t["stage"] = e.stage;
          t["epoch"] = e.epoch;
          t["loss"] = e.loss;
          t["cross_entropy"] = e.cross_entropy;
          t["outlier"] = e.outlier;
          t["contrastive"] = e.contrastive;
          trace.append(t);
        }
        d["trace"] = trace;
        d["main_state_hash"] = out.net.main_state_hash();
        d["wall_seconds"] = r.wall_seconds;
        return d;
      },
      py::arg("text") = "", py::arg("overrides") = Settings{},
      "Generate data, train both stages and evaluate.");

  m.def(
      "grad_suite",
      [](std::size_t seeds, bool primitives, bool losses) {
        GradSuiteOptions o;
        o.seeds = seeds;
        o.primitives = primitives;
        o.losses = losses;
        std::vector<GradCaseResult> res;
        {
          py::gil_scoped_release release;
          res = run_grad_suite(o);
        }
        py::list out;
        for (const auto& r : res) {
          py::dict d;
          d["name"] = r.name;
          d["seed"] = r.seed;
          d["max_rel_error"] = r.report.max_rel_error;
          d["pass"] = r.report.pass;
          out.append(d);
        }
        return out;
      },
      py::arg("seeds") = 20, py::arg("primitives") = true, py::arg("losses") = true);
}
