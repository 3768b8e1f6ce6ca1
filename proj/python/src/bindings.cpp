// Python bindings: transport, area model, metrics, spectral labels and
// whole training runs. Matrices cross as float64 numpy arrays, label sets as
// Python sets, run configurations as {key: value} dicts using the config keys.

#include "pc2m/experiments.hpp"

#include <pybind11/eigen.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

namespace py = pybind11;
using namespace pc2m;

namespace {

RunConfig to_config(const py::dict& overrides) {
  RunConfig cfg;
  for (const auto& [k, v] : overrides) {
    const std::string key = py::str(k);
    std::string value;
    if (py::isinstance<py::bool_>(v))
      value = v.cast<bool>() ? "true" : "false";
    else if (py::isinstance<py::list>(v) || py::isinstance<py::tuple>(v)) {
      for (const auto& item : v) value += (value.empty() ? "" : ",") + std::string(py::str(item));
    } else
      value = py::str(v);
    set_config_value(cfg, key, value);
  }
  cfg.validate();
  return cfg;
}

DiscreteMeasure measure(const Eigen::VectorXd& w, MeasureRole role) { return DiscreteMeasure(w, role); }

py::dict epoch_dict(const EpochRecord& r) {
  py::dict d;
  d["epoch"] = r.epoch;
  d["loss_total"] = r.loss.total;
  d["loss_match"] = r.loss.match;
  d["loss_mce"] = r.loss.mce;
  d["miou"] = r.miou;
  d["entropy"] = r.entropy;
  d["js_previous"] = r.js_previous;
  d["js_ground_truth"] = r.js_ground_truth;
  d["sinkhorn_unconverged"] = r.sinkhorn_unconverged;
  d["a_tilde"] = r.a_tilde;
  return d;
}

py::tuple dataset_arrays(const std::vector<LabeledImage>& data) {
  const auto t = static_cast<py::ssize_t>(data.size());
  const auto n = static_cast<py::ssize_t>(data.front().image.size);
  py::array_t<double> images({t, n, n, py::ssize_t{3}});
  py::array_t<int> masks({t, n, n});
  auto im = images.mutable_unchecked<4>();
  auto mk = masks.mutable_unchecked<3>();
  std::vector<LabelSet> labels;
  for (py::ssize_t i = 0; i < t; ++i) {
    const auto& d = data[static_cast<std::size_t>(i)];
    for (py::ssize_t y = 0; y < n; ++y)
      for (py::ssize_t x = 0; x < n; ++x) {
        mk(i, y, x) = d.mask_at(int(y), int(x));
        for (py::ssize_t ch = 0; ch < 3; ++ch) im(i, y, x, ch) = d.image.at(int(y), int(x), int(ch));
      }
    labels.push_back(d.labels);
  }
  return py::make_tuple(images, masks, labels);
}

}  // namespace

PYBIND11_MODULE(_pc2m, m) {
  m.doc() = "Area-balanced optimal-transport pseudo labels";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<EigenSolverError>(m, "EigenSolverError", PyExc_RuntimeError);

  // transport
  m.def(
      "gibbs_kernel", [](const Eigen::MatrixXd& p, double eps) { return gibbs_kernel(PredictionMatrix(p), eps).values; },
      py::arg("p"), py::arg("epsilon") = 1.0, "P^(1/epsilon), elementwise");
  m.def(
      "sinkhorn",
      [](const Eigen::MatrixXd& p, const Eigen::VectorXd& alpha, double eps, double tol, int max_iter) {
        SinkhornOptions opts;
        opts.tol = tol;
        opts.max_iter = max_iter;
        const auto r = sinkhorn(gibbs_kernel(PredictionMatrix(p), eps), make_patch_marginal(std::size_t(p.rows())),
                                measure(alpha, MeasureRole::AreaTarget), opts);
        py::dict d;
        d["q"] = r.coupling.values;
        d["u"] = r.u;
        d["v"] = r.v;
        d["iterations"] = r.iterations;
        d["violation"] = r.violation;
        d["converged"] = r.converged;
        d["log_domain"] = r.log_domain;
        return d;
      },
      py::arg("p"), py::arg("alpha"), py::arg("epsilon") = 1.0, py::arg("tol") = 1e-6, py::arg("max_iter") = 500,
      "Plan with uniform row marginal over the rows of p and column marginal alpha");
  m.def(
      "fixed_point_test",
      [](const Eigen::MatrixXd& p, const Eigen::VectorXd& alpha, double eps, double tol) {
        return fixed_point_test(PredictionMatrix(p), measure(alpha, MeasureRole::AreaTarget), eps, tol);
      },
      py::arg("p"), py::arg("alpha"), py::arg("epsilon") = 1.0, py::arg("tol") = 1e-9);

  // area model
  m.def(
      "batch_rescale",
      [](const Eigen::VectorXd& a, const Eigen::VectorXd& nu_b, const Eigen::VectorXd& nu_d) {
        return batch_rescale(measure(a, MeasureRole::AreaState), nu_b, measure(nu_d, MeasureRole::Frequency)).weights();
      },
      py::arg("a_tilde"), py::arg("nu_b"), py::arg("nu_d"));
  m.def(
      "ema_update",
      [](const Eigen::VectorXd& a, const Eigen::VectorXd& mean, double gamma) {
        const AreaState s{measure(a, MeasureRole::AreaState), 0, gamma};
        return ema_update(s, measure(mean, MeasureRole::AreaState), gamma).a_tilde.weights();
      },
      py::arg("a_tilde"), py::arg("mean_density"), py::arg("gamma"));
  m.def(
      "js_divergence",
      [](const Eigen::VectorXd& p, const Eigen::VectorXd& q) {
        return js_divergence(measure(p, MeasureRole::AreaState), measure(q, MeasureRole::AreaState));
      },
      py::arg("p"), py::arg("q"));
  m.def(
      "shannon_entropy", [](const Eigen::VectorXd& p) { return shannon_entropy(measure(p, MeasureRole::AreaState)); },
      py::arg("p"));
  m.def(
      "class_frequencies",
      [](const std::vector<LabelSet>& labels, int classes) { return class_frequencies(labels, classes).weights(); },
      py::arg("labels"), py::arg("class_count"));

  // metrics
  m.def(
      "miou",
      [](const std::vector<int>& gt, const std::vector<int>& pred, int classes, bool include_background) {
        if (gt.size() != pred.size()) throw std::invalid_argument("miou: length mismatch");
        ConfusionMatrix cm(classes);
        for (std::size_t i = 0; i < gt.size(); ++i) cm.add(gt[i], pred[i]);
        const auto r = miou(cm, include_background);
        return py::make_tuple(r.miou, r.iou);
      },
      py::arg("ground_truth"), py::arg("prediction"), py::arg("class_count"), py::arg("include_background") = true,
      "(mIoU, per-class IoU) over flat label arrays");
  m.def(
      "hungarian_match",
      [](const Eigen::MatrixXd& score) {
        const auto a = score.rows() == score.cols() ? hungarian_match(score) : hungarian_match_padded(score);
        return py::make_tuple(a.permutation, a.total);
      },
      py::arg("score"), "maximum-score assignment, row -> column (-1 for padding)");
  m.def(
      "f1_scores",
      [](const std::vector<LabelSet>& pred, const std::vector<LabelSet>& gt, int classes) {
        const auto f = f1_scores(pred, gt, classes);
        return py::make_tuple(f.micro, f.macro);
      },
      py::arg("predicted"), py::arg("ground_truth"), py::arg("class_count"));

  // spectral
  m.def(
      "patch_affinity",
      [](const Eigen::MatrixXd& features) {
        const auto g = patch_affinity(features);
        return py::make_tuple(g.a, g.degree, g.laplacian);
      },
      py::arg("features"), "(A, degree, normalized Laplacian)");
  m.def(
      "eigendecompose",
      [](const Eigen::MatrixXd& features, int k_e) {
        const auto b = eigendecompose(patch_affinity(features), k_e);
        return py::make_tuple(b.eigenvalues, b.eigenvectors);
      },
      py::arg("features"), py::arg("k_e"), "smallest eigenpairs of the affinity graph Laplacian");
  m.def(
      "kmeans",
      [](const Eigen::MatrixXd& points, int k, std::uint64_t seed, int iterations) {
        const auto r = kmeans(points, k, seed, iterations);
        return py::make_tuple(r.assignment, r.centers);
      },
      py::arg("points"), py::arg("k"), py::arg("seed") = 0, py::arg("iterations") = 50);

  // data and runs
  m.def(
      "config_keys",
      [] {
        std::vector<std::pair<std::string, std::string>> out;
        for (const auto& k : config_keys()) out.emplace_back(k.name, k.description);
        return out;
      },
      "(name, description) of every run configuration key");
  m.def(
      "gen_dataset", [](const py::dict& config) { return dataset_arrays(config_dataset(to_config(config))); },
      py::arg("config") = py::dict(), "(images T x n x n x 3, masks T x n x n, label sets)");
  m.def(
      "pseudo_labels",
      [](const py::dict& config) {
        const RunConfig cfg = to_config(config);
        const auto pl = make_pseudo_labels(cfg, config_dataset(cfg));
        py::dict d;
        d["labels"] = pl.labels;
        d["f1_micro"] = pl.f1.micro;
        d["f1_macro"] = pl.f1.macro;
        d["cluster_to_class"] = pl.cluster_to_class;
        return d;
      },
      py::arg("config") = py::dict());
  m.def(
      "run_experiment",
      [](const py::dict& config) {
        const RunConfig cfg = to_config(config);
        ExperimentResult r;
        {
          py::gil_scoped_release release;
          r = run_experiment(cfg, config_dataset(cfg));
        }
        py::list epochs;
        for (const auto& rec : r.train.records) epochs.append(epoch_dict(rec));
        py::dict d;
        d["epochs"] = epochs;
        d["final_miou"] = r.final_miou();
        d["final_entropy"] = r.final_entropy();
        d["alpha_star"] = r.train.alpha_star.weights();
        if (r.label_f1) d["label_f1"] = py::make_tuple(r.label_f1->micro, r.label_f1->macro);
        return d;
      },
      py::arg("config") = py::dict(), "train and evaluate one run; returns per-epoch records");
  m.def(
      "network_grad_check",
      [](const py::dict& config, int images) {
        const RunConfig cfg = to_config(config);
        auto data = gen_dataset(cfg.data);
        data.resize(static_cast<std::size_t>(std::clamp(images, 1, int(data.size()))));
        const auto r = network_grad_check(cfg, data);
        return py::make_tuple(r.max_rel_error, r.passed);
      },
      py::arg("config") = py::dict(), py::arg("images") = 2);
}
