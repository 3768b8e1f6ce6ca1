// pc2m command line: dataset generation, training, evaluation, pseudo labels,
// parameter sweeps and gradient checks.
//
// Exit codes: 0 success, 1 runtime failure, 2 configuration error, 3 numerical abort.

#include "pc2m/experiments.hpp"

#include <CLI11.hpp>

#include <fstream>
#include <iostream>

namespace fs = std::filesystem;
using namespace pc2m;

namespace {

constexpr int kConfigError = 2;
constexpr int kNumericalAbort = 3;

struct CommonArgs {
  std::string config_path;
  std::vector<std::string> overrides;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("-c,--config", args.config_path, "key = value config file");
  cmd->add_option("-s,--set", args.overrides, "override one config key, as key=value (repeatable)");
}

RunConfig resolve(const CommonArgs& args) {
  RunConfig cfg;
  if (!args.config_path.empty()) cfg = load_config(args.config_path);
  for (const auto& kv : args.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
    set_config_value(cfg, kv.substr(0, eq), kv.substr(eq + 1));
  }
  cfg.validate();
  return cfg;
}

std::ofstream open_out(const fs::path& path) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  return os;
}

void write_run_outputs(const fs::path& out, const RunConfig& cfg, const ExperimentResult& r,
                       std::span<const LabeledImage> dataset) {
  save_checkpoint(out / "checkpoint.bin", r.train.checkpoint);
  {
    auto os = open_out(out / "config.txt");
    write_config(os, cfg);
  }
  {
    auto os = open_out(out / "timing.csv");
    os << "epoch,wall_seconds\n";
    for (const auto& rec : r.train.records) os << rec.epoch << ',' << rec.wall_seconds << '\n';
  }
  EvaluationReport report =
      evaluate(r.train.checkpoint, dataset, r.split.held_out, cfg.data.class_count, cfg.mode == RunMode::Unsupervised);
  if (r.label_f1) report.label_f1 = *r.label_f1;
  auto os = open_out(out / "report.csv");
  write_report_csv(os, report);
}

int cmd_gen_data(const CommonArgs& args, const std::string& out) {
  const RunConfig cfg = resolve(args);
  const auto data = gen_dataset(cfg.data);
  fs::create_directories(out);
  save_dataset(out, data, cfg.data.class_count);
  std::cout << "wrote " << data.size() << " images to " << out << '\n';
  return 0;
}

int cmd_train(const CommonArgs& args, const std::string& out, bool verbose) {
  const RunConfig cfg = resolve(args);
  const auto dataset = config_dataset(cfg);
  fs::create_directories(out);
  std::ofstream epochs = open_out(fs::path(out) / "epochs.csv");
  std::ofstream steps = open_out(fs::path(out) / "steps.csv");
  TrainOptions opts;
  opts.epoch_log = &epochs;
  opts.step_log = &steps;
  opts.verbose = verbose;
  try {
    const ExperimentResult r = run_experiment(cfg, dataset, opts);
    write_run_outputs(out, cfg, r, dataset);
    std::cout << "final mIoU " << r.final_miou() << ", H(a~) " << r.final_entropy() << ", D_JS(a*||a~) "
              << r.train.records.back().js_ground_truth << '\n';
  } catch (const NumericalAbort& e) {
    auto dump = open_out(fs::path(out) / "abort_batch.txt");
    dump << e.dump;
    throw;
  }
  return 0;
}

int cmd_eval(const CommonArgs& args, const std::string& checkpoint, const std::string& split, bool hungarian,
             const std::string& out) {
  const RunConfig cfg = resolve(args);
  const auto dataset = config_dataset(cfg);
  const Checkpoint ckpt = load_checkpoint(checkpoint);
  if (ckpt.class_count() != cfg.data.class_count)
    throw ConfigError("checkpoint has " + std::to_string(ckpt.class_count()) + " classes, dataset has " +
                      std::to_string(cfg.data.class_count));
  std::vector<std::size_t> indices;
  if (split == "all") {
    for (std::size_t i = 0; i < dataset.size(); ++i) indices.push_back(i);
  } else {
    const Split s = make_split(dataset.size(), cfg.holdout_fraction, cfg.data.seed);
    indices = split == "train" ? s.train : s.held_out;
  }
  const EvaluationReport report = evaluate(ckpt, dataset, indices, cfg.data.class_count, hungarian);
  if (out.empty()) {
    write_report_csv(std::cout, report);
  } else {
    auto os = open_out(out);
    write_report_csv(os, report);
  }
  return 0;
}

int cmd_pseudo_labels(const CommonArgs& args, const std::string& out) {
  const RunConfig cfg = resolve(args);
  const auto dataset = config_dataset(cfg);
  const PseudoLabels pl = make_pseudo_labels(cfg, dataset);
  std::vector<int> ids(dataset.size());
  for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = static_cast<int>(i);
  write_label_file(out, ids, pl.labels, cfg.data.class_count);
  std::cout << "pseudo-label F1 after cluster matching: micro " << pl.f1.micro << ", macro " << pl.f1.macro << '\n';
  return 0;
}

int cmd_sweep(const CommonArgs& args, const std::string& param, const std::vector<double>& values,
              const std::string& out, bool verbose) {
  const RunConfig cfg = resolve(args);
  const auto dataset = config_dataset(cfg);
  TrainOptions opts;
  opts.verbose = verbose;
  const auto rows = sweep(cfg, dataset, param, values, opts);
  if (out.empty()) {
    write_sweep_csv(std::cout, rows);
  } else {
    auto os = open_out(out);
    write_sweep_csv(os, rows);
  }
  return 0;
}

int cmd_grad_check(const CommonArgs& args, int images, double tolerance) {
  const RunConfig cfg = resolve(args);
  auto dataset = gen_dataset(cfg.data);
  if (images < 1 || static_cast<std::size_t>(images) > dataset.size())
    throw ConfigError("--images must lie in [1, data.image_count]");
  dataset.resize(static_cast<std::size_t>(images));
  GradCheckOptions opts;
  opts.tolerance = tolerance;
  const GradCheckReport r = network_grad_check(cfg, dataset, opts);
  std::cout << "checked " << r.checked << " entries, max relative error " << r.max_rel_error << " at "
            << r.worst_parameter << '[' << r.worst_row << ',' << r.worst_col << "] (analytic " << r.worst_analytic
            << ", numeric " << r.worst_numeric << ")\n"
            << (r.passed ? "PASS" : "FAIL") << '\n';
  return r.passed ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Area-balanced optimal-transport pseudo labels: data, training and evaluation"};
  app.require_subcommand(1);

  CommonArgs common;
  std::string out, checkpoint, split = "held-out", param;
  std::vector<double> values;
  bool hungarian = false, verbose = false;
  int images = 2;
  double tolerance = 1e-4;

  auto* gen = app.add_subcommand("gen-data", "generate the synthetic dataset into a directory");
  add_common(gen, common);
  gen->add_option("-o,--out", out, "output directory")->required();

  auto* train_cmd = app.add_subcommand("train", "train and write checkpoint.bin, epochs.csv and report.csv");
  add_common(train_cmd, common);
  train_cmd->add_option("-o,--out", out, "output directory")->required();
  train_cmd->add_flag("-v,--verbose", verbose, "print one line per epoch");

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on a dataset split");
  add_common(eval, common);
  eval->add_option("--checkpoint", checkpoint, "checkpoint file")->required()->check(CLI::ExistingFile);
  eval->add_option("--split", split, "held-out, train or all")
      ->check(CLI::IsMember({"held-out", "train", "all"}));
  eval->add_flag("--hungarian", hungarian, "match predicted ids to classes before scoring");
  eval->add_option("-o,--out", out, "report.csv path (stdout when omitted)");

  auto* pseudo = app.add_subcommand("pseudo-labels", "run the spectral pipeline and write a label file");
  add_common(pseudo, common);
  pseudo->add_option("-o,--out", out, "label file path")->required();

  auto* sweep_cmd = app.add_subcommand("sweep", "train once per value of gamma or beta");
  add_common(sweep_cmd, common);
  sweep_cmd->add_option("--param", param, "gamma or beta")->required()->check(CLI::IsMember({"gamma", "beta"}));
  sweep_cmd->add_option("--values", values, "values to sweep")->required()->delimiter(',');
  sweep_cmd->add_option("-o,--out", out, "sweep CSV path (stdout when omitted)");
  sweep_cmd->add_flag("-v,--verbose", verbose, "print one line per epoch");

  auto* grad = app.add_subcommand("grad-check", "finite-difference check of the full network gradient");
  add_common(grad, common);
  grad->add_option("--images", images, "images in the checked batch");
  grad->add_option("--tolerance", tolerance, "max relative error");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kConfigError;
  }

  try {
    if (*gen) return cmd_gen_data(common, out);
    if (*train_cmd) return cmd_train(common, out, verbose);
    if (*eval) return cmd_eval(common, checkpoint, split, hungarian, out);
    if (*pseudo) return cmd_pseudo_labels(common, out);
    if (*sweep_cmd) return cmd_sweep(common, param, values, out, verbose);
    if (*grad) return cmd_grad_check(common, images, tolerance);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfigError;
  } catch (const NumericalAbort& e) {
    std::cerr << "numerical abort: " << e.what() << '\n' << e.dump;
    return kNumericalAbort;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
