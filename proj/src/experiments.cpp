#include "pc2m/experiments.hpp"

#include <iomanip>
#include <limits>
#include <ostream>

namespace pc2m {

std::vector<LabeledImage> config_dataset(const RunConfig& cfg) {
  if (cfg.data_dir.empty()) return gen_dataset(cfg.data);
  LoadedDataset loaded = load_dataset(cfg.data_dir);
  if (loaded.class_count != cfg.data.class_count)
    throw ConfigError("dataset in " + cfg.data_dir + " has " + std::to_string(loaded.class_count) +
                      " classes, config says " + std::to_string(cfg.data.class_count));
  if (!loaded.images.empty() && loaded.images.front().image.size != cfg.data.image_size)
    throw ConfigError("dataset image size differs from data.image_size");
  return std::move(loaded.images);
}

namespace {

void score_pseudo_labels(PseudoLabels& out, std::span<const LabeledImage> dataset, int classes) {
  const auto gt = labels_of(dataset);
  out.cluster_to_class =
      hungarian_match_padded(label_cooccurrence(out.labels, gt, classes, classes)).permutation;
  out.f1 = f1_scores(remap_label_sets(out.labels, out.cluster_to_class), gt, classes);
}

}  // namespace

PseudoLabels make_pseudo_labels(const RunConfig& cfg, std::span<const LabeledImage> dataset) {
  const int classes = cfg.data.class_count;
  const Checkpoint init = initial_checkpoint(cfg, DiscreteMeasure::uniform(static_cast<std::size_t>(classes),
                                                                           MeasureRole::AreaState));
  std::vector<ImageTensor> images;
  images.reserve(dataset.size());
  for (const auto& d : dataset) images.push_back(d.image);
  PseudoLabels out;
  out.labels = generate_pseudo_labels(images, init.encoder, classes, cfg.spectral).labels;
  score_pseudo_labels(out, dataset, classes);
  return out;
}

PseudoLabels pseudo_labels_for(const RunConfig& cfg, std::span<const LabeledImage> dataset) {
  if (cfg.labels_file.empty()) return make_pseudo_labels(cfg, dataset);
  const LabelFile file = read_label_file(cfg.labels_file);
  if (file.class_count != cfg.data.class_count)
    throw ConfigError("label file class count differs from data.class_count");
  if (file.labels.size() != dataset.size()) throw ConfigError("label file does not cover the dataset");
  PseudoLabels out;
  out.labels.resize(dataset.size());
  for (std::size_t i = 0; i < file.ids.size(); ++i) {
    const int id = file.ids[i];
    if (id < 0 || static_cast<std::size_t>(id) >= dataset.size()) throw ConfigError("label file id out of range");
    out.labels[static_cast<std::size_t>(id)] = file.labels[i];
  }
  score_pseudo_labels(out, dataset, cfg.data.class_count);
  return out;
}

ExperimentResult run_experiment(const RunConfig& cfg, std::span<const LabeledImage> dataset,
                                const TrainOptions& opts) {
  cfg.validate();
  ExperimentResult out;
  out.split = make_split(dataset.size(), cfg.holdout_fraction, cfg.data.seed);
  const auto gt = labels_of(dataset);
  bool hungarian = false;
  switch (cfg.mode) {
    case RunMode::Weak:
      out.fed_labels = gt;
      break;
    case RunMode::Unsupervised: {
      const PseudoLabels pl = pseudo_labels_for(cfg, dataset);
      out.fed_labels = pl.labels;
      out.label_f1 = pl.f1;
      hungarian = true;
      break;
    }
    case RunMode::BetaMix: {
      const PseudoLabels pl = pseudo_labels_for(cfg, dataset);
      const auto mapped = remap_label_sets(pl.labels, pl.cluster_to_class);
      out.fed_labels = beta_mix(gt, mapped, cfg.beta, mix_seed(cfg.seed, 77)).labels;
      out.label_f1 = f1_scores(out.fed_labels, gt, cfg.data.class_count);
      break;
    }
  }
  out.train = train(cfg, dataset, out.fed_labels, out.split, hungarian, opts);
  return out;
}

std::vector<SweepRow> sweep(const RunConfig& cfg, std::span<const LabeledImage> dataset, const std::string& parameter,
                            std::span<const double> values, const TrainOptions& opts) {
  if (parameter != "gamma" && parameter != "beta")
    throw ConfigError("sweep parameter must be gamma or beta, got '" + parameter + "'");
  if (values.size() < 2) throw ConfigError("sweep needs at least two values");
  std::vector<SweepRow> rows;
  for (double v : values) {
    RunConfig run = cfg;
    if (parameter == "gamma") {
      run.gamma = v;
    } else {
      run.mode = RunMode::BetaMix;
      run.beta = v;
    }
    const ExperimentResult r = run_experiment(run, dataset, opts);
    SweepRow row;
    row.parameter = parameter;
    row.value = v;
    row.miou = r.final_miou();
    row.entropy = r.final_entropy();
    row.js_ground_truth = r.train.records.back().js_ground_truth;
    if (r.label_f1) {
      row.label_f1_micro = r.label_f1->micro;
      row.label_f1_macro = r.label_f1->macro;
    }
    rows.push_back(row);
  }
  return rows;
}

void write_sweep_csv(std::ostream& os, std::span<const SweepRow> rows) {
  const auto old = os.precision(std::numeric_limits<double>::max_digits10);
  os << "parameter,value,miou,entropy,js_gt,label_f1_micro,label_f1_macro\n";
  for (const auto& r : rows)
    os << r.parameter << ',' << r.value << ',' << r.miou << ',' << r.entropy << ',' << r.js_ground_truth << ','
       << r.label_f1_micro << ',' << r.label_f1_macro << '\n';
  os.precision(old);
}

}  // namespace pc2m
