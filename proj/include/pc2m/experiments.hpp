#pragma once

#include "pc2m/run_config.hpp"
#include "pc2m/spectral_labels.hpp"
#include "pc2m/trainer.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace pc2m {

/// The dataset named by the config: loaded from data_dir or generated.
std::vector<LabeledImage> config_dataset(const RunConfig& cfg);

struct PseudoLabels {
  std::vector<LabelSet> labels;  // cluster ids, one set per dataset image
  F1Scores f1;                   // against ground truth after cluster -> class matching
  std::vector<int> cluster_to_class;
};

/// Spectral pipeline over every dataset image with the run's frozen initial encoder.
/// cluster_to_class maximizes image-level co-occurrence and is used for scoring only.
PseudoLabels make_pseudo_labels(const RunConfig& cfg, std::span<const LabeledImage> dataset);

struct ExperimentResult {
  TrainResult train;
  Split split;
  std::vector<LabelSet> fed_labels;  // what ν and the MCE saw, per dataset image
  std::optional<F1Scores> label_f1;  // fed labels vs ground truth, when they differ from it
  double final_miou() const { return train.records.back().miou; }
  double final_entropy() const { return train.records.back().entropy; }
};

/// Dispatches on cfg.mode:
///   weak          ground-truth labels
///   unsupervised  pseudo labels, held-out mIoU after Hungarian id matching
///   beta-mix      round(beta * T) images carry class-matched pseudo labels
ExperimentResult run_experiment(const RunConfig& cfg, std::span<const LabeledImage> dataset,
                                const TrainOptions& opts = {});

/// Pseudo labels from cfg.labels_file when set, otherwise computed.
PseudoLabels pseudo_labels_for(const RunConfig& cfg, std::span<const LabeledImage> dataset);

struct SweepRow {
  std::string parameter;
  double value = 0.0;
  double miou = 0.0;
  double entropy = 0.0;
  double js_ground_truth = 0.0;
  double label_f1_micro = 1.0;
  double label_f1_macro = 1.0;
};

/// One run per value with shared seeds. parameter is "gamma" or "beta"
/// (beta switches the run to beta-mix mode).
std::vector<SweepRow> sweep(const RunConfig& cfg, std::span<const LabeledImage> dataset, const std::string& parameter,
                            std::span<const double> values, const TrainOptions& opts = {});

void write_sweep_csv(std::ostream& os, std::span<const SweepRow> rows);

}  // namespace pc2m
