#pragma once

#include "pc2m/area_model.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <iosfwd>
#include <span>
#include <vector>

namespace pc2m {

/// Rows are ground truth, columns are predictions.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(int classes);

  void add(int ground_truth, int prediction, std::int64_t count = 1);
  ConfusionMatrix& operator+=(const ConfusionMatrix& other);

  int classes() const { return classes_; }
  std::int64_t at(int ground_truth, int prediction) const {
    return counts_[static_cast<std::size_t>(ground_truth * classes_ + prediction)];
  }
  std::int64_t total() const;

 private:
  int classes_;
  std::vector<std::int64_t> counts_;
};

struct MiouResult {
  double miou = 0.0;
  Eigen::VectorXd iou;        // per class, 0 where the union is empty
  std::vector<bool> counted;  // nonzero union and included in the mean
};

/// IoU_c = TP / (TP + FP + FN); the mean runs over classes with a nonzero union.
/// With include_background = false, class 0 is left out of the mean.
MiouResult miou(const ConfusionMatrix& cm, bool include_background = true);

struct Assignment {
  std::vector<int> permutation;  // row -> column
  double total = 0.0;
};

/// Maximum-score perfect matching on a square matrix. Among optimal
/// permutations the lexicographically smallest one is returned.
Assignment hungarian_match(const Eigen::MatrixXd& score);

/// Rectangular variant: pads with zero-score rows/columns. Rows matched to a
/// padding column get -1.
Assignment hungarian_match_padded(const Eigen::MatrixXd& score);

/// IoU between every predicted id (rows) and ground-truth class (cols).
Eigen::MatrixXd iou_matrix(const ConfusionMatrix& cm);

/// Relabels predictions through `pred_to_class` (e.g. a Hungarian assignment).
ConfusionMatrix remap_predictions(const ConfusionMatrix& cm, std::span<const int> pred_to_class);

struct F1Scores {
  double micro = 0.0;
  double macro = 0.0;
};

/// Multi-label F1. Macro averages per-class F1 over classes that occur in
/// either the predictions or the ground truth.
F1Scores f1_scores(std::span<const LabelSet> predicted, std::span<const LabelSet> ground_truth,
                   int class_count);

/// Number of images where cluster k (rows) and class c (cols) co-occur.
Eigen::MatrixXd label_cooccurrence(std::span<const LabelSet> pseudo, std::span<const LabelSet> ground_truth,
                                   int cluster_count, int class_count);

/// Applies a cluster -> class map to every set; unmapped ids (-1) are dropped.
std::vector<LabelSet> remap_label_sets(std::span<const LabelSet> sets, std::span<const int> mapping);

struct BetaMixResult {
  std::vector<LabelSet> labels;
  std::vector<std::size_t> replaced;  // sorted image indices carrying pseudo labels
};

/// Replaces exactly round(beta * T) images, chosen by a seeded shuffle, with
/// their (already class-mapped) pseudo labels.
BetaMixResult beta_mix(std::span<const LabelSet> ground_truth, std::span<const LabelSet> pseudo,
                       double beta, std::uint64_t seed);

struct EvaluationReport {
  MiouResult miou;
  F1Scores label_f1;
  std::vector<int> class_mapping;  // empty when predictions are class ids already
};

/// report.csv: one row per class (iou), then summary rows.
void write_report_csv(std::ostream& os, const EvaluationReport& report);

}  // namespace pc2m
