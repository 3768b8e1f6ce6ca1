#pragma once

#include "pc2m/area_model.hpp"
#include "pc2m/losses.hpp"
#include "pc2m/metrics_eval.hpp"
#include "pc2m/patch_net.hpp"
#include "pc2m/run_config.hpp"
#include "pc2m/synth_data.hpp"

#include <filesystem>
#include <iosfwd>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace pc2m {

/// Loss became non-finite. `dump` describes the offending batch.
struct NumericalAbort : std::runtime_error {
  NumericalAbort(const std::string& what, std::string dump) : std::runtime_error(what), dump(std::move(dump)) {}
  std::string dump;
};

struct Split {
  std::vector<std::size_t> train;
  std::vector<std::size_t> held_out;
};

/// Seeded shuffle; the first round(fraction * T) shuffled indices are held out.
/// Both lists are returned sorted.
Split make_split(std::size_t image_count, double holdout_fraction, std::uint64_t seed);

struct Checkpoint {
  EncoderParams encoder;
  ProjectionWeights head;
  AreaState area;
  double temperature = 0.1;

  int class_count() const { return static_cast<int>(head.w.cols()); }
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Model + area state before any training step: ã_0 = ν_D.
Checkpoint initial_checkpoint(const RunConfig& cfg, const DiscreteMeasure& nu_d);

struct EpochRecord {
  int epoch = 0;
  LossBreakdown loss;  // means over the epoch's batches
  double miou = 0.0;
  double entropy = 0.0;          // H(ã_m)
  double js_previous = 0.0;      // D_JS(ã_m || ã_{m-1})
  double js_ground_truth = 0.0;  // D_JS(α* || ã_m)
  double wall_seconds = 0.0;
  int sinkhorn_unconverged = 0;
  Eigen::VectorXd a_tilde;
  Eigen::VectorXd a_tilde_local;  // branch-wise audit copy
};

void write_epochs_header(std::ostream& os, int class_count);
void write_epoch_row(std::ostream& os, const EpochRecord& r);

struct TrainOptions {
  std::ostream* step_log = nullptr;   // per-batch CSV
  std::ostream* epoch_log = nullptr;  // epochs.csv, rows written as epochs finish
  bool verbose = false;
};

struct TrainResult {
  Checkpoint checkpoint;
  std::vector<EpochRecord> records;
  DiscreteMeasure alpha_star;
  std::vector<int> class_mapping;  // predicted id -> class, unsupervised evaluation only
};

/// Runs the warm-up and main epochs. `labels[i]` is the label set fed to ν and
/// the MCE for dataset image i (ground truth, pseudo or mixed). When
/// `hungarian_eval` is set the held-out mIoU maps predicted ids to classes first.
TrainResult train(const RunConfig& cfg, std::span<const LabeledImage> dataset, std::span<const LabelSet> labels,
                  const Split& split, bool hungarian_eval = false, const TrainOptions& opts = {});

/// Per-patch argmax of the un-augmented images against patch-majority ground truth.
ConfusionMatrix patch_confusion(const Checkpoint& ckpt, std::span<const LabeledImage> dataset,
                                std::span<const std::size_t> indices, int gt_class_count);

/// mIoU report; with `hungarian` the predicted ids are first matched to classes
/// by maximum total IoU.
EvaluationReport evaluate(const Checkpoint& ckpt, std::span<const LabeledImage> dataset,
                          std::span<const std::size_t> indices, int gt_class_count, bool hungarian = false);

/// Both branches of one batch with everything the backward pass needs.
struct BatchPass {
  std::vector<EncoderTape> tape_global, tape_local;
  std::vector<PredictTape> predict_global, predict_local;
  std::vector<PatchFeatures> features_global, features_local;
  PredictionMatrix p_global, p_local;  // stacked, image i owns rows [i K, (i + 1) K)
  BatchAlignment alignment;
  Eigen::MatrixXd label_matrix;  // images x classes, 0/1
};

BatchPass forward_batch(const Checkpoint& ck, std::span<const ViewPair> views, std::span<const LabelSet> labels,
                        int class_count, const PredictOptions& po);

/// Accumulates parameter gradients from dL/dP of both branches. The encoder
/// is skipped unless `encoder` is set.
void backward_batch(const BatchPass& pass, const Checkpoint& ck, const PredictOptions& po,
                    const Eigen::MatrixXd& grad_p_global, const Eigen::MatrixXd& grad_p_local, bool encoder,
                    EncoderParams& enc_grads, ProjectionWeights& head_grads);

/// Finite-difference check of the full network: views of `images` are fixed,
/// the plans are computed once from the initial predictions and held constant.
GradCheckReport network_grad_check(const RunConfig& cfg, std::span<const LabeledImage> images,
                                   const GradCheckOptions& opts = {});

/// Column mean of P over every patch of one un-augmented image.
DiscreteMeasure predicted_density(const Checkpoint& ckpt, const ImageTensor& image);

}  // namespace pc2m
