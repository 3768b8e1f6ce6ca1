#pragma once

#include "pc2m/ot_core.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace pc2m {

/// Square RGB image, values in [0, 1], stored row-major as (y, x, channel).
struct ImageTensor {
  int size = 0;
  int id = 0;
  std::vector<double> pixels;

  static ImageTensor zeros(int size, int id = 0);

  double& at(int y, int x, int ch) { return pixels[static_cast<std::size_t>((y * size + x) * 3 + ch)]; }
  double at(int y, int x, int ch) const {
    return pixels[static_cast<std::size_t>((y * size + x) * 3 + ch)];
  }
};

/// Axis-aligned rectangle in original-image pixel coordinates.
struct CropRect {
  double x = 0.0;
  double y = 0.0;
  double width = 0.0;
  double height = 0.0;

  static CropRect full(int size) { return {0.0, 0.0, double(size), double(size)}; }
};

struct ViewConfig {
  double global_scale_min = 0.9;
  double global_scale_max = 1.0;
  double local_area_min = 0.2;
  double local_area_max = 0.6;
  /// Brightness gain is drawn from [1 - jitter, 1 + jitter].
  double jitter = 0.1;

  void validate() const;
};

struct ViewPair {
  ImageTensor global_view;
  ImageTensor local_view;
  CropRect global_crop;
  CropRect local_crop;
  std::uint64_t augmentation_seed = 0;
};

/// Bilinear resample of `rect` (original coordinates) to an image of `out_size`.
ImageTensor resample(const ImageTensor& image, const CropRect& rect, int out_size, double gain = 1.0);

/// Global view: near-full crop with scale in [global_scale_min, global_scale_max].
/// Local view: random square crop covering [local_area_min, local_area_max] of
/// the image area. Both are resized back to the input resolution.
ViewPair make_views(const ImageTensor& image, std::uint64_t seed, const ViewConfig& cfg = {});

/// Deterministic view construction from explicit crops (no jitter unless gains differ from 1).
ViewPair render_views(const ImageTensor& image, const CropRect& global_crop,
                      const CropRect& local_crop, double global_gain = 1.0,
                      double local_gain = 1.0);

// ---------------------------------------------------------------------------
// Encoder

struct EncoderConfig {
  int image_size = 32;
  int patch_size = 8;
  int embed_dim = 64;
  int blocks = 2;
  double init_layer_scale = 0.1;

  int patches_per_side() const { return image_size / patch_size; }
  int patch_count() const { return patches_per_side() * patches_per_side(); }
  int patch_dim() const { return patch_size * patch_size * 3; }
  void validate() const;
};

/// One residual self-attention mixing block: H + (softmax(H Wq (H Wk)^T / sqrt(e)) H Wv) * scale.
struct MixingBlock {
  Eigen::MatrixXd wq;
  Eigen::MatrixXd wk;
  Eigen::MatrixXd wv;
  Eigen::MatrixXd scale;  // 1 x e
};

/// Toy patch encoder: linear patch embedding, positional embedding and a
/// stack of mixing blocks. Both branches use the same instance.
struct EncoderParams {
  EncoderConfig cfg;
  Eigen::MatrixXd embed;       // patch_dim x e
  Eigen::MatrixXd embed_bias;  // 1 x e
  Eigen::MatrixXd pos;         // K x e
  std::vector<MixingBlock> blocks;
  std::uint64_t seed = 0;

  static EncoderParams init(const EncoderConfig& cfg, std::uint64_t seed);
  /// Same shapes, all zeros. Used as a gradient accumulator.
  EncoderParams zeros_like() const;
};

/// Dense class projection shared by both branches.
struct ProjectionWeights {
  Eigen::MatrixXd w;  // e x |C|

  static ProjectionWeights init(int embed_dim, int class_count, std::uint64_t seed);
  ProjectionWeights zeros_like() const { return {Eigen::MatrixXd::Zero(w.rows(), w.cols())}; }
};

struct PatchFeatures {
  Eigen::MatrixXd values;  // K x e
};

/// K x (d*d*3) matrix of flattened patches in raster order.
Eigen::MatrixXd extract_patches(const ImageTensor& view, int patch_size);

/// Intermediate values kept for the backward pass.
struct EncoderTape {
  Eigen::MatrixXd patches;
  std::vector<Eigen::MatrixXd> inputs;  // block inputs H_l
  std::vector<Eigen::MatrixXd> q, k, v, attn, mixed;
};

/// Output of the embedding stage only: X E + b + pos.
PatchFeatures embed_patches(const ImageTensor& view, const EncoderParams& params);

PatchFeatures encode(const ImageTensor& view, const EncoderParams& params,
                     EncoderTape* tape = nullptr);

/// Accumulates d(loss)/d(params) into `grads` given d(loss)/d(features).
/// Gradients are produced for every parameter; callers decide what to update.
void encode_backward(const EncoderTape& tape, const EncoderParams& params,
                     const Eigen::MatrixXd& grad_features, EncoderParams& grads);

// ---------------------------------------------------------------------------
// Prediction

struct PredictOptions {
  double temperature = 0.1;
  /// L2-normalize feature rows and weight columns before the product.
  bool cosine = true;
};

struct PredictTape {
  Eigen::MatrixXd f_hat;
  Eigen::MatrixXd w_hat;
  Eigen::VectorXd f_norms;
  Eigen::VectorXd w_norms;
  Eigen::MatrixXd probs;
};

/// Row softmax of logits / temperature, floored away from zero.
PredictionMatrix softmax_rows(const Eigen::MatrixXd& logits, double temperature);

PredictionMatrix predict(const PatchFeatures& f, const ProjectionWeights& w,
                         const PredictOptions& opts = {}, PredictTape* tape = nullptr);

/// Backward of `predict`: given d(loss)/dP, accumulates into grad_features and grad_w.
void predict_backward(const PredictTape& tape, const PatchFeatures& f, const ProjectionWeights& w,
                      const PredictOptions& opts, const Eigen::MatrixXd& grad_p,
                      Eigen::MatrixXd& grad_features, Eigen::MatrixXd& grad_w);

// ---------------------------------------------------------------------------
// Alignment and pooling

struct PatchAlignment {
  std::vector<int> mapping;  // local patch j -> global patch index, -1 when invalid

  bool valid(std::size_t j) const { return mapping[j] >= 0; }
  std::size_t valid_count() const;
};

/// Nearest-center mapping of every local patch into the global view.
PatchAlignment align_patches(const ViewPair& pair, int patch_size);

struct PooledScores {
  Eigen::VectorXd scores;             // per class
  std::vector<Eigen::Index> argmax;   // patch index holding the max, per class
};

/// Global max pooling over patches.
PooledScores pool_image_scores(const PredictionMatrix& p);

// ---------------------------------------------------------------------------

struct NamedMatrix {
  std::string name;
  Eigen::MatrixXd* value;
};

/// Stable, named view of every trainable tensor. The head is listed first.
std::vector<NamedMatrix> named_parameters(EncoderParams& encoder, ProjectionWeights& head);

}  // namespace pc2m
