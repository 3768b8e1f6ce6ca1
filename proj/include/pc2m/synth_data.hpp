#pragma once

#include "pc2m/area_model.hpp"
#include "pc2m/patch_net.hpp"

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace pc2m {

struct ClassSignature {
  Eigen::Vector3d color;
  bool stripes = false;
};

/// Synthetic dataset description. Class 0 is the background and is present
/// in every image; classes 1..class_count-1 are drawn as shapes.
struct DatasetSpec {
  std::uint64_t seed = 7;
  int image_count = 200;
  int class_count = 5;
  int image_size = 32;
  int patch_size = 8;
  int min_shapes = 1;
  int max_shapes = 3;
  /// Sampling weights over foreground classes (length class_count - 1); empty means uniform.
  std::vector<double> class_weights;
  double noise = 0.05;
  /// Shape side length as a fraction of the image side.
  double min_shape_fraction = 0.3;
  double max_shape_fraction = 0.55;
  bool stripes = true;

  void validate() const;
  /// Normalized foreground sampling weights.
  std::vector<double> foreground_weights() const;
  std::vector<ClassSignature> signatures() const;
};

struct LabeledImage {
  ImageTensor image;
  std::vector<int> mask;  // image_size^2 class ids, row-major
  LabelSet labels;

  int mask_at(int y, int x) const { return mask[static_cast<std::size_t>(y * image.size + x)]; }
};

/// Per-index seed, so images can be generated independently of each other.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t index);

LabeledImage gen_image(const DatasetSpec& spec, int index);
std::vector<LabeledImage> gen_dataset(const DatasetSpec& spec);

/// alpha*: mean per-image class area fraction, normalized.
DiscreteMeasure ground_truth_area(std::span<const LabeledImage> dataset, int class_count);

/// Majority class of each patch (ties to the lowest id), raster order.
std::vector<int> patch_majority_labels(const LabeledImage& image, int patch_size, int class_count);

std::vector<LabelSet> labels_of(std::span<const LabeledImage> dataset);

/// Writes images.bin, masks.bin and index.txt into `dir`.
void save_dataset(const std::filesystem::path& dir, std::span<const LabeledImage> dataset, int class_count);

struct LoadedDataset {
  std::vector<LabeledImage> images;
  int class_count = 0;
};
LoadedDataset load_dataset(const std::filesystem::path& dir);

/// Plain-text label file: one "<id> <c> <c> ..." line per image, '#' comments.
void write_label_file(const std::filesystem::path& path, std::span<const int> ids,
                      std::span<const LabelSet> labels, int class_count);
struct LabelFile {
  std::vector<int> ids;
  std::vector<LabelSet> labels;
  int class_count = 0;
};
LabelFile read_label_file(const std::filesystem::path& path);

}  // namespace pc2m
