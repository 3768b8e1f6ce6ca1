#pragma once

#include "pc2m/area_model.hpp"
#include "pc2m/patch_net.hpp"

#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

namespace pc2m {

struct AffinityGraph {
  Eigen::MatrixXd a;          // rectified cosine affinities
  Eigen::VectorXd degree;
  Eigen::MatrixXd laplacian;  // D^-1/2 (D - A) D^-1/2
  bool isolated_vertices = false;  // some degree hit the 1e-12 floor
};

/// A = max(0, phi phi^T) over L2-normalized feature rows.
AffinityGraph patch_affinity(const Eigen::MatrixXd& features);

struct EigenBasis {
  Eigen::VectorXd eigenvalues;   // ascending
  Eigen::MatrixXd eigenvectors;  // columns
};

struct EigenSolverError : std::runtime_error {
  EigenSolverError(const std::string& what, double residual)
      : std::runtime_error(what), residual(residual) {}
  double residual;
};

struct EigenOptions {
  int max_sweeps = 100;
  double residual_tol = 1e-6;
};

/// Full decomposition of a symmetric matrix by cyclic Jacobi rotations,
/// eigenpairs sorted ascending.
EigenBasis jacobi_eigensolver(const Eigen::MatrixXd& symmetric, const EigenOptions& opts = {});

/// The k_e smallest eigenpairs of the graph Laplacian. Throws EigenSolverError
/// when a residual ||L v - lambda v||_inf exceeds opts.residual_tol.
EigenBasis eigendecompose(const AffinityGraph& g, int k_e, const EigenOptions& opts = {});

/// Rows of D^-1/2 U: eigenvectors of the normalized Laplacian mapped to the
/// random-walk form, where a disconnected component has a constant indicator.
EigenBasis degree_scaled(const AffinityGraph& g, const EigenBasis& basis);

struct KMeansResult {
  std::vector<int> assignment;
  Eigen::MatrixXd centers;  // k x dim
};

/// Lloyd iterations with k-means++ seeding; rows of `points` are samples.
/// Distance ties go to the lowest center index.
KMeansResult kmeans(const Eigen::MatrixXd& points, int k, std::uint64_t seed, int iterations = 50);

struct PatchBox {
  int x0 = 0, y0 = 0, x1 = 0, y1 = 0;  // patch-grid coordinates, half-open
};

struct RegionSet {
  std::vector<int> region_of_patch;  // raster order
  std::vector<PatchBox> boxes;       // one per region
  int region_count = 0;
  bool fewer_regions = false;        // fewer distinct rows than requested regions
};

/// k-means over eigenvector rows, skipping the first (trivial) eigenvector.
/// Region ids are numbered by first appearance in raster order.
RegionSet cluster_eigenvectors(const EigenBasis& basis, int n_regions, std::uint64_t seed, int grid_side);

struct SpectralConfig {
  int eigenvectors = 3;  // trivial eigenvector included
  int regions = 3;
  int kmeans_iterations = 50;
  std::uint64_t seed = 11;
};

/// Per-patch descriptors for the affinity graph: the encoder's patch embedding
/// of pixels centered at mid-gray, without positions or mixing blocks.
Eigen::MatrixXd patch_descriptors(const ImageTensor& image, const EncoderParams& encoder);

RegionSet image_regions(const ImageTensor& image, const EncoderParams& encoder, const SpectralConfig& cfg);

/// One graph over every patch of every image; each image's regions are its
/// patches grouped by the shared clustering.
std::vector<RegionSet> dataset_level_regions(std::span<const ImageTensor> images, const EncoderParams& encoder,
                                             const SpectralConfig& cfg);

struct PseudoLabelResult {
  std::vector<LabelSet> labels;   // per image, cluster ids in [0, k)
  std::vector<int> crop_image;    // image index of every crop
  std::vector<int> crop_cluster;  // cluster id of every crop
};

/// Mean patch descriptor of a crop resized to the encoder resolution, L2-normalized.
Eigen::VectorXd crop_descriptor(const ImageTensor& image, const CropRect& rect, const EncoderParams& encoder);

/// Crops every region box, describes it and runs one k-means over all crops.
PseudoLabelResult crops_and_global_kmeans(std::span<const ImageTensor> images, std::span<const RegionSet> regions,
                                          const EncoderParams& encoder, int k, std::uint64_t seed,
                                          int kmeans_iterations = 50);

/// Per-image regions followed by crops_and_global_kmeans.
PseudoLabelResult generate_pseudo_labels(std::span<const ImageTensor> images, const EncoderParams& encoder, int k,
                                         const SpectralConfig& cfg);

}  // namespace pc2m
