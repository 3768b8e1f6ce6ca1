#include "pc2m/spectral_labels.hpp"

#include "pc2m/synth_data.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

namespace pc2m {

AffinityGraph patch_affinity(const Eigen::MatrixXd& features) {
  if (features.rows() == 0 || !features.allFinite())
    throw std::invalid_argument("patch_affinity: features must be finite and non-empty");
  Eigen::MatrixXd phi = features;
  for (Eigen::Index i = 0; i < phi.rows(); ++i) {
    const double norm = phi.row(i).norm();
    if (norm > 0.0) phi.row(i) /= norm;
  }
  AffinityGraph g;
  g.a = (phi * phi.transpose()).cwiseMax(0.0);
  g.a = 0.5 * (g.a + g.a.transpose());
  g.degree = g.a.rowwise().sum();
  constexpr double kFloor = 1e-12;
  for (Eigen::Index i = 0; i < g.degree.size(); ++i) {
    if (g.degree[i] < kFloor) {
      g.degree[i] = kFloor;
      g.isolated_vertices = true;
    }
  }
  const Eigen::VectorXd inv_sqrt = g.degree.cwiseSqrt().cwiseInverse();
  Eigen::MatrixXd dm = -g.a;
  dm.diagonal() += g.degree;
  g.laplacian = inv_sqrt.asDiagonal() * dm * inv_sqrt.asDiagonal();
  g.laplacian = 0.5 * (g.laplacian + g.laplacian.transpose());
  return g;
}

EigenBasis jacobi_eigensolver(const Eigen::MatrixXd& symmetric, const EigenOptions& opts) {
  const Eigen::Index n = symmetric.rows();
  if (n != symmetric.cols()) throw std::invalid_argument("jacobi_eigensolver: matrix must be square");
  Eigen::MatrixXd a = 0.5 * (symmetric + symmetric.transpose());
  Eigen::MatrixXd v = Eigen::MatrixXd::Identity(n, n);
  const double scale = std::max(a.norm(), std::numeric_limits<double>::min());

  for (int sweep = 0; sweep < opts.max_sweeps; ++sweep) {
    double off = 0.0;
    for (Eigen::Index p = 0; p < n; ++p)
      for (Eigen::Index q = p + 1; q < n; ++q) off += a(p, q) * a(p, q);
    if (std::sqrt(off) <= 1e-15 * scale) break;
    for (Eigen::Index p = 0; p < n; ++p)
      for (Eigen::Index q = p + 1; q < n; ++q) {
        const double apq = a(p, q);
        if (std::abs(apq) <= std::numeric_limits<double>::min()) continue;
        const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
        const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (Eigen::Index k = 0; k < n; ++k) {
          const double akp = a(k, p), akq = a(k, q);
          a(k, p) = c * akp - s * akq;
          a(k, q) = s * akp + c * akq;
        }
        for (Eigen::Index k = 0; k < n; ++k) {
          const double apk = a(p, k), aqk = a(q, k);
          a(p, k) = c * apk - s * aqk;
          a(q, k) = s * apk + c * aqk;
        }
        a(p, q) = a(q, p) = 0.0;
        for (Eigen::Index k = 0; k < n; ++k) {
          const double vkp = v(k, p), vkq = v(k, q);
          v(k, p) = c * vkp - s * vkq;
          v(k, q) = s * vkp + c * vkq;
        }
      }
  }

  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::stable_sort(order.begin(), order.end(), [&](Eigen::Index x, Eigen::Index y) { return a(x, x) < a(y, y); });
  EigenBasis out;
  out.eigenvalues.resize(n);
  out.eigenvectors.resize(n, n);
  for (Eigen::Index k = 0; k < n; ++k) {
    out.eigenvalues[k] = a(order[static_cast<std::size_t>(k)], order[static_cast<std::size_t>(k)]);
    out.eigenvectors.col(k) = v.col(order[static_cast<std::size_t>(k)]);
  }
  return out;
}

namespace {

// A disconnected graph has a null space of dimension > 1 and the solver may
// return any basis of it. Rotate the block so its first vector is D^1/2 1,
// which keeps "skip the first eigenvector" meaning "skip the trivial one".
void align_null_space(const AffinityGraph& g, EigenBasis& full) {
  constexpr double kNull = 1e-9;
  Eigen::Index m = 0;
  while (m < full.eigenvalues.size() && std::abs(full.eigenvalues[m]) <= kNull) ++m;
  if (m < 2) return;
  const Eigen::VectorXd t = g.degree.cwiseSqrt().normalized();
  if ((g.laplacian * t).cwiseAbs().maxCoeff() > kNull) return;  // floored degrees: t is not a null vector
  const Eigen::VectorXd c = full.eigenvectors.leftCols(m).transpose() * t;
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(Eigen::MatrixXd(c.normalized()));
  Eigen::MatrixXd rot = qr.householderQ();
  if (rot.col(0).dot(c) < 0.0) rot.col(0) *= -1.0;
  full.eigenvectors.leftCols(m) = (full.eigenvectors.leftCols(m) * rot).eval();
}

}  // namespace

EigenBasis eigendecompose(const AffinityGraph& g, int k_e, const EigenOptions& opts) {
  const Eigen::Index n = g.laplacian.rows();
  if (k_e < 1 || k_e > n) throw std::invalid_argument("eigendecompose: k_e must lie in [1, vertex count]");
  EigenBasis full = jacobi_eigensolver(g.laplacian, opts);
  align_null_space(g, full);
  EigenBasis out;
  out.eigenvalues = full.eigenvalues.head(k_e);
  out.eigenvectors = full.eigenvectors.leftCols(k_e);
  double worst = 0.0;
  for (int k = 0; k < k_e; ++k) {
    const Eigen::VectorXd r = g.laplacian * out.eigenvectors.col(k) - out.eigenvalues[k] * out.eigenvectors.col(k);
    worst = std::max(worst, r.cwiseAbs().maxCoeff());
  }
  if (!(worst <= opts.residual_tol))
    throw EigenSolverError("eigendecompose: residual " + std::to_string(worst) + " above tolerance", worst);
  return out;
}

EigenBasis degree_scaled(const AffinityGraph& g, const EigenBasis& basis) {
  EigenBasis out = basis;
  out.eigenvectors = g.degree.cwiseSqrt().cwiseInverse().asDiagonal() * basis.eigenvectors;
  return out;
}

KMeansResult kmeans(const Eigen::MatrixXd& points, int k, std::uint64_t seed, int iterations) {
  const Eigen::Index n = points.rows();
  if (k < 1 || k > n) throw std::invalid_argument("kmeans: k must lie in [1, sample count]");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  KMeansResult out;
  out.centers.resize(k, points.cols());
  std::vector<double> d2(static_cast<std::size_t>(n), std::numeric_limits<double>::infinity());
  Eigen::Index first = static_cast<Eigen::Index>(rng() % static_cast<std::uint64_t>(n));
  out.centers.row(0) = points.row(first);
  for (int c = 1; c < k; ++c) {
    double total = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      d2[static_cast<std::size_t>(i)] =
          std::min(d2[static_cast<std::size_t>(i)], (points.row(i) - out.centers.row(c - 1)).squaredNorm());
      total += d2[static_cast<std::size_t>(i)];
    }
    Eigen::Index pick = 0;
    if (total > 0.0) {
      double r = unit(rng) * total;
      pick = n - 1;
      for (Eigen::Index i = 0; i < n; ++i) {
        if (r < d2[static_cast<std::size_t>(i)]) {
          pick = i;
          break;
        }
        r -= d2[static_cast<std::size_t>(i)];
      }
    }
    out.centers.row(c) = points.row(pick);
  }

  out.assignment.assign(static_cast<std::size_t>(n), -1);
  for (int it = 0; it < iterations; ++it) {
    bool changed = false;
    for (Eigen::Index i = 0; i < n; ++i) {
      int best = 0;
      double best_d = std::numeric_limits<double>::infinity();
      for (int c = 0; c < k; ++c) {
        const double d = (points.row(i) - out.centers.row(c)).squaredNorm();
        if (d < best_d) {
          best_d = d;
          best = c;
        }
      }
      if (out.assignment[static_cast<std::size_t>(i)] != best) changed = true;
      out.assignment[static_cast<std::size_t>(i)] = best;
    }
    if (!changed && it > 0) break;
    Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(k, points.cols());
    std::vector<int> counts(static_cast<std::size_t>(k), 0);
    for (Eigen::Index i = 0; i < n; ++i) {
      sums.row(out.assignment[static_cast<std::size_t>(i)]) += points.row(i);
      ++counts[static_cast<std::size_t>(out.assignment[static_cast<std::size_t>(i)])];
    }
    for (int c = 0; c < k; ++c)
      if (counts[static_cast<std::size_t>(c)] > 0) out.centers.row(c) = sums.row(c) / counts[static_cast<std::size_t>(c)];
  }
  return out;
}

namespace {

int distinct_rows(const Eigen::MatrixXd& rows, double tol) {
  std::vector<Eigen::Index> reps;
  for (Eigen::Index i = 0; i < rows.rows(); ++i) {
    bool seen = false;
    for (auto r : reps)
      if ((rows.row(i) - rows.row(r)).cwiseAbs().maxCoeff() <= tol) {
        seen = true;
        break;
      }
    if (!seen) reps.push_back(i);
  }
  return static_cast<int>(reps.size());
}

RegionSet regions_from_assignment(const std::vector<int>& assignment, int grid_side) {
  RegionSet out;
  std::vector<int> relabel;
  out.region_of_patch.resize(assignment.size());
  for (std::size_t i = 0; i < assignment.size(); ++i) {
    const int c = assignment[i];
    if (c >= static_cast<int>(relabel.size())) relabel.resize(static_cast<std::size_t>(c) + 1, -1);
    if (relabel[static_cast<std::size_t>(c)] < 0) relabel[static_cast<std::size_t>(c)] = out.region_count++;
    out.region_of_patch[i] = relabel[static_cast<std::size_t>(c)];
  }
  out.boxes.assign(static_cast<std::size_t>(out.region_count), PatchBox{grid_side, grid_side, 0, 0});
  for (std::size_t i = 0; i < assignment.size(); ++i) {
    auto& b = out.boxes[static_cast<std::size_t>(out.region_of_patch[i])];
    const int y = static_cast<int>(i) / grid_side, x = static_cast<int>(i) % grid_side;
    b.x0 = std::min(b.x0, x);
    b.y0 = std::min(b.y0, y);
    b.x1 = std::max(b.x1, x + 1);
    b.y1 = std::max(b.y1, y + 1);
  }
  return out;
}

}  // namespace

RegionSet cluster_eigenvectors(const EigenBasis& basis, int n_regions, std::uint64_t seed, int grid_side) {
  if (n_regions < 1) throw std::invalid_argument("cluster_eigenvectors: n_regions must be positive");
  const Eigen::Index n = basis.eigenvectors.rows();
  if (grid_side * grid_side != n) throw std::invalid_argument("cluster_eigenvectors: grid does not match vertex count");
  const Eigen::Index cols = basis.eigenvectors.cols();
  const Eigen::MatrixXd rows = cols > 1 ? Eigen::MatrixXd(basis.eigenvectors.rightCols(cols - 1))
                                        : Eigen::MatrixXd(basis.eigenvectors);
  const int distinct = distinct_rows(rows, 1e-9);
  const int k = std::min(n_regions, distinct);
  RegionSet out = regions_from_assignment(kmeans(rows, k, seed).assignment, grid_side);
  out.fewer_regions = out.region_count < n_regions;
  return out;
}

Eigen::MatrixXd patch_descriptors(const ImageTensor& image, const EncoderParams& encoder) {
  // content only: the positional table and the untrained mixing blocks carry no appearance
  Eigen::MatrixXd f = (extract_patches(image, encoder.cfg.patch_size).array() - 0.5).matrix() * encoder.embed;
  return f;
}

RegionSet image_regions(const ImageTensor& image, const EncoderParams& encoder, const SpectralConfig& cfg) {
  const AffinityGraph g = patch_affinity(patch_descriptors(image, encoder));
  const int k_e = std::min<int>(cfg.eigenvectors, static_cast<int>(g.laplacian.rows()));
  const EigenBasis basis = degree_scaled(g, eigendecompose(g, k_e));
  return cluster_eigenvectors(basis, cfg.regions, mix_seed(cfg.seed, static_cast<std::uint64_t>(image.id)),
                              encoder.cfg.patches_per_side());
}

std::vector<RegionSet> dataset_level_regions(std::span<const ImageTensor> images, const EncoderParams& encoder,
                                             const SpectralConfig& cfg) {
  if (images.empty()) throw std::invalid_argument("dataset_level_regions: no images");
  const int kp = encoder.cfg.patch_count();
  Eigen::MatrixXd all(static_cast<Eigen::Index>(images.size()) * kp, encoder.cfg.embed_dim);
  for (std::size_t t = 0; t < images.size(); ++t)
    all.middleRows(static_cast<Eigen::Index>(t) * kp, kp) = patch_descriptors(images[t], encoder);
  const AffinityGraph g = patch_affinity(all);
  const int k_e = std::min<int>(cfg.eigenvectors, static_cast<int>(g.laplacian.rows()));
  const EigenBasis basis = degree_scaled(g, eigendecompose(g, k_e));
  const Eigen::Index cols = basis.eigenvectors.cols();
  const Eigen::MatrixXd rows = cols > 1 ? Eigen::MatrixXd(basis.eigenvectors.rightCols(cols - 1))
                                        : Eigen::MatrixXd(basis.eigenvectors);
  const int k = std::min(cfg.regions, distinct_rows(rows, 1e-9));
  const auto assignment = kmeans(rows, k, cfg.seed, cfg.kmeans_iterations).assignment;
  std::vector<RegionSet> out;
  out.reserve(images.size());
  for (std::size_t t = 0; t < images.size(); ++t) {
    std::vector<int> local(assignment.begin() + static_cast<std::ptrdiff_t>(t) * kp,
                           assignment.begin() + static_cast<std::ptrdiff_t>(t + 1) * kp);
    RegionSet r = regions_from_assignment(local, encoder.cfg.patches_per_side());
    r.fewer_regions = r.region_count < cfg.regions;
    out.push_back(std::move(r));
  }
  return out;
}

Eigen::VectorXd crop_descriptor(const ImageTensor& image, const CropRect& rect, const EncoderParams& encoder) {
  const ImageTensor view = resample(image, rect, encoder.cfg.image_size);
  Eigen::VectorXd f = patch_descriptors(view, encoder).colwise().mean().transpose();
  const double norm = f.norm();
  if (norm > 0.0) f /= norm;
  return f;
}

PseudoLabelResult crops_and_global_kmeans(std::span<const ImageTensor> images, std::span<const RegionSet> regions,
                                          const EncoderParams& encoder, int k, std::uint64_t seed,
                                          int kmeans_iterations) {
  if (images.size() != regions.size())
    throw std::invalid_argument("crops_and_global_kmeans: one region set per image required");
  const int d = encoder.cfg.patch_size;
  PseudoLabelResult out;
  std::vector<Eigen::VectorXd> descriptors;
  for (std::size_t t = 0; t < images.size(); ++t)
    for (const auto& b : regions[t].boxes) {
      const CropRect rect{double(b.x0 * d), double(b.y0 * d), double((b.x1 - b.x0) * d), double((b.y1 - b.y0) * d)};
      descriptors.push_back(crop_descriptor(images[t], rect, encoder));
      out.crop_image.push_back(static_cast<int>(t));
    }
  if (k < 1 || k > static_cast<int>(descriptors.size()))
    throw std::invalid_argument("crops_and_global_kmeans: k = " + std::to_string(k) + " exceeds the " +
                                std::to_string(descriptors.size()) + " available crops");
  Eigen::MatrixXd points(static_cast<Eigen::Index>(descriptors.size()), encoder.cfg.embed_dim);
  for (std::size_t i = 0; i < descriptors.size(); ++i) points.row(static_cast<Eigen::Index>(i)) = descriptors[i];
  out.crop_cluster = kmeans(points, k, seed, kmeans_iterations).assignment;
  out.labels.assign(images.size(), {});
  for (std::size_t i = 0; i < out.crop_cluster.size(); ++i)
    out.labels[static_cast<std::size_t>(out.crop_image[i])].insert(out.crop_cluster[i]);
  return out;
}

PseudoLabelResult generate_pseudo_labels(std::span<const ImageTensor> images, const EncoderParams& encoder, int k,
                                         const SpectralConfig& cfg) {
  std::vector<RegionSet> regions;
  regions.reserve(images.size());
  for (const auto& img : images) regions.push_back(image_regions(img, encoder, cfg));
  return crops_and_global_kmeans(images, regions, encoder, k, cfg.seed, cfg.kmeans_iterations);
}

}  // namespace pc2m
