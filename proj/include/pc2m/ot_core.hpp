#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <vector>

namespace pc2m {

/// Role tag carried by a DiscreteMeasure.
enum class MeasureRole {
  PatchMarginal,          // delta
  AreaTarget,             // alpha
  AreaState,              // a-tilde
  Frequency,              // nu_D
  UnnormalizedFrequency,  // nu_b, not required to sum to one
};

/// Nonnegative weight vector on the probability simplex.
///
/// Construction validates the weights: every entry must be finite and
/// nonnegative, and unless the role is UnnormalizedFrequency the entries must
/// sum to one within 1e-9. Use `normalized` to build from unnormalized mass.
class DiscreteMeasure {
 public:
  static constexpr double kSumTolerance = 1e-9;

  DiscreteMeasure() = default;
  DiscreteMeasure(Eigen::VectorXd weights, MeasureRole role);

  /// Rescales nonnegative `mass` to unit sum. Throws on zero total mass.
  static DiscreteMeasure normalized(Eigen::VectorXd mass, MeasureRole role);
  static DiscreteMeasure uniform(std::size_t bins, MeasureRole role);

  const Eigen::VectorXd& weights() const { return weights_; }
  MeasureRole role() const { return role_; }
  Eigen::Index size() const { return weights_.size(); }
  double operator[](Eigen::Index i) const { return weights_[i]; }

 private:
  Eigen::VectorXd weights_;
  MeasureRole role_ = MeasureRole::Frequency;
};

/// Row-stochastic N x |C| matrix of strictly positive patch-class probabilities.
class PredictionMatrix {
 public:
  static constexpr double kRowTolerance = 1e-7;

  PredictionMatrix() = default;
  explicit PredictionMatrix(Eigen::MatrixXd values);

  const Eigen::MatrixXd& values() const { return values_; }
  Eigen::Index rows() const { return values_.rows(); }
  Eigen::Index cols() const { return values_.cols(); }
  double operator()(Eigen::Index i, Eigen::Index j) const { return values_(i, j); }

  /// Contiguous block of rows, e.g. the K patches of one image in a batch.
  PredictionMatrix rows_block(Eigen::Index start, Eigen::Index count) const;

 private:
  Eigen::MatrixXd values_;
};

/// S = -log(P), elementwise.
struct CostMatrix {
  Eigen::MatrixXd values;
};

/// K = exp(-S / eps) = P^(1/eps). The log values are kept so that a kernel
/// with underflowing entries can still be scaled in the log domain.
struct GibbsKernel {
  Eigen::MatrixXd values;
  Eigen::MatrixXd log_values;
  double epsilon = 1.0;
};

/// Transport plan with the marginals it was scaled towards.
struct CouplingMatrix {
  Eigen::MatrixXd values;
  DiscreteMeasure row_marginal;
  DiscreteMeasure col_marginal;

  /// True when both marginal constraints hold within `tol` (max L1) and
  /// zero-mass columns are identically zero.
  bool satisfies_marginals(double tol = 1e-6) const;
};

struct SinkhornOptions {
  double tol = 1e-6;
  int max_iter = 500;
  /// Kernel entries below this trigger log-domain iterations.
  double log_domain_threshold = 1e-30;
  bool force_log_domain = false;
  /// Record the marginal violation after every iteration.
  bool record_trace = false;
};

struct SinkhornResult {
  CouplingMatrix coupling;
  Eigen::VectorXd u;              // length N
  Eigen::VectorXd v;              // length = active columns
  std::vector<Eigen::Index> active_columns;
  int iterations = 0;
  double violation = 0.0;
  bool converged = false;
  bool log_domain = false;
  std::vector<double> trace;      // trace[k] = violation after iteration k
};

DiscreteMeasure make_patch_marginal(std::size_t n_patches);

CostMatrix cost_matrix(const PredictionMatrix& p);

GibbsKernel gibbs_kernel(const PredictionMatrix& p, double epsilon);

/// Entropic OT scaling: finds Q = diag(u) K diag(v) with Q 1 = row_m and
/// Q^T 1 = col_m. Columns with zero target mass are removed before the
/// iterations and reinserted as zero columns. Not reaching `tol` within
/// `max_iter` is reported through `converged`, not thrown.
SinkhornResult sinkhorn(const GibbsKernel& kernel, const DiscreteMeasure& row_m,
                        const DiscreteMeasure& col_m, const SinkhornOptions& opts = {});

/// H(Q) = -sum Q_ij (log Q_ij - 1), with 0 log 0 = 0.
double coupling_entropy(const Eigen::MatrixXd& q);
inline double coupling_entropy(const CouplingMatrix& q) { return coupling_entropy(q.values); }

/// <Q, S>_F - eps H(Q).
double transport_objective(const Eigen::MatrixXd& q, const CostMatrix& s, double epsilon);

/// max(||Q 1 - row_m||_1, ||Q^T 1 - col_m||_1).
double marginal_violation(const Eigen::MatrixXd& q, const DiscreteMeasure& row_m,
                          const DiscreteMeasure& col_m);

/// True iff the column means of P^(1/eps) are proportional to alpha within
/// `tol` (compared after normalizing both to unit sum, L-infinity).
bool fixed_point_test(const PredictionMatrix& p, const DiscreteMeasure& alpha, double epsilon,
                      double tol);

/// Linear epsilon schedule. A schedule with start == end is constant.
struct EpsilonSchedule {
  double start = 1.0;
  double end = 1.0;

  double at(int epoch, int total_epochs) const;
};

}  // namespace pc2m
