#pragma once

#include "pc2m/ot_core.hpp"
#include "pc2m/patch_net.hpp"

#include <functional>
#include <span>
#include <string>
#include <vector>

namespace pc2m {

struct LossBreakdown {
  double match = 0.0;
  double mce = 0.0;
  double total = 0.0;
  double entropy_terms = 0.0;  // H(Q_local) + H(Q_global)
};

enum class MatchMode {
  Cross,  // local predictions against the global plan and vice versa
  Self,   // each branch against its own plan (ablation)
};

struct MatchOptions {
  MatchMode mode = MatchMode::Cross;
  /// Divide the cross terms by the number of rows on top of Q's unit mass.
  bool per_patch_average = false;
};

/// Local row -> global row mapping over a batch; -1 marks an unusable local patch.
using BatchAlignment = std::vector<int>;

/// Concatenates per-image alignments, offsetting image b by b * patches_per_image.
BatchAlignment batch_alignment(std::span<const PatchAlignment> per_image, int patches_per_image);

struct MatchResult {
  double value = 0.0;
  double cross_terms = 0.0;
  double entropy_terms = 0.0;
  Eigen::MatrixXd grad_p_global;  // d value / d P_global
  Eigen::MatrixXd grad_p_local;   // d value / d P_local
};

/// Match loss with both plans under stop-gradient:
///   -E_{Q_g}[log P_l] - E_{Q_l}[log P_g] + H(Q_l) + H(Q_g)
/// Rows of invalid local patches are dropped from both cross terms and the
/// remaining sum is rescaled by rows / valid rows.
MatchResult match_loss(const PredictionMatrix& p_global, const PredictionMatrix& p_local,
                       const Eigen::MatrixXd& q_global, const Eigen::MatrixXd& q_local,
                       const BatchAlignment& align, const MatchOptions& opts = {});

struct MceResult {
  double value = 0.0;
  Eigen::MatrixXd grad_scores;  // images x classes
  bool clamped = false;
};

/// Mean multi-label binary cross-entropy over images and classes.
/// Scores are clamped to [1e-7, 1 - 1e-7]; clamped entries get zero gradient.
MceResult mce_loss(const Eigen::MatrixXd& pooled, const Eigen::MatrixXd& labels);

struct Pc2mInputs {
  const PredictionMatrix* p_global = nullptr;
  const PredictionMatrix* p_local = nullptr;
  const Eigen::MatrixXd* q_global = nullptr;
  const Eigen::MatrixXd* q_local = nullptr;
  BatchAlignment alignment;
  int patches_per_image = 0;
  const Eigen::MatrixXd* labels = nullptr;  // images x classes, 0/1
  bool include_match = true;
  MatchOptions match;
};

struct Pc2mResult {
  LossBreakdown loss;
  Eigen::MatrixXd grad_p_global;
  Eigen::MatrixXd grad_p_local;
  bool clamped = false;
};

/// L = L_MCE (global branch, max-pooled) + L_match.
Pc2mResult pc2m_loss(const Pc2mInputs& in);

struct GradCheckOptions {
  double h = 1e-5;
  double tolerance = 1e-4;
  /// Denominator floor of the relative error. Central differences at h = 1e-5
  /// carry ~1e-10 rounding noise, which would dominate smaller gradients.
  double abs_floor = 1e-5;
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::string worst_parameter;
  Eigen::Index worst_row = 0;
  Eigen::Index worst_col = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t checked = 0;
  bool passed = true;
};

/// Compares `analytic[k]` against central differences of `loss_fn` taken by
/// perturbing `*params[k].value` in place. Relative error per entry is
/// |a - n| / max(|a|, |n|, abs_floor).
GradCheckReport grad_check(const std::function<double()>& loss_fn, std::span<const NamedMatrix> params,
                           std::span<const Eigen::MatrixXd> analytic, const GradCheckOptions& opts = {});

}  // namespace pc2m
