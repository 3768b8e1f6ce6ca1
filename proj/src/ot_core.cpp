#include "pc2m/ot_core.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace pc2m {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double log_sum_exp(const Eigen::Ref<const Eigen::VectorXd>& x) {
  const double m = x.maxCoeff();
  if (!std::isfinite(m)) return m;
  return m + std::log((x.array() - m).exp().sum());
}

double l1_deviation(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  return (a - b).cwiseAbs().sum();
}

}  // namespace

DiscreteMeasure::DiscreteMeasure(Eigen::VectorXd weights, MeasureRole role)
    : weights_(std::move(weights)), role_(role) {
  if (weights_.size() == 0) throw std::invalid_argument("DiscreteMeasure: empty weight vector");
  for (Eigen::Index i = 0; i < weights_.size(); ++i) {
    if (!std::isfinite(weights_[i]) || weights_[i] < 0.0)
      throw std::invalid_argument("DiscreteMeasure: entries must be finite and nonnegative");
  }
  if (role_ != MeasureRole::UnnormalizedFrequency &&
      std::abs(weights_.sum() - 1.0) > kSumTolerance) {
    throw std::invalid_argument("DiscreteMeasure: weights sum to " +
                                std::to_string(weights_.sum()) + ", expected 1");
  }
}

DiscreteMeasure DiscreteMeasure::normalized(Eigen::VectorXd mass, MeasureRole role) {
  const double total = mass.sum();
  if (!(total > 0.0) || !std::isfinite(total))
    throw std::invalid_argument("DiscreteMeasure::normalized: total mass must be positive");
  mass /= total;
  return DiscreteMeasure(std::move(mass), role);
}

DiscreteMeasure DiscreteMeasure::uniform(std::size_t bins, MeasureRole role) {
  if (bins == 0) throw std::invalid_argument("DiscreteMeasure::uniform: zero bins");
  const auto n = static_cast<Eigen::Index>(bins);
  return DiscreteMeasure(Eigen::VectorXd::Constant(n, 1.0 / static_cast<double>(bins)), role);
}

PredictionMatrix::PredictionMatrix(Eigen::MatrixXd values) : values_(std::move(values)) {
  if (values_.rows() == 0 || values_.cols() == 0)
    throw std::invalid_argument("PredictionMatrix: empty matrix");
  for (Eigen::Index i = 0; i < values_.rows(); ++i) {
    double sum = 0.0;
    for (Eigen::Index j = 0; j < values_.cols(); ++j) {
      const double p = values_(i, j);
      if (!(p > 0.0) || !std::isfinite(p))
        throw std::invalid_argument("PredictionMatrix: entries must be strictly positive");
      sum += p;
    }
    if (std::abs(sum - 1.0) > kRowTolerance)
      throw std::invalid_argument("PredictionMatrix: row " + std::to_string(i) +
                                  " sums to " + std::to_string(sum));
  }
}

PredictionMatrix PredictionMatrix::rows_block(Eigen::Index start, Eigen::Index count) const {
  if (start < 0 || count <= 0 || start + count > values_.rows())
    throw std::invalid_argument("PredictionMatrix::rows_block: range out of bounds");
  return PredictionMatrix(values_.middleRows(start, count));
}

bool CouplingMatrix::satisfies_marginals(double tol) const {
  if (marginal_violation(values, row_marginal, col_marginal) > tol) return false;
  for (Eigen::Index j = 0; j < values.cols(); ++j) {
    if (col_marginal[j] == 0.0 && values.col(j).cwiseAbs().maxCoeff() != 0.0) return false;
  }
  return true;
}

DiscreteMeasure make_patch_marginal(std::size_t n_patches) {
  if (n_patches == 0) throw std::invalid_argument("make_patch_marginal: n_patches must be >= 1");
  return DiscreteMeasure::uniform(n_patches, MeasureRole::PatchMarginal);
}

CostMatrix cost_matrix(const PredictionMatrix& p) {
  return CostMatrix{-p.values().array().log().matrix()};
}

GibbsKernel gibbs_kernel(const PredictionMatrix& p, double epsilon) {
  if (!(epsilon > 0.0) || !std::isfinite(epsilon))
    throw std::invalid_argument("gibbs_kernel: epsilon must be positive");
  GibbsKernel k;
  k.epsilon = epsilon;
  if (epsilon == 1.0) {
    k.values = p.values();
    k.log_values = p.values().array().log().matrix();
  } else {
    k.log_values = (p.values().array().log() / epsilon).matrix();
    k.values = p.values().array().pow(1.0 / epsilon).matrix();
  }
  return k;
}

namespace {

struct ScalingOutcome {
  Eigen::MatrixXd q;  // active columns only
  Eigen::VectorXd u;
  Eigen::VectorXd v;
  int iterations = 0;
  double violation = 0.0;
  bool converged = false;
  bool finite = true;
  std::vector<double> trace;
};

double active_violation(const Eigen::MatrixXd& q, const Eigen::VectorXd& r,
                        const Eigen::VectorXd& c) {
  return std::max(l1_deviation(q.rowwise().sum(), r), l1_deviation(q.colwise().sum().transpose(), c));
}

ScalingOutcome scale_multiplicative(const Eigen::MatrixXd& kernel, const Eigen::VectorXd& r,
                                    const Eigen::VectorXd& c, const SinkhornOptions& opts) {
  ScalingOutcome out;
  out.u = Eigen::VectorXd::Ones(kernel.rows());
  out.v = Eigen::VectorXd::Ones(kernel.cols());
  out.q = kernel;
  out.violation = active_violation(out.q, r, c);
  if (opts.record_trace) out.trace.push_back(out.violation);
  if (out.violation <= opts.tol) {
    out.converged = true;
    return out;
  }
  for (int it = 1; it <= opts.max_iter; ++it) {
    out.u = r.cwiseQuotient(kernel * out.v);
    out.v = c.cwiseQuotient(kernel.transpose() * out.u);
    if (!out.u.allFinite() || !out.v.allFinite()) {
      out.finite = false;
      return out;
    }
    out.q = out.u.asDiagonal() * kernel * out.v.asDiagonal();
    out.violation = active_violation(out.q, r, c);
    out.iterations = it;
    if (opts.record_trace) out.trace.push_back(out.violation);
    if (out.violation <= opts.tol) {
      out.converged = true;
      break;
    }
  }
  return out;
}

ScalingOutcome scale_log_domain(const Eigen::MatrixXd& log_kernel, const Eigen::VectorXd& r,
                                const Eigen::VectorXd& c, const SinkhornOptions& opts) {
  const Eigen::Index n = log_kernel.rows();
  const Eigen::Index m = log_kernel.cols();
  const Eigen::VectorXd log_r = r.array().log().matrix();
  const Eigen::VectorXd log_c = c.array().log().matrix();
  Eigen::VectorXd f = Eigen::VectorXd::Zero(n);
  Eigen::VectorXd g = Eigen::VectorXd::Zero(m);

  auto plan = [&]() {
    Eigen::MatrixXd q(n, m);
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index j = 0; j < m; ++j) {
        const double e = f[i] + log_kernel(i, j) + g[j];
        q(i, j) = std::isnan(e) ? 0.0 : std::exp(e);
      }
    return q;
  };

  ScalingOutcome out;
  out.q = plan();
  out.violation = active_violation(out.q, r, c);
  if (opts.record_trace) out.trace.push_back(out.violation);
  if (out.violation <= opts.tol) out.converged = true;
  Eigen::VectorXd scratch_row(m);
  Eigen::VectorXd scratch_col(n);
  for (int it = 1; it <= opts.max_iter && !out.converged; ++it) {
    for (Eigen::Index i = 0; i < n; ++i) {
      scratch_row = log_kernel.row(i).transpose() + g;
      f[i] = log_r[i] == kNegInf ? kNegInf : log_r[i] - log_sum_exp(scratch_row);
    }
    for (Eigen::Index j = 0; j < m; ++j) {
      scratch_col = log_kernel.col(j) + f;
      g[j] = log_c[j] - log_sum_exp(scratch_col);
    }
    out.q = plan();
    out.violation = active_violation(out.q, r, c);
    out.iterations = it;
    if (opts.record_trace) out.trace.push_back(out.violation);
    if (out.violation <= opts.tol) out.converged = true;
  }
  out.u = f.array().exp().matrix();
  out.v = g.array().exp().matrix();
  return out;
}

}  // namespace

SinkhornResult sinkhorn(const GibbsKernel& kernel, const DiscreteMeasure& row_m,
                        const DiscreteMeasure& col_m, const SinkhornOptions& opts) {
  const Eigen::Index n = kernel.values.rows();
  const Eigen::Index classes = kernel.values.cols();
  if (row_m.size() != n || col_m.size() != classes)
    throw std::invalid_argument("sinkhorn: marginal lengths do not match kernel shape");
  if (opts.max_iter < 0 || !(opts.tol >= 0.0))
    throw std::invalid_argument("sinkhorn: invalid tolerance or iteration budget");

  SinkhornResult result;
  for (Eigen::Index j = 0; j < classes; ++j)
    if (col_m[j] > 0.0) result.active_columns.push_back(j);
  if (result.active_columns.empty())
    throw std::invalid_argument("sinkhorn: column marginal has no mass");

  const auto m = static_cast<Eigen::Index>(result.active_columns.size());
  Eigen::MatrixXd k_active(n, m);
  Eigen::MatrixXd log_k_active(n, m);
  Eigen::VectorXd c_active(m);
  for (Eigen::Index a = 0; a < m; ++a) {
    const Eigen::Index j = result.active_columns[static_cast<std::size_t>(a)];
    k_active.col(a) = kernel.values.col(j);
    log_k_active.col(a) = kernel.log_values.col(j);
    c_active[a] = col_m[j];
  }

  const bool tiny_entries = k_active.minCoeff() < opts.log_domain_threshold;
  ScalingOutcome outcome;
  bool use_log = opts.force_log_domain || tiny_entries;
  if (!use_log) {
    outcome = scale_multiplicative(k_active, row_m.weights(), c_active, opts);
    if (!outcome.finite) use_log = true;
  }
  if (use_log) outcome = scale_log_domain(log_k_active, row_m.weights(), c_active, opts);

  result.coupling.values = Eigen::MatrixXd::Zero(n, classes);
  for (Eigen::Index a = 0; a < m; ++a)
    result.coupling.values.col(result.active_columns[static_cast<std::size_t>(a)]) = outcome.q.col(a);
  result.coupling.row_marginal = row_m;
  result.coupling.col_marginal = col_m;
  result.u = std::move(outcome.u);
  result.v = std::move(outcome.v);
  result.iterations = outcome.iterations;
  result.violation = marginal_violation(result.coupling.values, row_m, col_m);
  result.converged = outcome.converged;
  result.log_domain = use_log;
  result.trace = std::move(outcome.trace);
  return result;
}

double coupling_entropy(const Eigen::MatrixXd& q) {
  double h = 0.0;
  for (Eigen::Index j = 0; j < q.cols(); ++j)
    for (Eigen::Index i = 0; i < q.rows(); ++i) {
      const double x = q(i, j);
      if (x > 0.0) h -= x * (std::log(x) - 1.0);
    }
  return h;
}

double transport_objective(const Eigen::MatrixXd& q, const CostMatrix& s, double epsilon) {
  if (q.rows() != s.values.rows() || q.cols() != s.values.cols())
    throw std::invalid_argument("transport_objective: shape mismatch");
  return q.cwiseProduct(s.values).sum() - epsilon * coupling_entropy(q);
}

double marginal_violation(const Eigen::MatrixXd& q, const DiscreteMeasure& row_m,
                          const DiscreteMeasure& col_m) {
  if (q.rows() != row_m.size() || q.cols() != col_m.size())
    throw std::invalid_argument("marginal_violation: shape mismatch");
  return std::max(l1_deviation(q.rowwise().sum(), row_m.weights()),
                  l1_deviation(q.colwise().sum().transpose(), col_m.weights()));
}

bool fixed_point_test(const PredictionMatrix& p, const DiscreteMeasure& alpha, double epsilon,
                      double tol) {
  if (p.cols() != alpha.size()) throw std::invalid_argument("fixed_point_test: shape mismatch");
  const GibbsKernel k = gibbs_kernel(p, epsilon);
  Eigen::VectorXd means = k.values.colwise().mean().transpose();
  means /= means.sum();
  return (means - alpha.weights()).cwiseAbs().maxCoeff() <= tol;
}

double EpsilonSchedule::at(int epoch, int total_epochs) const {
  if (total_epochs <= 1 || start == end) return end;
  const double t = std::clamp(static_cast<double>(epoch) / (total_epochs - 1), 0.0, 1.0);
  return start + t * (end - start);
}

}  // namespace pc2m
