#include "pc2m/area_model.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>
#include <stdexcept>

namespace pc2m {

AreaState init_area(const DiscreteMeasure& nu_d, double gamma) {
  if (!(gamma >= 0.0 && gamma <= 1.0)) throw std::invalid_argument("init_area: gamma outside [0,1]");
  return AreaState{DiscreteMeasure(nu_d.weights(), MeasureRole::AreaState), 0, gamma};
}

DiscreteMeasure image_density(const PredictionMatrix& p_image) {
  Eigen::VectorXd q = p_image.values().colwise().mean().transpose();
  // Rows are stochastic to 1e-7, so the mean is too; renormalize onto the simplex.
  return DiscreteMeasure::normalized(std::move(q), MeasureRole::AreaState);
}

DiscreteMeasure mean_density(std::span<const DiscreteMeasure> densities) {
  if (densities.empty()) throw std::invalid_argument("mean_density: no densities");
  Eigen::VectorXd acc = Eigen::VectorXd::Zero(densities.front().size());
  for (const auto& d : densities) {
    if (d.size() != acc.size()) throw std::invalid_argument("mean_density: length mismatch");
    acc += d.weights();
  }
  acc /= static_cast<double>(densities.size());
  return DiscreteMeasure::normalized(std::move(acc), MeasureRole::AreaState);
}

AreaState ema_update(const AreaState& state, const DiscreteMeasure& mean, double gamma) {
  if (!(gamma >= 0.0 && gamma <= 1.0)) throw std::invalid_argument("ema_update: gamma outside [0,1]");
  if (mean.size() != state.a_tilde.size()) throw std::invalid_argument("ema_update: length mismatch");
  AreaState next = state;
  next.gamma = gamma;
  next.epoch = state.epoch + 1;
  if (gamma == 0.0) return next;
  if (gamma == 1.0) {
    next.a_tilde = DiscreteMeasure(mean.weights(), MeasureRole::AreaState);
    return next;
  }
  Eigen::VectorXd a = (1.0 - gamma) * state.a_tilde.weights() + gamma * mean.weights();
  next.a_tilde = DiscreteMeasure(std::move(a), MeasureRole::AreaState);
  return next;
}

DiscreteMeasure batch_rescale(const DiscreteMeasure& a_tilde, const Eigen::VectorXd& nu_b,
                              const DiscreteMeasure& nu_d) {
  const Eigen::Index c = a_tilde.size();
  if (nu_b.size() != c || nu_d.size() != c) throw std::invalid_argument("batch_rescale: length mismatch");
  Eigen::VectorXd alpha = Eigen::VectorXd::Zero(c);
  bool any = false;
  for (Eigen::Index i = 0; i < c; ++i) {
    if (!(nu_b[i] >= 0.0) || !std::isfinite(nu_b[i]))
      throw std::invalid_argument("batch_rescale: nu_b entries must be finite and nonnegative");
    if (nu_b[i] == 0.0) continue;
    any = true;
    if (!(nu_d[i] > 0.0))
      throw std::invalid_argument("batch_rescale: class present in batch has zero dataset frequency");
    alpha[i] = nu_b[i] / nu_d[i] * a_tilde[i];
  }
  if (!any) throw std::invalid_argument("batch_rescale: nu_b is all zero");
  return DiscreteMeasure::normalized(std::move(alpha), MeasureRole::AreaTarget);
}

namespace {

double kl_to_mixture(const Eigen::VectorXd& p, const Eigen::VectorXd& m) {
  double kl = 0.0;
  for (Eigen::Index i = 0; i < p.size(); ++i)
    if (p[i] > 0.0) kl += p[i] * std::log(p[i] / m[i]);
  return kl;
}

}  // namespace

double js_divergence(const DiscreteMeasure& p, const DiscreteMeasure& q) {
  if (p.size() != q.size()) throw std::invalid_argument("js_divergence: length mismatch");
  const Eigen::VectorXd m = 0.5 * (p.weights() + q.weights());
  const double js = 0.5 * kl_to_mixture(p.weights(), m) + 0.5 * kl_to_mixture(q.weights(), m);
  return std::max(0.0, js);
}

double shannon_entropy(const DiscreteMeasure& p) {
  double h = 0.0;
  for (Eigen::Index i = 0; i < p.size(); ++i)
    if (p[i] > 0.0) h -= p[i] * std::log(p[i]);
  return h;
}

bool ema_fixed_point(const AreaState& state_m, const AreaState& state_prev,
                     const DiscreteMeasure& mean, double tol) {
  const auto& a = state_m.a_tilde.weights();
  return (a - state_prev.a_tilde.weights()).cwiseAbs().maxCoeff() <= tol &&
         (a - mean.weights()).cwiseAbs().maxCoeff() <= tol;
}

namespace {

Eigen::VectorXd presence_counts(std::span<const LabelSet> labels, int class_count) {
  if (labels.empty()) throw std::invalid_argument("class_frequencies: empty label list");
  if (class_count < 1) throw std::invalid_argument("class_frequencies: class_count must be positive");
  Eigen::VectorXd counts = Eigen::VectorXd::Zero(class_count);
  for (const auto& set : labels)
    for (int c : set) {
      if (c < 0 || c >= class_count) throw std::invalid_argument("class_frequencies: label out of range");
      counts[c] += 1.0;
    }
  return counts;
}

}  // namespace

DiscreteMeasure class_frequencies(std::span<const LabelSet> labels_per_image, int class_count) {
  return DiscreteMeasure::normalized(presence_counts(labels_per_image, class_count),
                                     MeasureRole::Frequency);
}

Eigen::VectorXd batch_frequencies(std::span<const LabelSet> batch_labels, int class_count,
                                  BatchFrequencyMode mode) {
  Eigen::VectorXd counts = presence_counts(batch_labels, class_count);
  if (mode == BatchFrequencyMode::Indicator) return (counts.array() > 0.0).cast<double>().matrix();
  const double total = counts.sum();
  if (total > 0.0) counts /= total;
  return counts;
}

void write_area_log_header(std::ostream& os, int class_count) {
  os << "epoch";
  for (int c = 0; c < class_count; ++c) os << ",a_tilde_" << c;
  os << ",entropy,js_prev,js_gt\n";
}

void write_area_log_row(std::ostream& os, const AreaLogRow& row) {
  os << row.epoch;
  for (Eigen::Index c = 0; c < row.a_tilde.size(); ++c) os << ',' << row.a_tilde[c];
  os << ',' << row.entropy << ',' << row.js_previous << ',' << row.js_ground_truth << '\n';
}

}  // namespace pc2m
