#pragma once

#include "pc2m/ot_core.hpp"

#include <iosfwd>
#include <set>
#include <span>
#include <vector>

namespace pc2m {

using LabelSet = std::set<int>;

/// Slowly updated class-area distribution.
struct AreaState {
  DiscreteMeasure a_tilde;
  int epoch = 0;
  double gamma = 0.02;
};

/// How the per-batch class frequency nu_b is formed.
enum class BatchFrequencyMode {
  Indicator,   // 1 for every class present in the batch, 0 otherwise
  Fractional,  // presence counts normalized like nu_D
};

struct ClassFrequencies {
  DiscreteMeasure nu_d;
  Eigen::VectorXd nu_b;
};

AreaState init_area(const DiscreteMeasure& nu_d, double gamma = 0.02);

/// Mean of the K patch rows of one image.
DiscreteMeasure image_density(const PredictionMatrix& p_image);

/// Fixed-order mean of per-image densities.
DiscreteMeasure mean_density(std::span<const DiscreteMeasure> densities);

/// a_m = (1 - gamma) a_{m-1} + gamma mean_density; epoch advances by one.
AreaState ema_update(const AreaState& state, const DiscreteMeasure& mean_density, double gamma);

/// alpha = (nu_b / nu_d) * a_tilde / Z, elementwise, zero where nu_b is zero.
DiscreteMeasure batch_rescale(const DiscreteMeasure& a_tilde, const Eigen::VectorXd& nu_b,
                              const DiscreteMeasure& nu_d);

/// Jensen-Shannon divergence in nats.
double js_divergence(const DiscreteMeasure& p, const DiscreteMeasure& q);

/// Shannon entropy in nats.
double shannon_entropy(const DiscreteMeasure& p);

/// Both EMA equalities hold within `tol`: a_m == a_{m-1} == mean_density.
bool ema_fixed_point(const AreaState& state_m, const AreaState& state_prev,
                     const DiscreteMeasure& mean_density, double tol);

/// Image-presence counts normalized over the total number of label occurrences.
DiscreteMeasure class_frequencies(std::span<const LabelSet> labels_per_image, int class_count);

/// nu_b for one batch.
Eigen::VectorXd batch_frequencies(std::span<const LabelSet> batch_labels, int class_count,
                                  BatchFrequencyMode mode);

/// One row of the epoch-wise area log.
struct AreaLogRow {
  int epoch = 0;
  Eigen::VectorXd a_tilde;
  double entropy = 0.0;
  double js_previous = 0.0;
  double js_ground_truth = 0.0;
};

void write_area_log_header(std::ostream& os, int class_count);
void write_area_log_row(std::ostream& os, const AreaLogRow& row);

}  // namespace pc2m
