#pragma once

#include "pc2m/ot_core.hpp"

#include <Eigen/Dense>

#include <initializer_list>
#include <random>

namespace test {

inline pc2m::PredictionMatrix pred(std::initializer_list<std::initializer_list<double>> rows) {
  Eigen::MatrixXd m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.begin()->size()));
  Eigen::Index i = 0;
  for (const auto& r : rows) {
    Eigen::Index j = 0;
    for (double v : r) m(i, j++) = v;
    ++i;
  }
  return pc2m::PredictionMatrix(m);
}

/// Row softmax of Gaussian logits scaled by `sharpness`.
inline pc2m::PredictionMatrix random_prediction(std::mt19937_64& rng, int n, int c, double sharpness = 1.0) {
  std::normal_distribution<double> g(0.0, sharpness);
  Eigen::MatrixXd m(n, c);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < c; ++j) m(i, j) = std::exp(g(rng));
    m.row(i) /= m.row(i).sum();
  }
  return pc2m::PredictionMatrix(m);
}

/// Strictly positive random point of the simplex.
inline pc2m::DiscreteMeasure random_simplex(std::mt19937_64& rng, int c, pc2m::MeasureRole role) {
  std::uniform_real_distribution<double> u(0.05, 1.0);
  Eigen::VectorXd w(c);
  for (int j = 0; j < c; ++j) w[j] = u(rng);
  return pc2m::DiscreteMeasure::normalized(w, role);
}

}  // namespace test
