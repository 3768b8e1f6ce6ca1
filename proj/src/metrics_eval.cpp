#include "pc2m/metrics_eval.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <ostream>
#include <random>
#include <stdexcept>

namespace pc2m {

ConfusionMatrix::ConfusionMatrix(int classes) : classes_(classes) {
  if (classes <= 0) throw std::invalid_argument("ConfusionMatrix: class count must be positive");
  counts_.assign(static_cast<std::size_t>(classes) * classes, 0);
}

void ConfusionMatrix::add(int ground_truth, int prediction, std::int64_t count) {
  if (ground_truth < 0 || ground_truth >= classes_ || prediction < 0 || prediction >= classes_)
    throw std::invalid_argument("ConfusionMatrix::add: class index out of range");
  counts_[static_cast<std::size_t>(ground_truth * classes_ + prediction)] += count;
}

ConfusionMatrix& ConfusionMatrix::operator+=(const ConfusionMatrix& other) {
  if (other.classes_ != classes_) throw std::invalid_argument("ConfusionMatrix: class count mismatch");
  for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
  return *this;
}

std::int64_t ConfusionMatrix::total() const {
  return std::accumulate(counts_.begin(), counts_.end(), std::int64_t{0});
}

MiouResult miou(const ConfusionMatrix& cm, bool include_background) {
  if (cm.total() == 0) throw std::invalid_argument("miou: empty confusion matrix");
  const int k = cm.classes();
  MiouResult out;
  out.iou = Eigen::VectorXd::Zero(k);
  out.counted.assign(static_cast<std::size_t>(k), false);
  double sum = 0.0;
  int counted = 0;
  for (int c = 0; c < k; ++c) {
    std::int64_t tp = cm.at(c, c), fp = 0, fn = 0;
    for (int o = 0; o < k; ++o) {
      if (o == c) continue;
      fp += cm.at(o, c);
      fn += cm.at(c, o);
    }
    const std::int64_t uni = tp + fp + fn;
    if (uni == 0) continue;
    out.iou[c] = double(tp) / double(uni);
    if (!include_background && c == 0) continue;
    out.counted[static_cast<std::size_t>(c)] = true;
    sum += out.iou[c];
    ++counted;
  }
  out.miou = counted > 0 ? sum / counted : 0.0;
  return out;
}

namespace {

// Minimum-cost assignment with row/column potentials, O(n^3).
std::vector<int> min_cost_assignment(const Eigen::MatrixXd& cost) {
  const int n = static_cast<int>(cost.rows());
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0), minv(n + 1);
  std::vector<int> p(n + 1, 0), way(n + 1, 0);
  std::vector<bool> used(n + 1);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::fill(minv.begin(), minv.end(), inf);
    std::fill(used.begin(), used.end(), false);
    do {
      used[j0] = true;
      const int i0 = p[j0];
      double delta = inf;
      int j1 = 0;
      for (int j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<int> row_to_col(static_cast<std::size_t>(n), -1);
  for (int j = 1; j <= n; ++j) row_to_col[static_cast<std::size_t>(p[j] - 1)] = j - 1;
  return row_to_col;
}

double best_total(const Eigen::MatrixXd& score) {
  if (score.rows() == 0) return 0.0;
  const Eigen::MatrixXd cost = -score;
  const std::vector<int> perm = min_cost_assignment(cost);
  double total = 0.0;
  for (std::size_t i = 0; i < perm.size(); ++i) total += score(static_cast<Eigen::Index>(i), perm[i]);
  return total;
}

Eigen::MatrixXd drop_row_col(const Eigen::MatrixXd& m, Eigen::Index row, Eigen::Index col) {
  const Eigen::Index n = m.rows();
  Eigen::MatrixXd out(n - 1, n - 1);
  for (Eigen::Index i = 0, oi = 0; i < n; ++i) {
    if (i == row) continue;
    for (Eigen::Index j = 0, oj = 0; j < n; ++j) {
      if (j == col) continue;
      out(oi, oj++) = m(i, j);
    }
    ++oi;
  }
  return out;
}

}  // namespace

Assignment hungarian_match(const Eigen::MatrixXd& score) {
  if (score.rows() != score.cols()) throw std::invalid_argument("hungarian_match: score matrix must be square");
  if (!score.allFinite()) throw std::invalid_argument("hungarian_match: non-finite score");
  const Eigen::Index n = score.rows();
  Assignment out;
  if (n == 0) return out;
  const double optimum = best_total(score);
  const double slack = 1e-9 * (1.0 + std::abs(optimum));

  // Fix rows in order, taking the smallest column that keeps the optimum reachable.
  Eigen::MatrixXd rest = score;
  std::vector<Eigen::Index> free_cols(static_cast<std::size_t>(n));
  std::iota(free_cols.begin(), free_cols.end(), 0);
  double fixed = 0.0;
  for (Eigen::Index row = 0; row < n; ++row) {
    for (Eigen::Index local = 0; local < rest.cols(); ++local) {
      const double candidate = fixed + rest(0, local) + best_total(drop_row_col(rest, 0, local));
      if (candidate >= optimum - slack) {
        out.permutation.push_back(static_cast<int>(free_cols[static_cast<std::size_t>(local)]));
        fixed += rest(0, local);
        rest = drop_row_col(rest, 0, local);
        free_cols.erase(free_cols.begin() + local);
        break;
      }
    }
  }
  out.total = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) out.total += score(i, out.permutation[static_cast<std::size_t>(i)]);
  return out;
}

Assignment hungarian_match_padded(const Eigen::MatrixXd& score) {
  const Eigen::Index n = std::max(score.rows(), score.cols());
  Eigen::MatrixXd square = Eigen::MatrixXd::Zero(n, n);
  square.topLeftCorner(score.rows(), score.cols()) = score;
  Assignment full = hungarian_match(square);
  Assignment out;
  for (Eigen::Index i = 0; i < score.rows(); ++i) {
    const int col = full.permutation[static_cast<std::size_t>(i)];
    out.permutation.push_back(col < score.cols() ? col : -1);
    if (col < score.cols()) out.total += score(i, col);
  }
  return out;
}

Eigen::MatrixXd iou_matrix(const ConfusionMatrix& cm) {
  const int k = cm.classes();
  Eigen::MatrixXd row_tot = Eigen::MatrixXd::Zero(k, 1), col_tot = Eigen::MatrixXd::Zero(k, 1);
  for (int g = 0; g < k; ++g)
    for (int p = 0; p < k; ++p) {
      row_tot(g, 0) += double(cm.at(g, p));
      col_tot(p, 0) += double(cm.at(g, p));
    }
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(k, k);
  for (int p = 0; p < k; ++p)
    for (int g = 0; g < k; ++g) {
      const double inter = double(cm.at(g, p));
      const double uni = col_tot(p, 0) + row_tot(g, 0) - inter;
      out(p, g) = uni > 0.0 ? inter / uni : 0.0;
    }
  return out;
}

ConfusionMatrix remap_predictions(const ConfusionMatrix& cm, std::span<const int> pred_to_class) {
  if (pred_to_class.size() != static_cast<std::size_t>(cm.classes()))
    throw std::invalid_argument("remap_predictions: mapping length mismatch");
  ConfusionMatrix out(cm.classes());
  for (int g = 0; g < cm.classes(); ++g)
    for (int p = 0; p < cm.classes(); ++p) {
      const int mapped = pred_to_class[static_cast<std::size_t>(p)];
      if (mapped >= 0 && cm.at(g, p) != 0) out.add(g, mapped, cm.at(g, p));
    }
  return out;
}

F1Scores f1_scores(std::span<const LabelSet> predicted, std::span<const LabelSet> ground_truth,
                   int class_count) {
  if (predicted.size() != ground_truth.size()) throw std::invalid_argument("f1_scores: image count mismatch");
  std::vector<double> tp(static_cast<std::size_t>(class_count), 0.0), fp = tp, fn = tp;
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    for (int c : predicted[i]) {
      if (c < 0 || c >= class_count) throw std::invalid_argument("f1_scores: label out of range");
      (ground_truth[i].count(c) ? tp : fp)[static_cast<std::size_t>(c)] += 1.0;
    }
    for (int c : ground_truth[i]) {
      if (c < 0 || c >= class_count) throw std::invalid_argument("f1_scores: label out of range");
      if (!predicted[i].count(c)) fn[static_cast<std::size_t>(c)] += 1.0;
    }
  }
  auto f1 = [](double t, double p, double n) { return t + p + n > 0 ? 2 * t / (2 * t + p + n) : 0.0; };
  F1Scores out;
  double stp = 0, sfp = 0, sfn = 0, macro = 0;
  int counted = 0;
  for (std::size_t c = 0; c < tp.size(); ++c) {
    stp += tp[c];
    sfp += fp[c];
    sfn += fn[c];
    if (tp[c] + fp[c] + fn[c] == 0.0) continue;
    macro += f1(tp[c], fp[c], fn[c]);
    ++counted;
  }
  out.micro = f1(stp, sfp, sfn);
  out.macro = counted ? macro / counted : 0.0;
  return out;
}

Eigen::MatrixXd label_cooccurrence(std::span<const LabelSet> pseudo, std::span<const LabelSet> ground_truth,
                                   int cluster_count, int class_count) {
  if (pseudo.size() != ground_truth.size()) throw std::invalid_argument("label_cooccurrence: image count mismatch");
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(cluster_count, class_count);
  for (std::size_t i = 0; i < pseudo.size(); ++i)
    for (int k : pseudo[i])
      for (int c : ground_truth[i]) {
        if (k < 0 || k >= cluster_count || c < 0 || c >= class_count)
          throw std::invalid_argument("label_cooccurrence: label out of range");
        out(k, c) += 1.0;
      }
  return out;
}

std::vector<LabelSet> remap_label_sets(std::span<const LabelSet> sets, std::span<const int> mapping) {
  std::vector<LabelSet> out;
  out.reserve(sets.size());
  for (const auto& s : sets) {
    LabelSet mapped;
    for (int k : s) {
      if (k < 0 || static_cast<std::size_t>(k) >= mapping.size())
        throw std::invalid_argument("remap_label_sets: id outside mapping");
      if (mapping[static_cast<std::size_t>(k)] >= 0) mapped.insert(mapping[static_cast<std::size_t>(k)]);
    }
    out.push_back(std::move(mapped));
  }
  return out;
}

BetaMixResult beta_mix(std::span<const LabelSet> ground_truth, std::span<const LabelSet> pseudo,
                       double beta, std::uint64_t seed) {
  if (!(beta >= 0.0 && beta <= 1.0)) throw std::invalid_argument("beta_mix: beta outside [0,1]");
  if (ground_truth.size() != pseudo.size()) throw std::invalid_argument("beta_mix: image count mismatch");
  const std::size_t t = ground_truth.size();
  const auto replace = static_cast<std::size_t>(std::llround(beta * double(t)));
  std::vector<std::size_t> order(t);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  // Fisher-Yates with an explicit draw so the result does not depend on std::shuffle internals.
  for (std::size_t i = t; i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng() % i);
    std::swap(order[i - 1], order[j]);
  }
  BetaMixResult out;
  out.labels.assign(ground_truth.begin(), ground_truth.end());
  out.replaced.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(replace));
  std::sort(out.replaced.begin(), out.replaced.end());
  for (std::size_t i : out.replaced) out.labels[i] = pseudo[i];
  return out;
}

void write_report_csv(std::ostream& os, const EvaluationReport& report) {
  os << "metric,class,value\n";
  for (Eigen::Index c = 0; c < report.miou.iou.size(); ++c) os << "iou," << c << ',' << report.miou.iou[c] << '\n';
  os << "miou,," << report.miou.miou << '\n';
  os << "f1_micro,," << report.label_f1.micro << '\n';
  os << "f1_macro,," << report.label_f1.macro << '\n';
  for (std::size_t k = 0; k < report.class_mapping.size(); ++k)
    os << "mapping," << k << ',' << report.class_mapping[k] << '\n';
}

}  // namespace pc2m
