#include "pc2m/losses.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace pc2m {

BatchAlignment batch_alignment(std::span<const PatchAlignment> per_image, int patches_per_image) {
  BatchAlignment out;
  out.reserve(per_image.size() * static_cast<std::size_t>(patches_per_image));
  for (std::size_t b = 0; b < per_image.size(); ++b) {
    if (per_image[b].mapping.size() != static_cast<std::size_t>(patches_per_image))
      throw std::invalid_argument("batch_alignment: alignment length differs from patches per image");
    const int offset = static_cast<int>(b) * patches_per_image;
    for (int g : per_image[b].mapping) out.push_back(g < 0 ? -1 : g + offset);
  }
  return out;
}

MatchResult match_loss(const PredictionMatrix& p_global, const PredictionMatrix& p_local,
                       const Eigen::MatrixXd& q_global, const Eigen::MatrixXd& q_local,
                       const BatchAlignment& align, const MatchOptions& opts) {
  const Eigen::Index n = p_local.rows();
  const Eigen::Index c = p_local.cols();
  if (p_global.rows() != n || p_global.cols() != c || q_global.rows() != n || q_global.cols() != c ||
      q_local.rows() != n || q_local.cols() != c)
    throw std::invalid_argument("match_loss: prediction and coupling shapes differ");

  MatchResult out;
  out.grad_p_global = Eigen::MatrixXd::Zero(n, c);
  out.grad_p_local = Eigen::MatrixXd::Zero(n, c);
  out.entropy_terms = coupling_entropy(q_local) + coupling_entropy(q_global);
  const Eigen::MatrixXd& pg = p_global.values();
  const Eigen::MatrixXd& pl = p_local.values();

  if (opts.mode == MatchMode::Self) {
    const double scale = opts.per_patch_average ? 1.0 / double(n) : 1.0;
    const double local_term = -(q_local.array() * pl.array().log()).sum();
    const double global_term = -(q_global.array() * pg.array().log()).sum();
    out.cross_terms = scale * (local_term + global_term);
    out.grad_p_local = -scale * q_local.cwiseQuotient(pl);
    out.grad_p_global = -scale * q_global.cwiseQuotient(pg);
    out.value = out.cross_terms + out.entropy_terms;
    return out;
  }

  if (align.size() != static_cast<std::size_t>(n))
    throw std::invalid_argument("match_loss: alignment length differs from the number of rows");
  std::size_t valid = 0;
  for (int g : align) {
    if (g >= static_cast<int>(n)) throw std::invalid_argument("match_loss: alignment index out of range");
    if (g >= 0) ++valid;
  }
  if (valid == 0) {
    out.value = out.entropy_terms;
    return out;
  }
  double scale = double(n) / double(valid);
  if (opts.per_patch_average) scale /= double(n);

  double sum = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const int g = align[static_cast<std::size_t>(i)];
    if (g < 0) continue;
    for (Eigen::Index k = 0; k < c; ++k) {
      const double qg = q_global(g, k);
      const double ql = q_local(i, k);
      sum -= qg * std::log(pl(i, k)) + ql * std::log(pg(g, k));
      out.grad_p_local(i, k) -= scale * qg / pl(i, k);
      out.grad_p_global(g, k) -= scale * ql / pg(g, k);
    }
  }
  out.cross_terms = scale * sum;
  out.value = out.cross_terms + out.entropy_terms;
  return out;
}

MceResult mce_loss(const Eigen::MatrixXd& pooled, const Eigen::MatrixXd& labels) {
  if (pooled.rows() != labels.rows() || pooled.cols() != labels.cols() || pooled.size() == 0)
    throw std::invalid_argument("mce_loss: score and label shapes differ");
  constexpr double lo = 1e-7;
  constexpr double hi = 1.0 - 1e-7;
  const double denom = double(pooled.size());
  MceResult out;
  out.grad_scores = Eigen::MatrixXd::Zero(pooled.rows(), pooled.cols());
  double sum = 0.0;
  for (Eigen::Index b = 0; b < pooled.rows(); ++b)
    for (Eigen::Index c = 0; c < pooled.cols(); ++c) {
      double s = pooled(b, c);
      const double y = labels(b, c);
      const bool clamp = s < lo || s > hi;
      if (clamp) {
        s = std::clamp(s, lo, hi);
        out.clamped = true;
      }
      sum -= y * std::log(s) + (1.0 - y) * std::log(1.0 - s);
      if (!clamp) out.grad_scores(b, c) = (s - y) / (s * (1.0 - s)) / denom;
    }
  out.value = sum / denom;
  return out;
}

Pc2mResult pc2m_loss(const Pc2mInputs& in) {
  if (!in.p_global || !in.labels || in.patches_per_image <= 0)
    throw std::invalid_argument("pc2m_loss: missing global predictions or labels");
  const PredictionMatrix& pg = *in.p_global;
  const Eigen::Index images = in.labels->rows();
  if (pg.rows() != images * in.patches_per_image || pg.cols() != in.labels->cols())
    throw std::invalid_argument("pc2m_loss: label matrix does not match the batch");

  Pc2mResult out;
  out.grad_p_global = Eigen::MatrixXd::Zero(pg.rows(), pg.cols());
  out.grad_p_local = Eigen::MatrixXd::Zero(pg.rows(), pg.cols());

  Eigen::MatrixXd pooled(images, pg.cols());
  std::vector<PooledScores> pools;
  pools.reserve(static_cast<std::size_t>(images));
  for (Eigen::Index b = 0; b < images; ++b) {
    pools.push_back(pool_image_scores(pg.rows_block(b * in.patches_per_image, in.patches_per_image)));
    pooled.row(b) = pools.back().scores.transpose();
  }
  const MceResult mce = mce_loss(pooled, *in.labels);
  out.clamped = mce.clamped;
  for (Eigen::Index b = 0; b < images; ++b)
    for (Eigen::Index c = 0; c < pg.cols(); ++c) {
      const Eigen::Index row = b * in.patches_per_image + pools[static_cast<std::size_t>(b)].argmax[static_cast<std::size_t>(c)];
      out.grad_p_global(row, c) += mce.grad_scores(b, c);
    }
  out.loss.mce = mce.value;

  if (in.include_match) {
    if (!in.p_local || !in.q_global || !in.q_local)
      throw std::invalid_argument("pc2m_loss: match term needs local predictions and both plans");
    const MatchResult m = match_loss(pg, *in.p_local, *in.q_global, *in.q_local, in.alignment, in.match);
    out.loss.match = m.value;
    out.loss.entropy_terms = m.entropy_terms;
    out.grad_p_global += m.grad_p_global;
    out.grad_p_local += m.grad_p_local;
  }
  out.loss.total = out.loss.match + out.loss.mce;
  return out;
}

GradCheckReport grad_check(const std::function<double()>& loss_fn, std::span<const NamedMatrix> params,
                           std::span<const Eigen::MatrixXd> analytic, const GradCheckOptions& opts) {
  if (params.size() != analytic.size())
    throw std::invalid_argument("grad_check: one analytic gradient per parameter is required");
  GradCheckReport report;
  for (std::size_t k = 0; k < params.size(); ++k) {
    Eigen::MatrixXd& value = *params[k].value;
    const Eigen::MatrixXd& grad = analytic[k];
    if (grad.rows() != value.rows() || grad.cols() != value.cols())
      throw std::invalid_argument("grad_check: gradient shape differs for " + params[k].name);
    for (Eigen::Index j = 0; j < value.cols(); ++j)
      for (Eigen::Index i = 0; i < value.rows(); ++i) {
        const double saved = value(i, j);
        value(i, j) = saved + opts.h;
        const double up = loss_fn();
        value(i, j) = saved - opts.h;
        const double down = loss_fn();
        value(i, j) = saved;
        const double numeric = (up - down) / (2.0 * opts.h);
        const double a = grad(i, j);
        const double rel = std::abs(a - numeric) /
                           std::max({std::abs(a), std::abs(numeric), opts.abs_floor});
        ++report.checked;
        if (rel > report.max_rel_error || report.worst_parameter.empty()) {
          if (rel >= report.max_rel_error) {
            report.max_rel_error = rel;
            report.worst_parameter = params[k].name;
            report.worst_row = i;
            report.worst_col = j;
            report.worst_analytic = a;
            report.worst_numeric = numeric;
          }
        }
      }
  }
  report.passed = report.max_rel_error <= opts.tolerance;
  return report;
}

}  // namespace pc2m
