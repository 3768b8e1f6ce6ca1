#include "pc2m/trainer.hpp"

#include "pc2m/array_io.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iomanip>
#include <iostream>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>

namespace pc2m {

Split make_split(std::size_t image_count, double holdout_fraction, std::uint64_t seed) {
  if (image_count < 2) throw std::invalid_argument("make_split: need at least two images");
  std::vector<std::size_t> order(image_count);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(mix_seed(seed, 0x5EED5));
  for (std::size_t i = order.size() - 1; i > 0; --i) std::swap(order[i], order[rng() % (i + 1)]);
  const auto held = static_cast<std::size_t>(std::lround(holdout_fraction * static_cast<double>(image_count)));
  if (held == 0 || held >= image_count) throw std::invalid_argument("make_split: empty side");
  Split s;
  s.held_out.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(held));
  s.train.assign(order.begin() + static_cast<std::ptrdiff_t>(held), order.end());
  std::sort(s.held_out.begin(), s.held_out.end());
  std::sort(s.train.begin(), s.train.end());
  return s;
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

NamedArray matrix_array(const std::string& name, const Eigen::MatrixXd& m) {
  NamedArray a{name, {static_cast<std::uint64_t>(m.rows()), static_cast<std::uint64_t>(m.cols())}, {}};
  a.data.reserve(static_cast<std::size_t>(m.size()));
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) a.data.push_back(m(i, j));
  return a;
}

void fill_matrix(const NamedArray& a, Eigen::MatrixXd& m) {
  if (a.shape.size() != 2 || a.shape[0] != static_cast<std::uint64_t>(m.rows()) ||
      a.shape[1] != static_cast<std::uint64_t>(m.cols()))
    throw ArrayFormatError("checkpoint: '" + a.name + "' has the wrong shape");
  std::size_t k = 0;
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = a.data[k++];
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  Checkpoint copy = ckpt;
  std::vector<NamedArray> arrays;
  const auto& c = ckpt.encoder.cfg;
  arrays.push_back({"meta",
                    {10},
                    {double(ckpt.class_count()), double(c.image_size), double(c.patch_size), double(c.embed_dim),
                     double(c.blocks), c.init_layer_scale, ckpt.temperature, double(ckpt.area.epoch), ckpt.area.gamma,
                     double(ckpt.encoder.seed)}});
  const auto& w = ckpt.area.a_tilde.weights();
  arrays.push_back({"area.a_tilde", {static_cast<std::uint64_t>(w.size())}, {w.data(), w.data() + w.size()}});
  for (const auto& p : named_parameters(copy.encoder, copy.head)) arrays.push_back(matrix_array(p.name, *p.value));
  write_arrays(path, arrays);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  const auto arrays = read_arrays(path);
  const auto& meta = find_array(arrays, "meta");
  if (meta.data.size() != 10) throw ArrayFormatError("checkpoint: malformed meta");
  EncoderConfig cfg;
  cfg.image_size = static_cast<int>(meta.data[1]);
  cfg.patch_size = static_cast<int>(meta.data[2]);
  cfg.embed_dim = static_cast<int>(meta.data[3]);
  cfg.blocks = static_cast<int>(meta.data[4]);
  cfg.init_layer_scale = meta.data[5];
  const int classes = static_cast<int>(meta.data[0]);
  Checkpoint ckpt;
  ckpt.encoder = EncoderParams::init(cfg, static_cast<std::uint64_t>(meta.data[9]));
  ckpt.head.w = Eigen::MatrixXd::Zero(cfg.embed_dim, classes);
  ckpt.temperature = meta.data[6];
  for (const auto& p : named_parameters(ckpt.encoder, ckpt.head)) fill_matrix(find_array(arrays, p.name), *p.value);
  const auto& a = find_array(arrays, "area.a_tilde");
  if (a.data.size() != static_cast<std::size_t>(classes)) throw ArrayFormatError("checkpoint: area size mismatch");
  ckpt.area.a_tilde = DiscreteMeasure(Eigen::Map<const Eigen::VectorXd>(a.data.data(), classes), MeasureRole::AreaState);
  ckpt.area.epoch = static_cast<int>(meta.data[7]);
  ckpt.area.gamma = meta.data[8];
  return ckpt;
}

Checkpoint initial_checkpoint(const RunConfig& cfg, const DiscreteMeasure& nu_d) {
  Checkpoint ckpt;
  ckpt.encoder = EncoderParams::init(cfg.encoder, mix_seed(cfg.seed, 1));
  ckpt.head = ProjectionWeights::init(cfg.encoder.embed_dim, cfg.data.class_count, mix_seed(cfg.seed, 2));
  ckpt.area = init_area(nu_d, cfg.gamma);
  ckpt.temperature = cfg.temperature;
  return ckpt;
}

// ---------------------------------------------------------------------------
// Logs

void write_epochs_header(std::ostream& os, int class_count) {
  os << "epoch,loss_total,loss_match,loss_mce,miou,entropy,js_prev,js_gt,sinkhorn_unconverged";
  for (int c = 0; c < class_count; ++c) os << ",a_tilde_" << c;
  os << '\n';
}

void write_epoch_row(std::ostream& os, const EpochRecord& r) {
  const auto old = os.precision(std::numeric_limits<double>::max_digits10);
  os << r.epoch << ',' << r.loss.total << ',' << r.loss.match << ',' << r.loss.mce << ',' << r.miou << ','
     << r.entropy << ',' << r.js_previous << ',' << r.js_ground_truth << ',' << r.sinkhorn_unconverged;
  for (Eigen::Index c = 0; c < r.a_tilde.size(); ++c) os << ',' << r.a_tilde[c];
  os << '\n';
  os.precision(old);
}

// ---------------------------------------------------------------------------
// Evaluation

DiscreteMeasure predicted_density(const Checkpoint& ckpt, const ImageTensor& image) {
  const PredictOptions po{ckpt.temperature, true};
  return image_density(predict(encode(image, ckpt.encoder), ckpt.head, po));
}

ConfusionMatrix patch_confusion(const Checkpoint& ckpt, std::span<const LabeledImage> dataset,
                                std::span<const std::size_t> indices, int gt_class_count) {
  const int pred_classes = ckpt.class_count();
  if (pred_classes != gt_class_count)
    throw std::invalid_argument("evaluate: checkpoint predicts " + std::to_string(pred_classes) +
                                " classes, dataset has " + std::to_string(gt_class_count));
  const PredictOptions po{ckpt.temperature, true};
  ConfusionMatrix cm(gt_class_count);
  for (std::size_t idx : indices) {
    const auto& img = dataset[idx];
    const PredictionMatrix p = predict(encode(img.image, ckpt.encoder), ckpt.head, po);
    const auto gt = patch_majority_labels(img, ckpt.encoder.cfg.patch_size, gt_class_count);
    for (Eigen::Index j = 0; j < p.rows(); ++j) {
      Eigen::Index arg = 0;
      p.values().row(j).maxCoeff(&arg);
      cm.add(gt[static_cast<std::size_t>(j)], static_cast<int>(arg));
    }
  }
  return cm;
}

EvaluationReport evaluate(const Checkpoint& ckpt, std::span<const LabeledImage> dataset,
                          std::span<const std::size_t> indices, int gt_class_count, bool hungarian) {
  ConfusionMatrix cm = patch_confusion(ckpt, dataset, indices, gt_class_count);
  EvaluationReport report;
  if (hungarian) {
    report.class_mapping = hungarian_match(iou_matrix(cm)).permutation;
    cm = remap_predictions(cm, report.class_mapping);
  }
  report.miou = miou(cm);
  return report;
}

// ---------------------------------------------------------------------------
// Training

namespace {

struct Adam {
  std::vector<Eigen::MatrixXd> m, v;
  long step = 0;

  void step_update(const std::vector<NamedMatrix>& params, const std::vector<Eigen::MatrixXd>& grads,
                   const std::vector<bool>& trainable, double lr, const RunConfig& cfg) {
    if (m.empty()) {
      for (const auto& p : params) {
        m.push_back(Eigen::MatrixXd::Zero(p.value->rows(), p.value->cols()));
        v.push_back(Eigen::MatrixXd::Zero(p.value->rows(), p.value->cols()));
      }
    }
    ++step;
    const double c1 = 1.0 - std::pow(cfg.adam_beta1, static_cast<double>(step));
    const double c2 = 1.0 - std::pow(cfg.adam_beta2, static_cast<double>(step));
    for (std::size_t k = 0; k < params.size(); ++k) {
      if (!trainable[k]) continue;
      m[k] = cfg.adam_beta1 * m[k] + (1.0 - cfg.adam_beta1) * grads[k];
      v[k] = cfg.adam_beta2 * v[k] + (1.0 - cfg.adam_beta2) * grads[k].cwiseAbs2();
      *params[k].value -= lr * ((m[k] / c1).array() / ((v[k] / c2).array().sqrt() + cfg.adam_eps)).matrix();
    }
  }
};

std::vector<Eigen::MatrixXd> flatten_grads(EncoderParams& enc_grads, ProjectionWeights& head_grads) {
  std::vector<Eigen::MatrixXd> out;
  for (const auto& p : named_parameters(enc_grads, head_grads)) out.push_back(*p.value);
  return out;
}

Eigen::MatrixXd stack_rows(const std::vector<PredictionMatrix>& parts) {
  Eigen::Index rows = 0;
  for (const auto& p : parts) rows += p.rows();
  Eigen::MatrixXd out(rows, parts.front().cols());
  Eigen::Index at = 0;
  for (const auto& p : parts) {
    out.middleRows(at, p.rows()) = p.values();
    at += p.rows();
  }
  return out;
}

Eigen::MatrixXd argmax_plan(const PredictionMatrix& p) {
  Eigen::MatrixXd q = Eigen::MatrixXd::Zero(p.rows(), p.cols());
  for (Eigen::Index i = 0; i < p.rows(); ++i) {
    Eigen::Index arg = 0;
    p.values().row(i).maxCoeff(&arg);
    q(i, arg) = 1.0 / static_cast<double>(p.rows());
  }
  return q;
}

struct Plans {
  Eigen::MatrixXd global, local;
  int iterations = 0;
  int unconverged = 0;
};

// Rows of p are image-major blocks of kp patches.
Plans transport_plans(const PredictionMatrix& p_global, const PredictionMatrix& p_local,
                      std::span<const LabelSet> labels, int classes, int kp, const AreaState& area,
                      const DiscreteMeasure& nu_d, double eps, const RunConfig& cfg, const SinkhornOptions& so) {
  Plans out;
  auto solve = [&](const PredictionMatrix& p, std::span<const LabelSet> lab) {
    const DiscreteMeasure alpha =
        batch_rescale(area.a_tilde, batch_frequencies(lab, classes, cfg.batch_frequency), nu_d);
    const SinkhornResult r =
        sinkhorn(gibbs_kernel(p, eps), make_patch_marginal(static_cast<std::size_t>(p.rows())), alpha, so);
    out.iterations += r.iterations;
    out.unconverged += int(!r.converged);
    return r.coupling.values;
  };
  if (cfg.sinkhorn_scope == SinkhornScope::Batch) {
    out.global = solve(p_global, labels);
    out.local = solve(p_local, labels);
    return out;
  }
  const auto images = static_cast<Eigen::Index>(labels.size());
  out.global = Eigen::MatrixXd::Zero(p_global.rows(), p_global.cols());
  out.local = Eigen::MatrixXd::Zero(p_local.rows(), p_local.cols());
  for (Eigen::Index b = 0; b < images; ++b) {
    const auto one = labels.subspan(static_cast<std::size_t>(b), 1);
    out.global.middleRows(b * kp, kp) = solve(PredictionMatrix(p_global.values().middleRows(b * kp, kp)), one) / double(images);
    out.local.middleRows(b * kp, kp) = solve(PredictionMatrix(p_local.values().middleRows(b * kp, kp)), one) / double(images);
  }
  return out;
}

}  // namespace

BatchPass forward_batch(const Checkpoint& ck, std::span<const ViewPair> views, std::span<const LabelSet> labels,
                        int class_count, const PredictOptions& po) {
  const auto b = views.size();
  if (labels.size() != b) throw std::invalid_argument("forward_batch: one label set per view pair required");
  BatchPass pass;
  pass.tape_global.resize(b);
  pass.tape_local.resize(b);
  pass.predict_global.resize(b);
  pass.predict_local.resize(b);
  pass.features_global.resize(b);
  pass.features_local.resize(b);
  std::vector<PredictionMatrix> pg(b), pl(b);
  std::vector<PatchAlignment> align(b);
  pass.label_matrix = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(b), class_count);
  for (std::size_t i = 0; i < b; ++i) {
    pass.features_global[i] = encode(views[i].global_view, ck.encoder, &pass.tape_global[i]);
    pass.features_local[i] = encode(views[i].local_view, ck.encoder, &pass.tape_local[i]);
    pg[i] = predict(pass.features_global[i], ck.head, po, &pass.predict_global[i]);
    pl[i] = predict(pass.features_local[i], ck.head, po, &pass.predict_local[i]);
    align[i] = align_patches(views[i], ck.encoder.cfg.patch_size);
    for (int c : labels[i]) {
      if (c < 0 || c >= class_count) throw std::invalid_argument("forward_batch: label id out of range");
      pass.label_matrix(static_cast<Eigen::Index>(i), c) = 1.0;
    }
  }
  pass.p_global = PredictionMatrix(stack_rows(pg));
  pass.p_local = PredictionMatrix(stack_rows(pl));
  pass.alignment = batch_alignment(align, ck.encoder.cfg.patch_count());
  return pass;
}

void backward_batch(const BatchPass& pass, const Checkpoint& ck, const PredictOptions& po,
                    const Eigen::MatrixXd& grad_p_global, const Eigen::MatrixXd& grad_p_local, bool encoder,
                    EncoderParams& enc_grads, ProjectionWeights& head_grads) {
  const int kp = ck.encoder.cfg.patch_count();
  for (std::size_t i = 0; i < pass.features_global.size(); ++i) {
    for (int branch = 0; branch < 2; ++branch) {
      const auto& feats = branch == 0 ? pass.features_global[i] : pass.features_local[i];
      const auto& gp = branch == 0 ? grad_p_global : grad_p_local;
      Eigen::MatrixXd grad_f = Eigen::MatrixXd::Zero(feats.values.rows(), feats.values.cols());
      predict_backward(branch == 0 ? pass.predict_global[i] : pass.predict_local[i], feats, ck.head, po,
                       gp.middleRows(static_cast<Eigen::Index>(i) * kp, kp), grad_f, head_grads.w);
      if (encoder)
        encode_backward(branch == 0 ? pass.tape_global[i] : pass.tape_local[i], ck.encoder, grad_f, enc_grads);
    }
  }
}

namespace {

std::string describe_batch(int epoch, std::span<const std::size_t> batch, const LossBreakdown& loss,
                           const Eigen::MatrixXd& pg, const Eigen::MatrixXd& pl, const DiscreteMeasure& alpha) {
  std::ostringstream os;
  os << std::setprecision(17);
  os << "epoch " << epoch << "\nimages";
  for (auto i : batch) os << ' ' << i;
  os << "\nloss match " << loss.match << " mce " << loss.mce << " total " << loss.total;
  os << "\nP_global min " << pg.minCoeff() << " max " << pg.maxCoeff() << " finite " << pg.allFinite();
  os << "\nP_local min " << pl.minCoeff() << " max " << pl.maxCoeff() << " finite " << pl.allFinite();
  os << "\nalpha";
  for (Eigen::Index c = 0; c < alpha.size(); ++c) os << ' ' << alpha[c];
  os << '\n';
  return os.str();
}

}  // namespace

TrainResult train(const RunConfig& cfg, std::span<const LabeledImage> dataset, std::span<const LabelSet> labels,
                  const Split& split, bool hungarian_eval, const TrainOptions& opts) {
  cfg.validate();
  if (labels.size() != dataset.size()) throw std::invalid_argument("train: one label set per image required");
  const int classes = cfg.data.class_count;
  const int kp = cfg.encoder.patch_count();

  std::vector<LabelSet> train_labels;
  std::vector<LabeledImage> train_images;
  for (auto i : split.train) {
    train_labels.push_back(labels[i]);
    train_images.push_back(dataset[i]);
  }
  const DiscreteMeasure nu_d = class_frequencies(train_labels, classes);

  TrainResult result;
  result.alpha_star = ground_truth_area(train_images, classes);
  Checkpoint& ck = result.checkpoint;
  ck = initial_checkpoint(cfg, nu_d);
  AreaState area_local = ck.area;  // audit copy, updated from the same densities

  const PredictOptions po{cfg.temperature, true};
  auto params = named_parameters(ck.encoder, ck.head);
  std::vector<bool> block_param(params.size(), false);
  for (std::size_t k = 0; k < params.size(); ++k) block_param[k] = params[k].name.rfind("encoder.block", 0) == 0;
  Adam adam;

  if (opts.step_log) *opts.step_log << "step,epoch,loss_total,loss_match,loss_mce,grad_norm,sinkhorn_iters\n";
  long step = 0;
  if (opts.epoch_log) write_epochs_header(*opts.epoch_log, classes);

  std::vector<std::size_t> order = split.train;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    const bool warmup = epoch < cfg.warmup_epochs;
    const double lr = warmup ? cfg.lr : cfg.lr * cfg.lr_decay;
    const double eps = cfg.epsilon.at(epoch, cfg.epochs);
    std::vector<bool> trainable(params.size());
    for (std::size_t k = 0; k < params.size(); ++k) trainable[k] = k == 0 || (!warmup && block_param[k]);

    std::mt19937_64 shuffle(mix_seed(cfg.seed, 1000 + static_cast<std::uint64_t>(epoch)));
    for (std::size_t i = order.size() - 1; i > 0; --i) std::swap(order[i], order[shuffle() % (i + 1)]);

    EpochRecord rec;
    rec.epoch = epoch + 1;
    int batches = 0;
    std::vector<DiscreteMeasure> accumulated;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t stop = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      const std::span<const std::size_t> batch(order.data() + start, stop - start);

      std::vector<ViewPair> views;
      std::vector<LabelSet> batch_labels;
      const std::uint64_t view_seed = mix_seed(cfg.seed, 500000 + static_cast<std::uint64_t>(epoch));
      for (auto idx : batch) {
        views.push_back(make_views(dataset[idx].image, mix_seed(view_seed, idx), cfg.views));
        batch_labels.push_back(labels[idx]);
      }
      BatchPass pass = forward_batch(ck, views, batch_labels, classes, po);
      const PredictionMatrix& p_global = pass.p_global;
      const PredictionMatrix& p_local = pass.p_local;

      Eigen::MatrixXd q_global, q_local;
      int iters = 0;
      if (cfg.no_ot) {
        q_global = argmax_plan(p_global);
        q_local = argmax_plan(p_local);
      } else {
        SinkhornOptions so;
        so.tol = cfg.sinkhorn_tol;
        so.max_iter = cfg.sinkhorn_max_iter;
        Plans plans = transport_plans(p_global, p_local, batch_labels, classes, kp, ck.area, nu_d, eps, cfg, so);
        q_global = std::move(plans.global);
        q_local = std::move(plans.local);
        iters = plans.iterations;
        rec.sinkhorn_unconverged += plans.unconverged;
      }

      Pc2mInputs in;
      in.p_global = &p_global;
      in.p_local = &p_local;
      in.q_global = &q_global;
      in.q_local = &q_local;
      in.alignment = pass.alignment;
      in.patches_per_image = kp;
      in.labels = &pass.label_matrix;
      in.match.mode = cfg.self_match ? MatchMode::Self : MatchMode::Cross;
      in.match.per_patch_average = cfg.match_per_patch_average;
      in.include_match = !warmup;
      const Pc2mResult loss = pc2m_loss(in);
      if (!std::isfinite(loss.loss.total)) {
        throw NumericalAbort("non-finite loss at epoch " + std::to_string(epoch + 1),
                             describe_batch(epoch + 1, batch, loss.loss, p_global.values(), p_local.values(),
                                            batch_rescale(ck.area.a_tilde,
                                                          batch_frequencies(batch_labels, classes, cfg.batch_frequency),
                                                          nu_d)));
      }

      EncoderParams enc_grads = ck.encoder.zeros_like();
      ProjectionWeights head_grads = ck.head.zeros_like();
      backward_batch(pass, ck, po, loss.grad_p_global, loss.grad_p_local, !warmup, enc_grads, head_grads);
      const auto grads = flatten_grads(enc_grads, head_grads);
      double grad_sq = 0.0;
      for (std::size_t k = 0; k < grads.size(); ++k)
        if (trainable[k]) grad_sq += grads[k].squaredNorm();
      adam.step_update(params, grads, trainable, lr, cfg);
      ++step;
      if (!cfg.strict_area_update) {
        for (std::size_t i = 0; i < batch.size(); ++i)
          accumulated.push_back(image_density(p_global.rows_block(static_cast<Eigen::Index>(i) * kp, kp)));
      }

      rec.loss.match += loss.loss.match;
      rec.loss.mce += loss.loss.mce;
      rec.loss.total += loss.loss.total;
      ++batches;
      if (opts.step_log) {
        *opts.step_log << std::setprecision(17) << step << ',' << epoch + 1 << ',' << loss.loss.total << ','
                       << loss.loss.match << ',' << loss.loss.mce << ',' << std::sqrt(grad_sq) << ',' << iters << '\n';
      }
    }
    rec.loss.match /= batches;
    rec.loss.mce /= batches;
    rec.loss.total /= batches;

    // epoch barrier: one area update from the un-augmented training images
    std::vector<DiscreteMeasure> densities;
    if (cfg.strict_area_update) {
      densities.reserve(split.train.size());
      for (auto idx : split.train) densities.push_back(predicted_density(ck, dataset[idx].image));
    } else {
      densities = std::move(accumulated);
    }
    const DiscreteMeasure mean = mean_density(densities);
    const DiscreteMeasure previous = ck.area.a_tilde;
    ck.area = ema_update(ck.area, mean, cfg.gamma);
    area_local = ema_update(area_local, mean, cfg.gamma);

    rec.a_tilde = ck.area.a_tilde.weights();
    rec.a_tilde_local = area_local.a_tilde.weights();
    rec.entropy = shannon_entropy(ck.area.a_tilde);
    rec.js_previous = js_divergence(ck.area.a_tilde, previous);
    rec.js_ground_truth = js_divergence(result.alpha_star, ck.area.a_tilde);
    const EvaluationReport report = evaluate(ck, dataset, split.held_out, classes, hungarian_eval);
    rec.miou = report.miou.miou;
    result.class_mapping = report.class_mapping;
    rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (opts.epoch_log) write_epoch_row(*opts.epoch_log, rec);
    if (opts.verbose) {
      std::cerr << "epoch " << rec.epoch << " loss " << rec.loss.total << " miou " << rec.miou << " H " << rec.entropy
                << " js_gt " << rec.js_ground_truth << " (" << rec.wall_seconds << " s)\n";
    }
    result.records.push_back(std::move(rec));
  }
  return result;
}

GradCheckReport network_grad_check(const RunConfig& cfg, std::span<const LabeledImage> images,
                                   const GradCheckOptions& opts) {
  cfg.validate();
  if (images.empty()) throw std::invalid_argument("network_grad_check: no images");
  const int classes = cfg.data.class_count;
  const auto labels = labels_of(images);
  const DiscreteMeasure nu_d = class_frequencies(labels, classes);
  Checkpoint ck = initial_checkpoint(cfg, nu_d);
  const PredictOptions po{cfg.temperature, true};

  std::vector<ViewPair> views;
  for (std::size_t i = 0; i < images.size(); ++i)
    views.push_back(make_views(images[i].image, mix_seed(cfg.seed, 900 + i), cfg.views));

  const BatchPass initial = forward_batch(ck, views, labels, classes, po);
  const DiscreteMeasure alpha =
      batch_rescale(ck.area.a_tilde, batch_frequencies(labels, classes, cfg.batch_frequency), nu_d);
  const DiscreteMeasure delta = make_patch_marginal(static_cast<std::size_t>(initial.p_global.rows()));
  const double eps = cfg.epsilon.at(0, cfg.epochs);
  SinkhornOptions so;
  so.tol = 1e-12;
  so.max_iter = 10000;
  const Eigen::MatrixXd q_global = sinkhorn(gibbs_kernel(initial.p_global, eps), delta, alpha, so).coupling.values;
  const Eigen::MatrixXd q_local = sinkhorn(gibbs_kernel(initial.p_local, eps), delta, alpha, so).coupling.values;

  auto loss_of = [&](const BatchPass& pass) {
    Pc2mInputs in;
    in.p_global = &pass.p_global;
    in.p_local = &pass.p_local;
    in.q_global = &q_global;
    in.q_local = &q_local;
    in.alignment = pass.alignment;
    in.patches_per_image = ck.encoder.cfg.patch_count();
    in.labels = &pass.label_matrix;
    in.match.mode = cfg.self_match ? MatchMode::Self : MatchMode::Cross;
    return pc2m_loss(in);
  };

  const Pc2mResult base = loss_of(initial);
  EncoderParams enc_grads = ck.encoder.zeros_like();
  ProjectionWeights head_grads = ck.head.zeros_like();
  backward_batch(initial, ck, po, base.grad_p_global, base.grad_p_local, true, enc_grads, head_grads);
  const auto analytic = flatten_grads(enc_grads, head_grads);
  const auto params = named_parameters(ck.encoder, ck.head);
  return grad_check([&] { return loss_of(forward_batch(ck, views, labels, classes, po)).loss.total; }, params,
                    analytic, opts);
}

}  // namespace pc2m
