#include "pc2m/patch_net.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

namespace pc2m {

ImageTensor ImageTensor::zeros(int size, int id) {
  if (size <= 0) throw std::invalid_argument("ImageTensor: size must be positive");
  ImageTensor img;
  img.size = size;
  img.id = id;
  img.pixels.assign(static_cast<std::size_t>(size) * size * 3, 0.0);
  return img;
}

void ViewConfig::validate() const {
  auto in_unit = [](double v) { return v > 0.0 && v <= 1.0; };
  if (!in_unit(global_scale_min) || !in_unit(global_scale_max) || global_scale_min > global_scale_max)
    throw std::invalid_argument("ViewConfig: global scale range must lie in (0,1]");
  if (!in_unit(local_area_min) || !in_unit(local_area_max) || local_area_min > local_area_max)
    throw std::invalid_argument("ViewConfig: local crop area range must lie in (0,1]");
  if (!(jitter >= 0.0 && jitter < 1.0)) throw std::invalid_argument("ViewConfig: jitter must lie in [0,1)");
}

ImageTensor resample(const ImageTensor& image, const CropRect& rect, int out_size, double gain) {
  ImageTensor out = ImageTensor::zeros(out_size, image.id);
  const int n = image.size;
  const double sx_scale = rect.width / out_size;
  const double sy_scale = rect.height / out_size;
  for (int oy = 0; oy < out_size; ++oy) {
    const double sy = std::clamp(rect.y + (oy + 0.5) * sy_scale - 0.5, 0.0, double(n - 1));
    const int y0 = static_cast<int>(std::floor(sy));
    const int y1 = std::min(y0 + 1, n - 1);
    const double ty = sy - y0;
    for (int ox = 0; ox < out_size; ++ox) {
      const double sx = std::clamp(rect.x + (ox + 0.5) * sx_scale - 0.5, 0.0, double(n - 1));
      const int x0 = static_cast<int>(std::floor(sx));
      const int x1 = std::min(x0 + 1, n - 1);
      const double tx = sx - x0;
      for (int ch = 0; ch < 3; ++ch) {
        const double top = (1 - tx) * image.at(y0, x0, ch) + tx * image.at(y0, x1, ch);
        const double bottom = (1 - tx) * image.at(y1, x0, ch) + tx * image.at(y1, x1, ch);
        out.at(oy, ox, ch) = std::clamp(gain * ((1 - ty) * top + ty * bottom), 0.0, 1.0);
      }
    }
  }
  return out;
}

ViewPair render_views(const ImageTensor& image, const CropRect& global_crop,
                      const CropRect& local_crop, double global_gain, double local_gain) {
  auto inside = [&](const CropRect& r) {
    constexpr double eps = 1e-9;
    return r.width > 0 && r.height > 0 && r.x >= -eps && r.y >= -eps &&
           r.x + r.width <= image.size + eps && r.y + r.height <= image.size + eps;
  };
  if (!inside(global_crop) || !inside(local_crop))
    throw std::invalid_argument("render_views: crop must lie inside the image");
  ViewPair pair;
  pair.global_crop = global_crop;
  pair.local_crop = local_crop;
  pair.global_view = resample(image, global_crop, image.size, global_gain);
  pair.local_view = resample(image, local_crop, image.size, local_gain);
  return pair;
}

ViewPair make_views(const ImageTensor& image, std::uint64_t seed, const ViewConfig& cfg) {
  cfg.validate();
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto lerp = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };
  const double n = image.size;

  const double g_side = lerp(cfg.global_scale_min, cfg.global_scale_max) * n;
  const CropRect global{lerp(0.0, n - g_side), lerp(0.0, n - g_side), g_side, g_side};
  const double l_side = std::sqrt(lerp(cfg.local_area_min, cfg.local_area_max)) * n;
  const CropRect local{lerp(0.0, n - l_side), lerp(0.0, n - l_side), l_side, l_side};
  const double g_gain = lerp(1.0 - cfg.jitter, 1.0 + cfg.jitter);
  const double l_gain = lerp(1.0 - cfg.jitter, 1.0 + cfg.jitter);

  ViewPair pair = render_views(image, global, local, g_gain, l_gain);
  pair.augmentation_seed = seed;
  return pair;
}

// ---------------------------------------------------------------------------

void EncoderConfig::validate() const {
  if (image_size <= 0 || patch_size <= 0 || image_size % patch_size != 0)
    throw std::invalid_argument("EncoderConfig: image size must be a positive multiple of the patch size");
  if (embed_dim <= 0 || blocks < 0) throw std::invalid_argument("EncoderConfig: invalid dimensions");
}

EncoderParams EncoderParams::init(const EncoderConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  std::mt19937_64 rng(seed);
  auto gaussian = [&](Eigen::Index r, Eigen::Index c, double stddev) {
    std::normal_distribution<double> dist(0.0, stddev);
    Eigen::MatrixXd m(r, c);
    for (Eigen::Index j = 0; j < c; ++j)
      for (Eigen::Index i = 0; i < r; ++i) m(i, j) = dist(rng);
    return m;
  };
  const int e = cfg.embed_dim;
  EncoderParams p;
  p.cfg = cfg;
  p.seed = seed;
  p.embed = gaussian(cfg.patch_dim(), e, 1.0 / std::sqrt(double(cfg.patch_dim())));
  p.embed_bias = Eigen::MatrixXd::Zero(1, e);
  p.pos = gaussian(cfg.patch_count(), e, 0.02);
  for (int b = 0; b < cfg.blocks; ++b) {
    MixingBlock blk;
    blk.wq = gaussian(e, e, 1.0 / std::sqrt(double(e)));
    blk.wk = gaussian(e, e, 1.0 / std::sqrt(double(e)));
    blk.wv = gaussian(e, e, 1.0 / std::sqrt(double(e)));
    blk.scale = Eigen::MatrixXd::Constant(1, e, cfg.init_layer_scale);
    p.blocks.push_back(std::move(blk));
  }
  return p;
}

EncoderParams EncoderParams::zeros_like() const {
  EncoderParams z;
  z.cfg = cfg;
  z.seed = seed;
  z.embed = Eigen::MatrixXd::Zero(embed.rows(), embed.cols());
  z.embed_bias = Eigen::MatrixXd::Zero(embed_bias.rows(), embed_bias.cols());
  z.pos = Eigen::MatrixXd::Zero(pos.rows(), pos.cols());
  for (const auto& b : blocks) {
    z.blocks.push_back({Eigen::MatrixXd::Zero(b.wq.rows(), b.wq.cols()),
                        Eigen::MatrixXd::Zero(b.wk.rows(), b.wk.cols()),
                        Eigen::MatrixXd::Zero(b.wv.rows(), b.wv.cols()),
                        Eigen::MatrixXd::Zero(b.scale.rows(), b.scale.cols())});
  }
  return z;
}

ProjectionWeights ProjectionWeights::init(int embed_dim, int class_count, std::uint64_t seed) {
  if (embed_dim <= 0 || class_count <= 0) throw std::invalid_argument("ProjectionWeights: invalid shape");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> dist(0.0, 1.0 / std::sqrt(double(embed_dim)));
  ProjectionWeights w{Eigen::MatrixXd(embed_dim, class_count)};
  for (Eigen::Index j = 0; j < w.w.cols(); ++j)
    for (Eigen::Index i = 0; i < w.w.rows(); ++i) w.w(i, j) = dist(rng);
  return w;
}

Eigen::MatrixXd extract_patches(const ImageTensor& view, int patch_size) {
  const int side = view.size / patch_size;
  Eigen::MatrixXd out(side * side, patch_size * patch_size * 3);
  for (int py = 0; py < side; ++py)
    for (int px = 0; px < side; ++px) {
      const int row = py * side + px;
      int col = 0;
      for (int y = 0; y < patch_size; ++y)
        for (int x = 0; x < patch_size; ++x)
          for (int ch = 0; ch < 3; ++ch)
            out(row, col++) = view.at(py * patch_size + y, px * patch_size + x, ch);
    }
  return out;
}

namespace {

void check_view(const ImageTensor& view, const EncoderParams& params) {
  if (view.size != params.cfg.image_size)
    throw std::invalid_argument("encode: view resolution " + std::to_string(view.size) +
                                " does not match encoder resolution " +
                                std::to_string(params.cfg.image_size));
}

Eigen::MatrixXd row_softmax(const Eigen::MatrixXd& s) {
  Eigen::MatrixXd out(s.rows(), s.cols());
  for (Eigen::Index i = 0; i < s.rows(); ++i) {
    const double m = s.row(i).maxCoeff();
    out.row(i) = (s.row(i).array() - m).exp();
    out.row(i) /= out.row(i).sum();
  }
  return out;
}

}  // namespace

PatchFeatures embed_patches(const ImageTensor& view, const EncoderParams& params) {
  check_view(view, params);
  Eigen::MatrixXd h = extract_patches(view, params.cfg.patch_size) * params.embed;
  h.rowwise() += params.embed_bias.row(0);
  h += params.pos;
  return {std::move(h)};
}

PatchFeatures encode(const ImageTensor& view, const EncoderParams& params, EncoderTape* tape) {
  check_view(view, params);
  Eigen::MatrixXd patches = extract_patches(view, params.cfg.patch_size);
  Eigen::MatrixXd h = patches * params.embed;
  h.rowwise() += params.embed_bias.row(0);
  h += params.pos;
  if (tape) {
    *tape = EncoderTape{};
    tape->patches = std::move(patches);
  }
  const double inv_sqrt_e = 1.0 / std::sqrt(double(params.cfg.embed_dim));
  for (const auto& blk : params.blocks) {
    Eigen::MatrixXd q = h * blk.wq;
    Eigen::MatrixXd k = h * blk.wk;
    Eigen::MatrixXd v = h * blk.wv;
    Eigen::MatrixXd attn = row_softmax((q * k.transpose()) * inv_sqrt_e);
    Eigen::MatrixXd mixed = attn * v;
    Eigen::MatrixXd next = h;
    next.array() += mixed.array().rowwise() * blk.scale.row(0).array();
    if (tape) {
      tape->inputs.push_back(std::move(h));
      tape->q.push_back(std::move(q));
      tape->k.push_back(std::move(k));
      tape->v.push_back(std::move(v));
      tape->attn.push_back(std::move(attn));
      tape->mixed.push_back(std::move(mixed));
    }
    h = std::move(next);
  }
  return {std::move(h)};
}

void encode_backward(const EncoderTape& tape, const EncoderParams& params,
                     const Eigen::MatrixXd& grad_features, EncoderParams& grads) {
  const double inv_sqrt_e = 1.0 / std::sqrt(double(params.cfg.embed_dim));
  Eigen::MatrixXd dh = grad_features;
  for (int b = static_cast<int>(params.blocks.size()) - 1; b >= 0; --b) {
    const auto& blk = params.blocks[static_cast<std::size_t>(b)];
    auto& gblk = grads.blocks[static_cast<std::size_t>(b)];
    const auto bi = static_cast<std::size_t>(b);
    const Eigen::MatrixXd& h = tape.inputs[bi];
    const Eigen::MatrixXd& attn = tape.attn[bi];

    gblk.scale += (dh.cwiseProduct(tape.mixed[bi])).colwise().sum();
    Eigen::MatrixXd d_mixed = dh.array().rowwise() * blk.scale.row(0).array();
    Eigen::MatrixXd d_attn = d_mixed * tape.v[bi].transpose();
    Eigen::MatrixXd d_v = attn.transpose() * d_mixed;
    Eigen::VectorXd row_dot = d_attn.cwiseProduct(attn).rowwise().sum();
    Eigen::MatrixXd d_scores = attn.cwiseProduct(d_attn.colwise() - row_dot) * inv_sqrt_e;
    Eigen::MatrixXd d_q = d_scores * tape.k[bi];
    Eigen::MatrixXd d_k = d_scores.transpose() * tape.q[bi];

    gblk.wq += h.transpose() * d_q;
    gblk.wk += h.transpose() * d_k;
    gblk.wv += h.transpose() * d_v;
    dh += d_q * blk.wq.transpose() + d_k * blk.wk.transpose() + d_v * blk.wv.transpose();
  }
  grads.embed += tape.patches.transpose() * dh;
  grads.embed_bias += dh.colwise().sum();
  grads.pos += dh;
}

// ---------------------------------------------------------------------------

PredictionMatrix softmax_rows(const Eigen::MatrixXd& logits, double temperature) {
  if (!(temperature > 0.0)) throw std::invalid_argument("predict: temperature must be positive");
  constexpr double kFloor = 1e-300;
  Eigen::MatrixXd p(logits.rows(), logits.cols());
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const double m = logits.row(i).maxCoeff();
    p.row(i) = ((logits.row(i).array() - m) / temperature).exp().max(kFloor);
    p.row(i) /= p.row(i).sum();
  }
  return PredictionMatrix(std::move(p));
}

PredictionMatrix predict(const PatchFeatures& f, const ProjectionWeights& w,
                         const PredictOptions& opts, PredictTape* tape) {
  if (!(opts.temperature > 0.0)) throw std::invalid_argument("predict: temperature must be positive");
  if (f.values.cols() != w.w.rows()) throw std::invalid_argument("predict: feature/weight dimension mismatch");
  Eigen::MatrixXd logits;
  PredictTape local;
  PredictTape& t = tape ? *tape : local;
  if (opts.cosine) {
    t.f_norms = f.values.rowwise().norm().cwiseMax(1e-12);
    t.w_norms = w.w.colwise().norm().transpose().cwiseMax(1e-12);
    t.f_hat = t.f_norms.cwiseInverse().asDiagonal() * f.values;
    t.w_hat = w.w * t.w_norms.cwiseInverse().asDiagonal();
    logits = t.f_hat * t.w_hat;
  } else {
    logits = f.values * w.w;
  }
  PredictionMatrix p = softmax_rows(logits, opts.temperature);
  t.probs = p.values();
  return p;
}

void predict_backward(const PredictTape& tape, const PatchFeatures& f, const ProjectionWeights& w,
                      const PredictOptions& opts, const Eigen::MatrixXd& grad_p,
                      Eigen::MatrixXd& grad_features, Eigen::MatrixXd& grad_w) {
  const Eigen::MatrixXd& p = tape.probs;
  const Eigen::VectorXd inner = grad_p.cwiseProduct(p).rowwise().sum();
  const Eigen::MatrixXd d_logits = p.cwiseProduct(grad_p.colwise() - inner) / opts.temperature;
  if (!opts.cosine) {
    grad_features += d_logits * w.w.transpose();
    grad_w += f.values.transpose() * d_logits;
    return;
  }
  const Eigen::MatrixXd d_fhat = d_logits * tape.w_hat.transpose();
  const Eigen::MatrixXd d_what = tape.f_hat.transpose() * d_logits;
  // d(x/|x|) = (g - x_hat (x_hat . g)) / |x|
  const Eigen::VectorXd f_dot = d_fhat.cwiseProduct(tape.f_hat).rowwise().sum();
  grad_features += tape.f_norms.cwiseInverse().asDiagonal() *
                   (d_fhat - f_dot.asDiagonal() * tape.f_hat);
  const Eigen::RowVectorXd w_dot = d_what.cwiseProduct(tape.w_hat).colwise().sum();
  grad_w += (d_what - tape.w_hat * w_dot.asDiagonal()) * tape.w_norms.cwiseInverse().asDiagonal();
}

// ---------------------------------------------------------------------------

std::size_t PatchAlignment::valid_count() const {
  return static_cast<std::size_t>(std::count_if(mapping.begin(), mapping.end(), [](int g) { return g >= 0; }));
}

PatchAlignment align_patches(const ViewPair& pair, int patch_size) {
  const int n = pair.local_view.size;
  if (n <= 0 || patch_size <= 0 || n % patch_size != 0)
    throw std::invalid_argument("align_patches: view size must be a multiple of the patch size");
  const int side = n / patch_size;
  const auto& lc = pair.local_crop;
  const auto& gc = pair.global_crop;
  PatchAlignment out;
  out.mapping.assign(static_cast<std::size_t>(side * side), -1);
  for (int r = 0; r < side; ++r)
    for (int c = 0; c < side; ++c) {
      const double ox = lc.x + (c + 0.5) * patch_size * lc.width / n;
      const double oy = lc.y + (r + 0.5) * patch_size * lc.height / n;
      const double gx = (ox - gc.x) * n / gc.width;
      const double gy = (oy - gc.y) * n / gc.height;
      if (gx < 0.0 || gy < 0.0 || gx >= n || gy >= n) continue;
      const int gcol = static_cast<int>(gx / patch_size);
      const int grow = static_cast<int>(gy / patch_size);
      out.mapping[static_cast<std::size_t>(r * side + c)] = grow * side + gcol;
    }
  return out;
}

PooledScores pool_image_scores(const PredictionMatrix& p) {
  PooledScores out;
  out.scores.resize(p.cols());
  out.argmax.resize(static_cast<std::size_t>(p.cols()));
  for (Eigen::Index c = 0; c < p.cols(); ++c) {
    Eigen::Index arg = 0;
    out.scores[c] = p.values().col(c).maxCoeff(&arg);
    out.argmax[static_cast<std::size_t>(c)] = arg;
  }
  return out;
}

std::vector<NamedMatrix> named_parameters(EncoderParams& encoder, ProjectionWeights& head) {
  std::vector<NamedMatrix> out;
  out.push_back({"head.w", &head.w});
  out.push_back({"encoder.embed", &encoder.embed});
  out.push_back({"encoder.embed_bias", &encoder.embed_bias});
  out.push_back({"encoder.pos", &encoder.pos});
  for (std::size_t b = 0; b < encoder.blocks.size(); ++b) {
    const std::string prefix = "encoder.block" + std::to_string(b) + ".";
    out.push_back({prefix + "wq", &encoder.blocks[b].wq});
    out.push_back({prefix + "wk", &encoder.blocks[b].wk});
    out.push_back({prefix + "wv", &encoder.blocks[b].wv});
    out.push_back({prefix + "scale", &encoder.blocks[b].scale});
  }
  return out;
}

}  // namespace pc2m
