#include "pc2m/synth_data.hpp"

#include "pc2m/array_io.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>

namespace pc2m {

void DatasetSpec::validate() const {
  if (class_count < 2) throw std::invalid_argument("DatasetSpec: need at least two classes");
  if (image_count < 1) throw std::invalid_argument("DatasetSpec: image_count must be positive");
  if (patch_size <= 0 || image_size <= 0 || image_size % patch_size != 0)
    throw std::invalid_argument("DatasetSpec: image size must be a multiple of the patch size");
  if (min_shapes < 1 || max_shapes < min_shapes) throw std::invalid_argument("DatasetSpec: invalid shape count range");
  if (!(min_shape_fraction > 0.0 && min_shape_fraction <= max_shape_fraction && max_shape_fraction <= 1.0))
    throw std::invalid_argument("DatasetSpec: invalid shape size range");
  if (!(noise >= 0.0)) throw std::invalid_argument("DatasetSpec: noise must be nonnegative");
  if (!class_weights.empty()) {
    if (class_weights.size() != static_cast<std::size_t>(class_count - 1))
      throw std::invalid_argument("DatasetSpec: class_weights needs one entry per foreground class");
    for (double w : class_weights)
      if (!(w >= 0.0)) throw std::invalid_argument("DatasetSpec: class weights must be nonnegative");
    if (std::accumulate(class_weights.begin(), class_weights.end(), 0.0) <= 0.0)
      throw std::invalid_argument("DatasetSpec: class weights sum to zero");
  }
}

std::vector<double> DatasetSpec::foreground_weights() const {
  std::vector<double> w = class_weights.empty() ? std::vector<double>(static_cast<std::size_t>(class_count - 1), 1.0)
                                                : class_weights;
  const double total = std::accumulate(w.begin(), w.end(), 0.0);
  for (auto& x : w) x /= total;
  return w;
}

std::vector<ClassSignature> DatasetSpec::signatures() const {
  static const double kPalette[][3] = {
      {0.15, 0.15, 0.15},  // background
      {0.90, 0.20, 0.20}, {0.20, 0.80, 0.25}, {0.20, 0.30, 0.95}, {0.95, 0.85, 0.20},
      {0.85, 0.20, 0.85}, {0.20, 0.85, 0.85}, {0.95, 0.55, 0.10}, {0.90, 0.90, 0.90},
  };
  constexpr int kFixed = sizeof(kPalette) / sizeof(kPalette[0]);
  std::vector<ClassSignature> out;
  for (int c = 0; c < std::min(class_count, kFixed); ++c)
    out.push_back({Eigen::Vector3d(kPalette[c][0], kPalette[c][1], kPalette[c][2]), stripes && c % 3 == 2});
  // Extra classes: rejection-sampled colors at least 0.3 away from every other signature.
  std::mt19937_64 rng(0x5eed5eedULL);
  std::uniform_real_distribution<double> unit(0.05, 0.95);
  int attempts = 0;
  while (static_cast<int>(out.size()) < class_count) {
    if (++attempts > 100000) throw std::runtime_error("DatasetSpec: cannot place distinct class colors");
    Eigen::Vector3d color(unit(rng), unit(rng), unit(rng));
    bool ok = true;
    for (const auto& s : out) ok = ok && (s.color - color).norm() >= 0.3;
    if (ok) out.push_back({color, stripes && out.size() % 3 == 2});
  }
  return out;
}

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t index) {
  // splitmix64 finalizer over the combined value
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (index + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

namespace {

struct Box {
  int x0, y0, x1, y1;  // half-open
  bool overlaps(const Box& o) const { return x0 < o.x1 && o.x0 < x1 && y0 < o.y1 && o.y0 < y1; }
};

std::vector<int> draw_classes(const std::vector<double>& weights, int count, std::mt19937_64& rng) {
  std::vector<double> w = weights;
  std::vector<int> out;
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (int k = 0; k < count; ++k) {
    const double total = std::accumulate(w.begin(), w.end(), 0.0);
    if (total <= 0.0) break;
    double r = unit(rng) * total;
    std::size_t pick = 0;
    for (; pick + 1 < w.size(); ++pick) {
      if (r < w[pick]) break;
      r -= w[pick];
    }
    while (w[pick] <= 0.0) --pick;  // r landed on the tail of a zero-weight run
    out.push_back(static_cast<int>(pick) + 1);
    w[pick] = 0.0;
  }
  return out;
}

}  // namespace

LabeledImage gen_image(const DatasetSpec& spec, int index) {
  spec.validate();
  const auto sigs = spec.signatures();
  const int n = spec.image_size;
  std::mt19937_64 rng(mix_seed(spec.seed, static_cast<std::uint64_t>(index)));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> noise(0.0, spec.noise);

  LabeledImage out;
  out.image = ImageTensor::zeros(n, index);
  out.mask.assign(static_cast<std::size_t>(n) * n, 0);

  const int shapes = spec.min_shapes +
                     static_cast<int>(unit(rng) * (spec.max_shapes - spec.min_shapes + 1) - 1e-12);
  const std::vector<int> classes = draw_classes(spec.foreground_weights(), shapes, rng);

  std::vector<Box> placed;
  for (int cls : classes) {
    double side = (spec.min_shape_fraction + unit(rng) * (spec.max_shape_fraction - spec.min_shape_fraction)) * n;
    const bool ellipse = unit(rng) < 0.5;
    const double aspect = 0.75 + 0.5 * unit(rng);
    Box box{};
    bool fitted = false;
    for (int attempt = 0; attempt < 100 && !fitted; ++attempt) {
      const int w = std::clamp(static_cast<int>(std::lround(side * aspect)), spec.patch_size, n);
      const int h = std::clamp(static_cast<int>(std::lround(side / aspect)), spec.patch_size, n);
      const int x0 = static_cast<int>(unit(rng) * (n - w + 1) - 1e-12);
      const int y0 = static_cast<int>(unit(rng) * (n - h + 1) - 1e-12);
      box = {x0, y0, x0 + w, y0 + h};
      fitted = std::none_of(placed.begin(), placed.end(), [&](const Box& b) { return b.overlaps(box); });
      if (!fitted) side *= 0.9;
    }
    if (!fitted) throw std::runtime_error("gen_image: could not place shape after 100 attempts");
    placed.push_back(box);
    const double cx = 0.5 * (box.x0 + box.x1), cy = 0.5 * (box.y0 + box.y1);
    const double rx = 0.5 * (box.x1 - box.x0), ry = 0.5 * (box.y1 - box.y0);
    for (int y = box.y0; y < box.y1; ++y)
      for (int x = box.x0; x < box.x1; ++x) {
        if (ellipse) {
          const double dx = (x + 0.5 - cx) / rx, dy = (y + 0.5 - cy) / ry;
          if (dx * dx + dy * dy > 1.0) continue;
        }
        out.mask[static_cast<std::size_t>(y * n + x)] = cls;
      }
  }

  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x) {
      const int cls = out.mask[static_cast<std::size_t>(y * n + x)];
      const auto& sig = sigs[static_cast<std::size_t>(cls)];
      const double stripe = sig.stripes && ((x / 2) % 2 == 0) ? 0.12 : 0.0;
      for (int ch = 0; ch < 3; ++ch)
        out.image.at(y, x, ch) = std::clamp(sig.color[ch] - stripe + noise(rng), 0.0, 1.0);
      out.labels.insert(cls);
    }
  return out;
}

std::vector<LabeledImage> gen_dataset(const DatasetSpec& spec) {
  spec.validate();
  std::vector<LabeledImage> out;
  out.reserve(static_cast<std::size_t>(spec.image_count));
  for (int i = 0; i < spec.image_count; ++i) out.push_back(gen_image(spec, i));
  return out;
}

DiscreteMeasure ground_truth_area(std::span<const LabeledImage> dataset, int class_count) {
  if (dataset.empty()) throw std::invalid_argument("ground_truth_area: empty dataset");
  Eigen::VectorXd acc = Eigen::VectorXd::Zero(class_count);
  for (const auto& img : dataset) {
    Eigen::VectorXd counts = Eigen::VectorXd::Zero(class_count);
    for (int c : img.mask) {
      if (c < 0 || c >= class_count) throw std::invalid_argument("ground_truth_area: mask label out of range");
      counts[c] += 1.0;
    }
    acc += counts / double(img.mask.size());
  }
  return DiscreteMeasure::normalized(acc / double(dataset.size()), MeasureRole::AreaTarget);
}

std::vector<int> patch_majority_labels(const LabeledImage& image, int patch_size, int class_count) {
  const int side = image.image.size / patch_size;
  std::vector<int> out(static_cast<std::size_t>(side * side));
  std::vector<int> counts(static_cast<std::size_t>(class_count));
  for (int py = 0; py < side; ++py)
    for (int px = 0; px < side; ++px) {
      std::fill(counts.begin(), counts.end(), 0);
      for (int y = 0; y < patch_size; ++y)
        for (int x = 0; x < patch_size; ++x)
          ++counts[static_cast<std::size_t>(image.mask_at(py * patch_size + y, px * patch_size + x))];
      out[static_cast<std::size_t>(py * side + px)] =
          static_cast<int>(std::max_element(counts.begin(), counts.end()) - counts.begin());
    }
  return out;
}

std::vector<LabelSet> labels_of(std::span<const LabeledImage> dataset) {
  std::vector<LabelSet> out;
  out.reserve(dataset.size());
  for (const auto& img : dataset) out.push_back(img.labels);
  return out;
}

void write_label_file(const std::filesystem::path& path, std::span<const int> ids,
                      std::span<const LabelSet> labels, int class_count) {
  if (ids.size() != labels.size()) throw std::invalid_argument("write_label_file: id/label count mismatch");
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
  os << "# pc2m labels class_count=" << class_count << "\n";
  for (std::size_t i = 0; i < ids.size(); ++i) {
    os << ids[i];
    for (int c : labels[i]) os << ' ' << c;
    os << '\n';
  }
}

LabelFile read_label_file(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  LabelFile out;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    if (line[0] == '#') {
      const auto pos = line.find("class_count=");
      if (pos != std::string::npos) out.class_count = std::stoi(line.substr(pos + 12));
      continue;
    }
    std::istringstream ls(line);
    int id = 0;
    if (!(ls >> id)) throw std::runtime_error(path.string() + ": malformed line '" + line + "'");
    LabelSet set;
    int c = 0;
    while (ls >> c) set.insert(c);
    if (!ls.eof()) throw std::runtime_error(path.string() + ": malformed label in '" + line + "'");
    out.ids.push_back(id);
    out.labels.push_back(std::move(set));
  }
  return out;
}

void save_dataset(const std::filesystem::path& dir, std::span<const LabeledImage> dataset, int class_count) {
  if (dataset.empty()) throw std::invalid_argument("save_dataset: empty dataset");
  std::filesystem::create_directories(dir);
  const auto n = static_cast<std::uint64_t>(dataset.front().image.size);
  const auto t = static_cast<std::uint64_t>(dataset.size());
  NamedArray images{"images", {t, n, n, 3}, {}};
  NamedArray masks{"masks", {t, n, n}, {}};
  images.data.reserve(t * n * n * 3);
  masks.data.reserve(t * n * n);
  std::vector<int> ids;
  for (const auto& img : dataset) {
    images.data.insert(images.data.end(), img.image.pixels.begin(), img.image.pixels.end());
    for (int c : img.mask) masks.data.push_back(double(c));
    ids.push_back(img.image.id);
  }
  write_arrays(dir / "images.bin", std::span<const NamedArray>(&images, 1));
  write_arrays(dir / "masks.bin", std::span<const NamedArray>(&masks, 1));
  const auto labels = labels_of(dataset);
  write_label_file(dir / "index.txt", ids, labels, class_count);
}

LoadedDataset load_dataset(const std::filesystem::path& dir) {
  const auto image_arrays = read_arrays(dir / "images.bin");
  const auto mask_arrays = read_arrays(dir / "masks.bin");
  const NamedArray& images = find_array(image_arrays, "images");
  const NamedArray& masks = find_array(mask_arrays, "masks");
  const LabelFile index = read_label_file(dir / "index.txt");
  if (images.shape.size() != 4 || masks.shape.size() != 3 || images.shape[0] != masks.shape[0] ||
      images.shape[0] != index.ids.size())
    throw ArrayFormatError(dir.string() + ": inconsistent dataset files");
  const auto t = images.shape[0];
  const auto n = images.shape[1];
  LoadedDataset out;
  out.class_count = index.class_count;
  for (std::uint64_t i = 0; i < t; ++i) {
    LabeledImage img;
    img.image = ImageTensor::zeros(static_cast<int>(n), index.ids[i]);
    std::copy_n(images.data.begin() + static_cast<std::ptrdiff_t>(i * n * n * 3), n * n * 3, img.image.pixels.begin());
    img.mask.resize(n * n);
    for (std::uint64_t k = 0; k < n * n; ++k) img.mask[k] = static_cast<int>(masks.data[i * n * n + k]);
    img.labels = index.labels[i];
    out.images.push_back(std::move(img));
  }
  return out;
}

}  // namespace pc2m
