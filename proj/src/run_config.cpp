#include "pc2m/run_config.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <iomanip>
#include <limits>
#include <sstream>

namespace pc2m {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

double to_double(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  double out = 0.0;
  try {
    out = std::stod(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != v.size()) throw ConfigError(key + ": expected a number, got '" + v + "'");
  return out;
}

template <typename Int>
Int to_int(const std::string& key, const std::string& v) {
  Int out{};
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || ptr != v.data() + v.size())
    throw ConfigError(key + ": expected an integer, got '" + v + "'");
  return out;
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError(key + ": expected true or false, got '" + v + "'");
}

std::string fmt(double v) {
  std::ostringstream os;
  os << std::setprecision(std::numeric_limits<double>::max_digits10) << v;
  return os.str();
}

std::vector<double> to_list(const std::string& key, const std::string& v) {
  std::vector<double> out;
  if (v.empty()) return out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(to_double(key, trim(item)));
  return out;
}

struct Field {
  ConfigKey key;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

#define PC2M_DOUBLE(name, member, desc)                                                         \
  Field {                                                                                       \
    {name, desc}, [](RunConfig& c, const std::string& v) { c.member = to_double(name, v); },    \
        [](const RunConfig& c) { return fmt(c.member); }                                        \
  }
#define PC2M_INT(name, member, desc)                                                                   \
  Field {                                                                                              \
    {name, desc}, [](RunConfig& c, const std::string& v) { c.member = to_int<decltype(c.member)>(name, v); }, \
        [](const RunConfig& c) { return std::to_string(c.member); }                                    \
  }
#define PC2M_BOOL(name, member, desc)                                                         \
  Field {                                                                                     \
    {name, desc}, [](RunConfig& c, const std::string& v) { c.member = to_bool(name, v); },    \
        [](const RunConfig& c) { return std::string(c.member ? "true" : "false"); }           \
  }
#define PC2M_STRING(name, member, desc)                                          \
  Field {                                                                        \
    {name, desc}, [](RunConfig& c, const std::string& v) { c.member = v; },      \
        [](const RunConfig& c) { return c.member; }                              \
  }

const std::vector<Field>& fields() {
  static const std::vector<Field> f = {
      PC2M_STRING("data_dir", data_dir, "dataset directory from gen-data; empty generates in memory"),
      PC2M_INT("data.seed", data.seed, "dataset seed"),
      PC2M_INT("data.image_count", data.image_count, "number of images T (>= 2)"),
      PC2M_INT("data.class_count", data.class_count, "classes including background (>= 2)"),
      PC2M_INT("data.image_size", data.image_size, "image side n, divisible by the patch size"),
      PC2M_INT("data.min_shapes", data.min_shapes, "minimum shapes per image"),
      PC2M_INT("data.max_shapes", data.max_shapes, "maximum shapes per image"),
      Field{{"data.class_weights", "comma-separated foreground sampling weights; empty is uniform"},
            [](RunConfig& c, const std::string& v) { c.data.class_weights = to_list("data.class_weights", v); },
            [](const RunConfig& c) {
              std::string s;
              for (std::size_t i = 0; i < c.data.class_weights.size(); ++i)
                s += (i ? "," : "") + fmt(c.data.class_weights[i]);
              return s;
            }},
      PC2M_DOUBLE("data.noise", data.noise, "pixel noise standard deviation"),
      PC2M_DOUBLE("data.min_shape_fraction", data.min_shape_fraction, "smallest shape side / image side"),
      PC2M_DOUBLE("data.max_shape_fraction", data.max_shape_fraction, "largest shape side / image side"),
      PC2M_BOOL("data.stripes", data.stripes, "striped texture on every third class"),
      PC2M_DOUBLE("holdout_fraction", holdout_fraction, "held-out evaluation share in (0, 1)"),
      PC2M_DOUBLE("gamma", gamma, "area EMA momentum in [0, 1]"),
      Field{{"batch_frequency", "indicator or fractional batch class frequency"},
            [](RunConfig& c, const std::string& v) {
              if (v == "indicator")
                c.batch_frequency = BatchFrequencyMode::Indicator;
              else if (v == "fractional")
                c.batch_frequency = BatchFrequencyMode::Fractional;
              else
                throw ConfigError("batch_frequency: expected indicator or fractional, got '" + v + "'");
            },
            [](const RunConfig& c) {
              return std::string(c.batch_frequency == BatchFrequencyMode::Indicator ? "indicator" : "fractional");
            }},
      PC2M_BOOL("strict_area_update", strict_area_update,
                "true: epoch-end pass over un-augmented images; false: accumulate global-view densities"),
      PC2M_DOUBLE("epsilon_start", epsilon.start, "entropic weight at the first epoch (> 0)"),
      PC2M_DOUBLE("epsilon_end", epsilon.end, "entropic weight at the last epoch (> 0), linear in between"),
      PC2M_DOUBLE("sinkhorn_tol", sinkhorn_tol, "max L1 marginal violation"),
      PC2M_INT("sinkhorn_max_iter", sinkhorn_max_iter, "Sinkhorn iteration cap"),
      Field{{"sinkhorn_scope", "batch: one plan per batch; image: one plan per image"},
            [](RunConfig& c, const std::string& v) {
              if (v == "batch")
                c.sinkhorn_scope = SinkhornScope::Batch;
              else if (v == "image")
                c.sinkhorn_scope = SinkhornScope::Image;
              else
                throw ConfigError("sinkhorn_scope: expected batch or image, got '" + v + "'");
            },
            [](const RunConfig& c) {
              return std::string(c.sinkhorn_scope == SinkhornScope::Batch ? "batch" : "image");
            }},
      PC2M_DOUBLE("lr", lr, "initial learning rate"),
      PC2M_DOUBLE("lr_decay", lr_decay, "learning-rate factor after warm-up"),
      PC2M_INT("warmup_epochs", warmup_epochs, "epochs training only the class projection"),
      PC2M_INT("epochs", epochs, "total epochs, warm-up included"),
      PC2M_INT("batch_size", batch_size, "images per batch b"),
      PC2M_DOUBLE("adam_beta1", adam_beta1, "first-moment decay in [0, 1)"),
      PC2M_DOUBLE("adam_beta2", adam_beta2, "second-moment decay in [0, 1)"),
      PC2M_DOUBLE("adam_eps", adam_eps, "Adam denominator guard"),
      PC2M_INT("encoder.patch_size", encoder.patch_size, "patch side d"),
      PC2M_INT("encoder.embed_dim", encoder.embed_dim, "feature dimension e"),
      PC2M_INT("encoder.blocks", encoder.blocks, "mixing blocks"),
      PC2M_DOUBLE("encoder.init_layer_scale", encoder.init_layer_scale, "initial residual scale of every block"),
      PC2M_DOUBLE("temperature", temperature, "softmax temperature of the cosine classifier"),
      PC2M_BOOL("match_per_patch_average", match_per_patch_average, "divide the match cross terms by the row count"),
      PC2M_DOUBLE("views.global_scale_min", views.global_scale_min, "global crop side fraction, lower bound"),
      PC2M_DOUBLE("views.global_scale_max", views.global_scale_max, "global crop side fraction, upper bound"),
      PC2M_DOUBLE("views.local_area_min", views.local_area_min, "local crop area fraction, lower bound"),
      PC2M_DOUBLE("views.local_area_max", views.local_area_max, "local crop area fraction, upper bound"),
      PC2M_DOUBLE("views.jitter", views.jitter, "brightness jitter half-width"),
      PC2M_INT("seed", seed, "model, batching and augmentation seed"),
      Field{{"mode", "weak, unsupervised or beta-mix"},
            [](RunConfig& c, const std::string& v) {
              if (v == "weak")
                c.mode = RunMode::Weak;
              else if (v == "unsupervised")
                c.mode = RunMode::Unsupervised;
              else if (v == "beta-mix")
                c.mode = RunMode::BetaMix;
              else
                throw ConfigError("mode: expected weak, unsupervised or beta-mix, got '" + v + "'");
            },
            [](const RunConfig& c) { return to_string(c.mode); }},
      PC2M_DOUBLE("beta", beta, "beta-mix share of images carrying pseudo labels, in [0, 1]"),
      PC2M_BOOL("no_ot", no_ot, "ablation: argmax one-hot plans instead of Sinkhorn"),
      PC2M_BOOL("self_match", self_match, "ablation: each branch matches its own plan"),
      PC2M_INT("spectral.eigenvectors", spectral.eigenvectors, "eigenvectors k_e per image graph"),
      PC2M_INT("spectral.regions", spectral.regions, "regions per image"),
      PC2M_INT("spectral.kmeans_iterations", spectral.kmeans_iterations, "Lloyd iterations"),
      PC2M_INT("spectral.seed", spectral.seed, "region and crop clustering seed"),
      PC2M_STRING("labels_file", labels_file, "pseudo-label file; empty runs the spectral pipeline"),
      PC2M_BOOL("reproducible", reproducible, "sequential fixed-order execution (must be true)"),
  };
  return f;
}

#undef PC2M_DOUBLE
#undef PC2M_INT
#undef PC2M_BOOL
#undef PC2M_STRING

void require(bool ok, const std::string& msg) {
  if (!ok) throw ConfigError(msg);
}

}  // namespace

std::string to_string(RunMode mode) {
  switch (mode) {
    case RunMode::Weak: return "weak";
    case RunMode::Unsupervised: return "unsupervised";
    case RunMode::BetaMix: return "beta-mix";
  }
  return "weak";
}

const std::vector<ConfigKey>& config_keys() {
  static const std::vector<ConfigKey> keys = [] {
    std::vector<ConfigKey> k;
    for (const auto& f : fields()) k.push_back(f.key);
    return k;
  }();
  return keys;
}

void RunConfig::validate() const {
  try {
    data.validate();
    encoder.validate();
    views.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  require(data.image_size == encoder.image_size, "encoder image size must equal data.image_size");
  require(data.patch_size == encoder.patch_size, "data and encoder patch sizes differ");
  require(holdout_fraction > 0.0 && holdout_fraction < 1.0, "holdout_fraction must lie in (0, 1)");
  const int held = static_cast<int>(std::lround(holdout_fraction * data.image_count));
  require(held >= 1 && held < data.image_count, "holdout split leaves an empty side");
  require(gamma >= 0.0 && gamma <= 1.0, "gamma must lie in [0, 1]");
  require(epsilon.start > 0.0 && epsilon.end > 0.0, "epsilon must be positive");
  require(sinkhorn_tol > 0.0, "sinkhorn_tol must be positive");
  require(sinkhorn_max_iter >= 1, "sinkhorn_max_iter must be >= 1");
  require(lr > 0.0 && lr_decay > 0.0, "learning rate and decay must be positive");
  require(warmup_epochs >= 0 && epochs >= 1 && warmup_epochs <= epochs, "need 0 <= warmup_epochs <= epochs, epochs >= 1");
  require(batch_size >= 1, "batch_size must be >= 1");
  require(adam_beta1 >= 0.0 && adam_beta1 < 1.0 && adam_beta2 >= 0.0 && adam_beta2 < 1.0,
          "Adam moment decays must lie in [0, 1)");
  require(adam_eps > 0.0, "adam_eps must be positive");
  require(temperature > 0.0, "temperature must be positive");
  require(beta >= 0.0 && beta <= 1.0, "beta must lie in [0, 1]");
  require(!(no_ot && self_match), "no_ot and self_match are separate ablations");
  require(spectral.eigenvectors >= 2, "spectral.eigenvectors must be >= 2");
  require(spectral.regions >= 1, "spectral.regions must be >= 1");
  require(spectral.kmeans_iterations >= 1, "spectral.kmeans_iterations must be >= 1");
  require(reproducible, "only reproducible (sequential) execution is implemented");
}

void set_config_value(RunConfig& cfg, const std::string& key, const std::string& value) {
  for (const auto& f : fields()) {
    if (f.key.name == key) {
      f.set(cfg, value);
      // derived fields follow the dataset geometry
      cfg.encoder.image_size = cfg.data.image_size;
      cfg.data.patch_size = cfg.encoder.patch_size;
      return;
    }
  }
  throw ConfigError("unknown config key '" + key + "'");
}

RunConfig parse_config(std::istream& is, RunConfig cfg) {
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
    set_config_value(cfg, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  cfg.validate();
  return cfg;
}

RunConfig load_config(const std::filesystem::path& path, RunConfig base) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config " + path.string());
  return parse_config(is, std::move(base));
}

void write_config(std::ostream& os, const RunConfig& cfg) {
  for (const auto& f : fields()) os << f.key.name << " = " << f.get(cfg) << '\n';
}

}  // namespace pc2m
