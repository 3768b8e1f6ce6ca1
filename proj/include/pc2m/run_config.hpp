#pragma once

#include "pc2m/area_model.hpp"
#include "pc2m/ot_core.hpp"
#include "pc2m/patch_net.hpp"
#include "pc2m/spectral_labels.hpp"
#include "pc2m/synth_data.hpp"

#include <filesystem>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

namespace pc2m {

enum class RunMode { Weak, Unsupervised, BetaMix };

/// Batch: one plan over all N = b * K patches. Image: one plan per image,
/// each with its own rescaled column marginal, blocks weighted 1 / b.
enum class SinkhornScope { Batch, Image };

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Everything a training run depends on. Serialized as `key = value` lines;
/// see config_keys() for the schema.
struct RunConfig {
  // data
  std::string data_dir;  // empty: generate from `data`
  DatasetSpec data;
  double holdout_fraction = 0.2;

  // area model
  double gamma = 0.02;
  BatchFrequencyMode batch_frequency = BatchFrequencyMode::Fractional;
  /// Strict: epoch-end pass over the un-augmented training images. Otherwise
  /// densities of the global views seen during the epoch are accumulated.
  bool strict_area_update = true;

  // transport
  EpsilonSchedule epsilon;
  double sinkhorn_tol = 1e-6;
  int sinkhorn_max_iter = 500;
  SinkhornScope sinkhorn_scope = SinkhornScope::Batch;

  // optimization
  double lr = 1e-2;
  double lr_decay = 0.1;  // applied after the warm-up epochs
  int warmup_epochs = 1;
  int epochs = 200;
  int batch_size = 8;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;

  // model
  EncoderConfig encoder;
  double temperature = 0.1;
  bool match_per_patch_average = false;
  ViewConfig views;
  std::uint64_t seed = 1;

  // experiment
  RunMode mode = RunMode::Weak;
  double beta = 0.0;
  bool no_ot = false;
  bool self_match = false;
  SpectralConfig spectral;
  std::string labels_file;  // unsupervised / beta-mix: precomputed pseudo labels

  /// Fixed-order sequential execution; the only mode implemented.
  bool reproducible = true;

  /// Throws ConfigError on any out-of-range field.
  void validate() const;
};

struct ConfigKey {
  std::string name;
  std::string description;
};

/// Documented schema, in serialization order.
const std::vector<ConfigKey>& config_keys();

/// Sets one field from text. Unknown keys and malformed values throw ConfigError.
void set_config_value(RunConfig& cfg, const std::string& key, const std::string& value);

/// Reads `key = value` lines; '#' starts a comment. The result is validated.
RunConfig parse_config(std::istream& is, RunConfig base = {});
RunConfig load_config(const std::filesystem::path& path, RunConfig base = {});

void write_config(std::ostream& os, const RunConfig& cfg);

std::string to_string(RunMode mode);

}  // namespace pc2m
