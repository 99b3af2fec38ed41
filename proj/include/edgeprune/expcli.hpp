#pragma once

// Datasets, experiment configuration, prune-then-train runs, sweeps and
// SVG figure emitters.

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "edgeprune/nnet.hpp"
#include "edgeprune/pruning.hpp"

namespace edgeprune::exp {

using nnet::ArchSpec;
using nnet::Batch;

struct Dataset {
  Batch train;
  Batch test;
  std::size_t classes = 10;
};

/// Parse IDX image bytes (magic 0x00000803) into count x rows*cols in [0, 1].
nnet::Tensor parse_idx_images(const std::string& bytes, std::size_t* rows = nullptr,
                              std::size_t* cols = nullptr);
/// Parse IDX label bytes (magic 0x00000801).
std::vector<int> parse_idx_labels(const std::string& bytes);

struct MnistFile {
  const char* name;
  std::size_t size;
};
/// The four uncompressed MNIST files with their exact sizes.
const std::vector<MnistFile>& mnist_files();

/// Directory from EDGEPRUNE_DATA_DIR, falling back to `fallback`.
std::string data_dir(const std::string& fallback = "data/mnist");

Dataset load_mnist(const std::string& dir);
/// Size and magic check of every file; throws on the first problem.
void verify_mnist(const std::string& dir);
/// Download, gunzip and verify into `dir` from `base_url`.
void fetch_mnist(const std::string& dir, const std::string& base_url);

/// Gaussian blobs: class means are independent N(0, I) directions scaled to
/// norm `margin`; samples add N(0, I) noise. Labels cycle through classes.
Batch synthetic_data(std::size_t classes, std::size_t dim, std::size_t count, std::uint64_t seed,
                     double margin);
Dataset synthetic_dataset(std::size_t classes, std::size_t dim, std::size_t train_count,
                          std::size_t test_count, std::uint64_t seed, double margin);

/// Rows of `b` in the given order.
Batch take_rows(const Batch& b, const std::vector<std::size_t>& rows);

struct InitSpec {
  /// eoc, ordered, chaotic or explicit.
  std::string phase = "eoc";
  /// Multiplier on the edge-of-chaos sigma_w for ordered/chaotic.
  double ordered_factor = 0.7;
  double chaotic_factor = 1.3;
  double sigma_b = 0.3;
  /// Used when phase is explicit.
  double sigma_w = 1.0;
};

struct ResolvedInit {
  double sigma_w = 1.0;
  double sigma_b = 0.0;
  double chi = 1.0;
  double kappa = 0.0;
};

ResolvedInit resolve_init(const InitSpec& init, gaussfield::Activation act);

struct DataSpec {
  /// synthetic or mnist.
  std::string kind = "synthetic";
  std::string dir;
  std::size_t classes = 10;
  std::size_t dim = 100;
  std::size_t train_count = 5000;
  std::size_t test_count = 1000;
  double margin = 4.0;
  std::uint64_t seed = 1234;
};

struct ExperimentConfig {
  ArchSpec arch;
  InitSpec init;
  pruning::Criterion criterion = pruning::Criterion::snip;
  double sparsity = 0.0;
  bool rescale = false;
  std::size_t saliency_batch = 100;
  double lr = 1e-3;
  std::size_t batch_size = 100;
  std::size_t iterations = 1000;
  std::size_t log_every = 100;
  std::uint64_t seed = 0;
  std::size_t trials = 10;
  DataSpec data;
  std::string output_dir = "out";

  nlohmann::json to_json() const;
  static ExperimentConfig from_json(const nlohmann::json& j);
  /// 16 hex digits of FNV-1a over the canonical JSON.
  std::string hash() const;
};

ExperimentConfig load_config(const std::string& path);

Dataset load_dataset(const DataSpec& spec);

struct RunRecord {
  std::string config_hash;
  std::string status = "ok";
  std::string error;
  std::vector<double> losses;
  double test_accuracy = 0.0;
  double wall_seconds = 0.0;
  ResolvedInit init;
  pruning::PruneReport report;

  nlohmann::json to_json() const;
  static RunRecord from_json(const nlohmann::json& j);
};

/// Saliency on a seeded batch, global mask, optional rescale, SGD, test accuracy.
RunRecord run_prune_train(const ExperimentConfig& config, const Dataset& data);
RunRecord run_prune_train(const ExperimentConfig& config);

struct SweepGrid {
  ExperimentConfig base;
  std::vector<std::size_t> depths;
  std::vector<double> sparsities;
  std::vector<std::string> phases;
  std::vector<bool> rescale;

  static SweepGrid from_json(const nlohmann::json& j);
  std::vector<ExperimentConfig> cells() const;
};

struct SweepRow {
  ExperimentConfig config;
  RunRecord record;
  bool resumed = false;
};

/// One record per cell, cached as <output_dir>/cells/<hash>.json, rows in
/// grid order. Completed cells are reused on rerun.
std::vector<SweepRow> sweep(const SweepGrid& grid);
std::string sweep_csv(const std::vector<SweepRow>& rows);

/// Write via a temporary file and rename.
void write_file_atomic(const std::string& path, const std::string& contents);

/// Kept fraction of each hidden neuron's incoming weights, depth x width.
std::vector<std::vector<double>> neuron_kept_fraction(const ArchSpec& arch, const nnet::Mask& mask);

std::string svg_heatmap(const std::vector<std::vector<double>>& cells, const std::string& title,
                        const std::string& row_label, const std::string& col_label);
struct Series {
  std::string name;
  std::vector<double> values;
};
std::string svg_line_plot(const std::vector<Series>& series, const std::string& title,
                          const std::string& x_label, const std::string& y_label);
/// Depth x sparsity accuracy grid on a linear [0, 1] scale.
std::string svg_accuracy_grid(const std::vector<std::size_t>& depths,
                              const std::vector<double>& sparsities,
                              const std::vector<std::vector<double>>& accuracy,
                              const std::string& title);

}  // namespace edgeprune::exp
