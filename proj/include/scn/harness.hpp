#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "scn/data.hpp"
#include "scn/optim.hpp"
#include "scn/siamese.hpp"

namespace scn {

/// Invalid configuration or command-line input (exit code 2).
class ConfigError : public Error {
 public:
  using Error::Error;
};

struct RunConfig {
  ModelKind model = ModelKind::scn;
  DatasetSource dataset = DatasetSource::synthetic;
  LossKind loss = LossKind::contrastive;
  Metric metric = Metric::euclidean_sq;
  std::optional<double> margin;              // default 2.0 (att, synthetic) / 0.2 (lfw)
  double m_n = 0.2;
  double m_p = 0.5;
  std::optional<std::size_t> routing_iters;  // default 4 (att, synthetic) / 6 (lfw)
  std::size_t epochs = 100;
  std::size_t batch_size = 16;
  std::size_t pairs_per_epoch = 2000;
  std::size_t test_pairs = 400;
  double pos_ratio = 0.5;
  double alpha = 1e-3;
  bool flat_lr = false;
  std::uint64_t seed = 1;
  std::size_t holdout = 5;
  std::size_t kfold_k = 0;  // 0 runs a single holdout split
  std::string output_dir = "run";
  std::string data_dir;     // empty: $SCN_DATA_DIR/<dataset>

  bool reduced = false;
  std::size_t image_size = 100;
  NormalizeAt normalize_at = NormalizeAt::embedding;
  bool detach_routing = false;
  bool batchnorm_primary = false;
  double dropout_rate = 0.2;
  double concrete_temperature = 0.1;
  bool standard_concrete = false;
  bool fixed_pairs = false;  // reuse the first epoch's pairs every epoch
  std::size_t synth_subjects = 40;
  std::size_t synth_per_subject = 10;

  double resolved_margin() const;
  std::size_t resolved_routing_iters() const;
  EncoderConfig encoder() const;
  PairLossConfig pair_loss_config() const;
  AmsGradOptions optimizer() const;

  /// Throws ConfigError naming the first invalid field.
  void validate() const;
};

std::string to_string(DatasetSource s);
DatasetSource parse_dataset(const std::string& s);

/// Sets one field from its textual form. Unknown keys and bad values throw ConfigError.
void apply_setting(RunConfig& cfg, const std::string& key, const std::string& value);
std::vector<std::string> config_keys();

/// Flat `key = value` lines; '#' starts a comment.
std::vector<std::pair<std::string, std::string>> parse_config_text(const std::string& text);
RunConfig load_config_file(const std::filesystem::path& path);

/// Every field in `key = value` form, suitable for load_config_file.
std::string config_echo(const RunConfig& cfg);

/// Resolves the dataset root and loads it. Throws before any model is built when the path is missing.
FaceDataset load_dataset(const RunConfig& cfg);

/// One entry of metrics.csv.
struct EpochMetrics {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double test_loss = 0.0;
  double test_accuracy = 0.0;
  std::int64_t wall_ms = 0;
};

inline constexpr const char* kMetricsHeader = "epoch,train_loss,test_loss,test_accuracy,wall_ms";

std::string format_metrics_row(const EpochMetrics& m);
std::vector<EpochMetrics> read_metrics_csv(const std::filesystem::path& path);

/// Gradient step on one batch of pairs. Returns the batch loss before the update.
double train_step(ModelParams& params, OptimState& state, const RunConfig& cfg, const PairBatch& batch,
                  std::uint64_t noise_seed);

/// Eval-mode distances for a batch, encoded in chunks of `chunk` pairs.
std::vector<double> pair_distances(const ModelParams& params, const RunConfig& cfg, const PairBatch& batch,
                                   std::size_t chunk = 32);

double pair_loss_value(std::span<const double> d, std::span<const int> labels, const PairLossConfig& cfg);

struct TrainResult {
  std::vector<EpochMetrics> epochs;
  ModelParams params;
  double threshold = 0.0;
};

/// Trains on one split, writing metrics.csv, config.txt, final.ckpt and best.ckpt into `dir`.
TrainResult train_split(const RunConfig& cfg, const FaceDataset& ds, const SplitSpec& split,
                        const std::filesystem::path& dir, std::ostream* log = nullptr);

/// Full `train` command, including k-fold runs (fold_<i>/ subdirectories plus cv_summary.csv).
std::vector<TrainResult> cmd_train(const RunConfig& cfg, std::ostream* log = nullptr);

struct Histogram {
  double lo = 0.0;
  double hi = 0.0;
  std::vector<std::size_t> matching;
  std::vector<std::size_t> non_matching;
};

Histogram distance_histogram(std::span<const double> d, std::span<const int> labels, std::size_t bins = 50);

/// Sum over bins of min(p_matching, p_non_matching) with each class normalized to 1.
double overlap_coefficient(const Histogram& h);

struct EvalReport {
  double loss = 0.0;
  double accuracy = 0.0;
  double threshold = 0.0;
  double overlap = 0.0;
  std::size_t n_pairs = 0;
  Histogram histogram;
};

/// Evaluates `params` on the test subjects of the config's split.
EvalReport evaluate_model(const ModelParams& params, const RunConfig& cfg, const FaceDataset& ds,
                          const SplitSpec& split);

/// Loads the checkpoint into a model shaped by `cfg`, writes eval.csv and density.csv into out_dir.
EvalReport cmd_eval(const std::filesystem::path& checkpoint, const RunConfig& cfg,
                    const std::filesystem::path& out_dir);

struct GradcheckEntry {
  std::string layer;
  double max_rel_error = 0.0;
};

inline constexpr double kGradcheckTolerance = 1e-4;

std::vector<GradcheckEntry> run_gradcheck_suite(std::uint64_t seed = 7);

struct GridResult {
  double margin = 0.0;
  Metric metric = Metric::euclidean_sq;
  double final_test_loss = 0.0;
  double final_test_accuracy = 0.0;
};

/// Margins {0.2, 0.5, 1, 2} x metrics; combinations invalid for a metric are skipped.
std::vector<GridResult> cmd_gridsearch(const RunConfig& base, std::ostream* log = nullptr);

std::string render_loss_svg(const std::vector<EpochMetrics>& rows);
void emit_plot(const std::filesystem::path& metrics_csv, const std::filesystem::path& svg_out);

}  // namespace scn
