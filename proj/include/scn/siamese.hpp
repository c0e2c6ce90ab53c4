#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "scn/capsules.hpp"
#include "scn/layers.hpp"
#include "scn/random.hpp"
#include "scn/tensor.hpp"

namespace scn {

enum class ModelKind { scn, sdropcapnet, standard };
enum class Metric { euclidean_sq, manhattan_exp, cosine };
enum class NormalizeAt { embedding, concat, none };
enum class LossKind { contrastive, double_margin };
enum class Mode { train, eval };

std::string to_string(ModelKind k);
std::string to_string(Metric m);
std::string to_string(NormalizeAt n);
std::string to_string(LossKind l);
ModelKind parse_model_kind(const std::string& s);
Metric parse_metric(const std::string& s);
NormalizeAt parse_normalize_at(const std::string& s);
LossKind parse_loss_kind(const std::string& s);

struct EncoderConfig {
  ModelKind kind = ModelKind::scn;
  std::size_t image_size = 100;

  std::size_t conv1_channels = 256;
  std::size_t conv1_kernel = 9;
  std::size_t conv1_stride = 3;
  std::size_t primary_types = 32;
  std::size_t primary_dim = 8;
  std::size_t primary_kernel = 9;
  std::size_t primary_stride = 3;
  std::size_t face_caps = 32;
  std::size_t face_dim = 16;
  std::size_t embed_dim = 20;
  std::size_t routing_iters = 4;
  CapsuleActivation activation = CapsuleActivation::tanh;
  NormalizeAt normalize_at = NormalizeAt::embedding;
  bool detach_routing = false;
  bool batchnorm_primary = false;

  double dropout_rate = 0.2;
  ConcreteDropoutOptions concrete{};
  double concrete_init_p = 0.9;

  // Standard baseline: conv-bn-relu, conv-bn-relu, dense.
  std::size_t std_conv1_channels = 32;
  std::size_t std_conv2_channels = 64;
  std::size_t std_conv2_kernel = 5;
  std::size_t std_conv2_stride = 2;

  /// Reduced widths for desk-scale runs: 32 conv channels, 8 primary types.
  static EncoderConfig reduced(ModelKind kind);

  std::size_t conv1_output_size() const;
  std::size_t primary_grid_size() const;
  std::size_t n_lower_caps() const;
  void validate() const;
};

/// Learnable tensors of the capsule encoder.
struct EncoderParams {
  Conv2dParams conv1;
  BatchNormParams bn1;
  PrimaryCapsuleParams primary;
  std::vector<BatchNormParams> primary_bn;  // empty unless batchnorm_primary
  CapsuleLayerParams face;
  DenseParams fc;
  std::optional<Tensor> dropout_p;  // [face_caps], SDropCapNet only
};

struct StandardParams {
  Conv2dParams conv1;
  BatchNormParams bn1;
  Conv2dParams conv2;
  BatchNormParams bn2;
  DenseParams fc;
};

struct NamedTensor {
  std::string name;
  Tensor* tensor;
};

struct ConstNamedTensor {
  std::string name;
  const Tensor* tensor;
};

/// Parameters of either encoder family with stable, ordered names.
class ModelParams {
 public:
  ModelParams() = default;
  explicit ModelParams(EncoderParams p) : layers_(std::move(p)) {}
  explicit ModelParams(StandardParams p) : layers_(std::move(p)) {}

  bool is_capsule() const { return std::holds_alternative<EncoderParams>(layers_); }
  EncoderParams& capsule() { return std::get<EncoderParams>(layers_); }
  const EncoderParams& capsule() const { return std::get<EncoderParams>(layers_); }
  StandardParams& standard() { return std::get<StandardParams>(layers_); }
  const StandardParams& standard() const { return std::get<StandardParams>(layers_); }

  std::vector<NamedTensor> learnables();
  std::vector<ConstNamedTensor> learnables() const;
  std::vector<NamedTensor> buffers();
  std::vector<ConstNamedTensor> buffers() const;

  std::size_t parameter_count() const;

  /// Copy whose learnables are leaves of the graph.
  ModelParams bind(Graph& graph) const;
  /// Takes running statistics from a bound copy after a forward pass.
  void take_buffers(const ModelParams& bound);
  /// Projects constrained parameters back into their domain after an update.
  void project(double p_lo = 1e-3, double p_hi = 1.0 - 1e-3);

 private:
  std::variant<EncoderParams, StandardParams> layers_;
};

ModelParams init_model(const EncoderConfig& cfg, std::uint64_t seed);

struct Embedding {
  Tensor vec;  // [N, embed_dim]
  bool normalized = false;
};

/// images: [N, 1, S, S] in [0, 1]. Running statistics of `params` are updated in train mode.
Embedding encode(const Tensor& images, ModelParams& params, const EncoderConfig& cfg, Mode mode, SplitMix64& rng);

/// [N] distances (or the exp-similarity for manhattan_exp).
Tensor distance(const Embedding& a, const Embedding& b, Metric metric);
Tensor distance(const Tensor& a, const Tensor& b, Metric metric);

/// Mean over the batch of (1-y)/2 * D + y/2 * max(0, m - D). y = 0 marks matching pairs.
Tensor contrastive_loss(const Tensor& d, std::span<const int> labels, double margin);

/// Mean over the batch of (1-y) max(0, D - m_n)^2 + y max(m_p - D, 0)^2.
Tensor double_margin_loss(const Tensor& d, std::span<const int> labels, double m_n, double m_p);

/// Capsule classification margin loss; summed over classes, averaged over the batch.
Tensor margin_loss(const Tensor& v, std::span<const std::size_t> targets, double m_plus = 0.9, double lambda = 0.5);

/// Spread loss over activations [N, n_class]; summed over wrong classes, averaged over the batch.
Tensor spread_loss(const Tensor& a, std::span<const std::size_t> targets, double margin);

/// Linear margin schedule: 0.2 at step 0, 0.9 from step `total` on.
double spread_margin_schedule(std::size_t step, std::size_t total);

struct PairLossConfig {
  LossKind kind = LossKind::contrastive;
  Metric metric = Metric::euclidean_sq;
  double margin = 2.0;
  double m_n = 0.2;
  double m_p = 0.5;

  void validate() const;
};

/// Loss on raw metric output. For manhattan_exp the similarity is mapped to 1 - D first.
Tensor pair_loss(const Tensor& d, std::span<const int> labels, const PairLossConfig& cfg);

std::vector<bool> predict_match(std::span<const double> d, double threshold, Metric metric);

struct ThresholdChoice {
  double threshold = 0.0;
  double accuracy = 0.0;
};

double match_accuracy(std::span<const double> d, std::span<const int> labels, double threshold, Metric metric);

/// Exhaustive sweep of `points` thresholds spanning [min D, max D]; ties keep the first.
ThresholdChoice select_threshold(std::span<const double> d, std::span<const int> labels, Metric metric,
                                 std::size_t points = 101);

}  // namespace scn
