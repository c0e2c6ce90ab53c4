#include <algorithm>
#include <stdexcept>

#include "scn/ops.hpp"
#include "scn/siamese.hpp"

namespace scn {

std::string to_string(ModelKind k) {
  switch (k) {
    case ModelKind::scn: return "scn";
    case ModelKind::sdropcapnet: return "sdropcapnet";
    case ModelKind::standard: return "standard";
  }
  return "?";
}

std::string to_string(Metric m) {
  switch (m) {
    case Metric::euclidean_sq: return "euclidean_sq";
    case Metric::manhattan_exp: return "manhattan_exp";
    case Metric::cosine: return "cosine";
  }
  return "?";
}

std::string to_string(NormalizeAt n) {
  switch (n) {
    case NormalizeAt::embedding: return "embedding";
    case NormalizeAt::concat: return "concat";
    case NormalizeAt::none: return "none";
  }
  return "?";
}

std::string to_string(LossKind l) { return l == LossKind::contrastive ? "contrastive" : "double_margin"; }

ModelKind parse_model_kind(const std::string& s) {
  if (s == "scn") return ModelKind::scn;
  if (s == "sdropcapnet") return ModelKind::sdropcapnet;
  if (s == "standard") return ModelKind::standard;
  throw Error("unknown model '" + s + "'");
}

Metric parse_metric(const std::string& s) {
  if (s == "euclidean_sq") return Metric::euclidean_sq;
  if (s == "manhattan_exp") return Metric::manhattan_exp;
  if (s == "cosine") return Metric::cosine;
  throw Error("unknown metric '" + s + "'");
}

NormalizeAt parse_normalize_at(const std::string& s) {
  if (s == "embedding") return NormalizeAt::embedding;
  if (s == "concat") return NormalizeAt::concat;
  if (s == "none") return NormalizeAt::none;
  throw Error("unknown normalize_at '" + s + "'");
}

LossKind parse_loss_kind(const std::string& s) {
  if (s == "contrastive") return LossKind::contrastive;
  if (s == "double_margin") return LossKind::double_margin;
  throw Error("unknown loss '" + s + "'");
}

EncoderConfig EncoderConfig::reduced(ModelKind kind) {
  EncoderConfig cfg;
  cfg.kind = kind;
  cfg.conv1_channels = 32;
  cfg.primary_types = 8;
  return cfg;
}

std::size_t EncoderConfig::conv1_output_size() const {
  return conv_output_size(image_size, conv1_kernel, conv1_stride, 0);
}

std::size_t EncoderConfig::primary_grid_size() const {
  return conv_output_size(conv1_output_size(), primary_kernel, primary_stride, 0);
}

std::size_t EncoderConfig::n_lower_caps() const {
  const std::size_t g = primary_grid_size();
  return g * g * primary_types;
}

void EncoderConfig::validate() const {
  if (routing_iters < 1) throw Error("routing_iters must be >= 1");
  if (dropout_rate < 0.0 || dropout_rate >= 1.0) throw Error("dropout_rate must lie in [0, 1)");
  if (!(concrete.temperature > 0.0)) throw Error("concrete temperature must be positive");
  if (!(concrete_init_p > 0.0 && concrete_init_p < 1.0)) throw Error("concrete_init_p must lie in (0, 1)");
  if (kind == ModelKind::standard) {
    const std::size_t c1 = conv1_output_size();
    conv_output_size(c1, std_conv2_kernel, std_conv2_stride, 0);
  } else {
    primary_grid_size();
  }
}

namespace {

template <class Self, class Visit>
void visit_tensors(Self& layers, Visit&& visit) {
  auto conv = [&](const std::string& prefix, auto& c) {
    visit(prefix + ".kernel", c.kernel, false);
    visit(prefix + ".bias", c.bias, false);
  };
  auto bn = [&](const std::string& prefix, auto& b) {
    visit(prefix + ".gamma", b.gamma, false);
    visit(prefix + ".beta", b.beta, false);
    visit(prefix + ".running_mean", b.running_mean, true);
    visit(prefix + ".running_var", b.running_var, true);
  };
  std::visit(
      [&](auto& p) {
        using T = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<T, EncoderParams>) {
          conv("conv1", p.conv1);
          bn("bn1", p.bn1);
          for (std::size_t d = 0; d < p.primary.per_dim.size(); ++d) {
            conv("primary." + std::to_string(d), p.primary.per_dim[d]);
          }
          for (std::size_t d = 0; d < p.primary_bn.size(); ++d) bn("primary_bn." + std::to_string(d), p.primary_bn[d]);
          visit("face.weight", p.face.weight, false);
          visit("fc.weight", p.fc.weight, false);
          visit("fc.bias", p.fc.bias, false);
          if (p.dropout_p) visit("dropout_p", *p.dropout_p, false);
        } else {
          conv("conv1", p.conv1);
          bn("bn1", p.bn1);
          conv("conv2", p.conv2);
          bn("bn2", p.bn2);
          visit("fc.weight", p.fc.weight, false);
          visit("fc.bias", p.fc.bias, false);
        }
      },
      layers);
}

Tensor flatten_rows(const Tensor& x) { return reshape(x, Shape{x.dim(0), x.size() / x.dim(0)}); }

Embedding encode_capsule(const Tensor& images, EncoderParams& p, const EncoderConfig& cfg, Mode mode,
                         SplitMix64& rng) {
  const bool training = mode == Mode::train;
  const std::size_t n = images.dim(0);
  Tensor h = conv2d_forward(images, p.conv1);
  h = relu(batchnorm_forward(h, p.bn1, training));
  h = dropout(h, cfg.dropout_rate, training, rng);

  CapsuleGrid grid = primary_capsules_forward(h, p.primary, p.primary_bn, training);
  grid.poses = dropout(grid.poses, cfg.dropout_rate, training, rng);

  Tensor v = capsule_layer_forward(grid, p.face, cfg.routing_iters, cfg.detach_routing).outputs;  // [N, U, D]
  const std::size_t upper = v.dim(1);

  if (p.dropout_p) {
    const Tensor keep = reshape(*p.dropout_p, Shape{1, upper});
    const Tensor u = training ? concrete_noise(Shape{n, upper}, rng) : Tensor::constant(Shape{1, upper}, 0.5);
    Tensor mask = concrete_dropout_mask(keep, u, cfg.concrete);
    if (mask.dim(0) != n) mask = mul(mask, Tensor::ones(Shape{n, upper}));
    v = mul(v, reshape(mask, Shape{n, upper, 1}));
  }

  Tensor flat = flatten_rows(v);
  if (cfg.normalize_at == NormalizeAt::concat) flat = l2norm(flat, 1);
  Tensor e = dense_forward(flat, p.fc);
  const bool normalize = cfg.normalize_at == NormalizeAt::embedding;
  if (normalize) e = l2norm(e, 1);
  return Embedding{e, normalize};
}

Embedding encode_standard(const Tensor& images, StandardParams& p, const EncoderConfig& cfg, Mode mode,
                          SplitMix64& rng) {
  const bool training = mode == Mode::train;
  Tensor h = relu(batchnorm_forward(conv2d_forward(images, p.conv1), p.bn1, training));
  h = dropout(h, cfg.dropout_rate, training, rng);
  h = relu(batchnorm_forward(conv2d_forward(h, p.conv2), p.bn2, training));
  h = dropout(h, cfg.dropout_rate, training, rng);
  Tensor e = dense_forward(flatten_rows(h), p.fc);
  const bool normalize = cfg.normalize_at != NormalizeAt::none;
  if (normalize) e = l2norm(e, 1);
  return Embedding{e, normalize};
}

}  // namespace

std::vector<NamedTensor> ModelParams::learnables() {
  std::vector<NamedTensor> out;
  visit_tensors(layers_, [&](std::string name, Tensor& t, bool buffer) {
    if (!buffer) out.push_back({std::move(name), &t});
  });
  return out;
}

std::vector<ConstNamedTensor> ModelParams::learnables() const {
  std::vector<ConstNamedTensor> out;
  visit_tensors(layers_, [&](std::string name, const Tensor& t, bool buffer) {
    if (!buffer) out.push_back({std::move(name), &t});
  });
  return out;
}

std::vector<NamedTensor> ModelParams::buffers() {
  std::vector<NamedTensor> out;
  visit_tensors(layers_, [&](std::string name, Tensor& t, bool buffer) {
    if (buffer) out.push_back({std::move(name), &t});
  });
  return out;
}

std::vector<ConstNamedTensor> ModelParams::buffers() const {
  std::vector<ConstNamedTensor> out;
  visit_tensors(layers_, [&](std::string name, const Tensor& t, bool buffer) {
    if (buffer) out.push_back({std::move(name), &t});
  });
  return out;
}

std::size_t ModelParams::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : learnables()) n += p.tensor->size();
  return n;
}

ModelParams ModelParams::bind(Graph& graph) const {
  ModelParams bound = *this;
  for (auto& p : bound.learnables()) *p.tensor = graph.variable(*p.tensor);
  return bound;
}

void ModelParams::take_buffers(const ModelParams& bound) {
  auto mine = buffers();
  auto theirs = bound.buffers();
  if (mine.size() != theirs.size()) throw Error("take_buffers: parameter layouts differ");
  for (std::size_t i = 0; i < mine.size(); ++i) *mine[i].tensor = theirs[i].tensor->detach();
}

void ModelParams::project(double p_lo, double p_hi) {
  if (!is_capsule() || !capsule().dropout_p) return;
  for (auto& x : capsule().dropout_p->mutable_data()) x = std::clamp(x, p_lo, p_hi);
}

ModelParams init_model(const EncoderConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  if (cfg.kind == ModelKind::standard) {
    StandardParams p;
    p.conv1 = init_conv2d(1, cfg.std_conv1_channels, cfg.conv1_kernel, cfg.conv1_stride, 0, mix_seed(seed, 1));
    p.bn1 = init_batchnorm(cfg.std_conv1_channels);
    p.conv2 = init_conv2d(cfg.std_conv1_channels, cfg.std_conv2_channels, cfg.std_conv2_kernel, cfg.std_conv2_stride,
                          0, mix_seed(seed, 2));
    p.bn2 = init_batchnorm(cfg.std_conv2_channels);
    const std::size_t g = conv_output_size(cfg.conv1_output_size(), cfg.std_conv2_kernel, cfg.std_conv2_stride, 0);
    p.fc = init_dense(cfg.std_conv2_channels * g * g, cfg.embed_dim, mix_seed(seed, 3));
    return ModelParams(std::move(p));
  }
  EncoderParams p;
  p.conv1 = init_conv2d(1, cfg.conv1_channels, cfg.conv1_kernel, cfg.conv1_stride, 0, mix_seed(seed, 1));
  p.bn1 = init_batchnorm(cfg.conv1_channels);
  p.primary = init_primary_capsules(cfg.conv1_channels, cfg.primary_types, cfg.primary_dim, cfg.primary_kernel,
                                    cfg.primary_stride, mix_seed(seed, 2));
  if (cfg.batchnorm_primary) {
    for (std::size_t d = 0; d < cfg.primary_dim; ++d) p.primary_bn.push_back(init_batchnorm(cfg.primary_types));
  }
  p.face = init_capsule_layer(cfg.n_lower_caps(), cfg.face_caps, cfg.primary_dim, cfg.face_dim, cfg.activation,
                              mix_seed(seed, 3));
  p.fc = init_dense(cfg.face_caps * cfg.face_dim, cfg.embed_dim, mix_seed(seed, 4));
  if (cfg.kind == ModelKind::sdropcapnet) p.dropout_p = Tensor::constant(Shape{cfg.face_caps}, cfg.concrete_init_p);
  return ModelParams(std::move(p));
}

Embedding encode(const Tensor& images, ModelParams& params, const EncoderConfig& cfg, Mode mode, SplitMix64& rng) {
  if (images.rank() != 4 || images.dim(1) != 1 || images.dim(2) != cfg.image_size ||
      images.dim(3) != cfg.image_size) {
    throw Error("encode: expected images [N,1," + std::to_string(cfg.image_size) + "," +
                std::to_string(cfg.image_size) + "], got " + to_string(images.shape()));
  }
  if (params.is_capsule()) return encode_capsule(images, params.capsule(), cfg, mode, rng);
  return encode_standard(images, params.standard(), cfg, mode, rng);
}

}  // namespace scn
