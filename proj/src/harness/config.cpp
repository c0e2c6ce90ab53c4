#include <algorithm>
#include <charconv>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <sstream>

#include "scn/harness.hpp"

namespace scn {
namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

double to_double(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  double x = 0.0;
  try {
    x = std::stod(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != v.size() || v.empty()) throw ConfigError(key + ": expected a number, got '" + v + "'");
  return x;
}

std::uint64_t to_uint(const std::string& key, const std::string& v) {
  if (v.empty() || !std::all_of(v.begin(), v.end(), [](unsigned char c) { return std::isdigit(c); })) {
    throw ConfigError(key + ": expected a non-negative integer, got '" + v + "'");
  }
  try {
    return std::stoull(v);
  } catch (const std::exception&) {
    throw ConfigError(key + ": integer out of range '" + v + "'");
  }
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError(key + ": expected true or false, got '" + v + "'");
}

// Shortest text that parses back to the same double.
std::string fmt(double x) {
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, r.ptr);
}

template <class Parse>
auto parse_enum(const std::string& key, const std::string& v, Parse parse) {
  try {
    return parse(v);
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(key + ": " + e.what());
  }
}

}  // namespace

std::string to_string(DatasetSource s) {
  switch (s) {
    case DatasetSource::att: return "att";
    case DatasetSource::lfw: return "lfw";
    case DatasetSource::synthetic: return "synthetic";
  }
  return "?";
}

DatasetSource parse_dataset(const std::string& s) {
  if (s == "att") return DatasetSource::att;
  if (s == "lfw") return DatasetSource::lfw;
  if (s == "synthetic") return DatasetSource::synthetic;
  throw ConfigError("unknown dataset '" + s + "' (expected att, synthetic or lfw)");
}

double RunConfig::resolved_margin() const {
  if (margin) return *margin;
  return dataset == DatasetSource::lfw ? 0.2 : 2.0;
}

std::size_t RunConfig::resolved_routing_iters() const {
  if (routing_iters) return *routing_iters;
  return dataset == DatasetSource::lfw ? 6 : 4;
}

EncoderConfig RunConfig::encoder() const {
  EncoderConfig e = reduced ? EncoderConfig::reduced(model) : EncoderConfig{};
  e.kind = model;
  e.image_size = image_size;
  e.routing_iters = resolved_routing_iters();
  e.normalize_at = normalize_at;
  e.detach_routing = detach_routing;
  e.batchnorm_primary = batchnorm_primary;
  e.dropout_rate = dropout_rate;
  e.concrete.temperature = concrete_temperature;
  e.concrete.standard_form = standard_concrete;
  return e;
}

PairLossConfig RunConfig::pair_loss_config() const {
  PairLossConfig p;
  p.kind = loss;
  p.metric = metric;
  p.margin = resolved_margin();
  p.m_n = m_n;
  p.m_p = m_p;
  return p;
}

AmsGradOptions RunConfig::optimizer() const {
  AmsGradOptions o;
  o.alpha = alpha;
  o.flat_lr = flat_lr;
  return o;
}

void RunConfig::validate() const {
  if (epochs == 0) throw ConfigError("epochs must be >= 1");
  // Batch normalization needs at least two samples per batch.
  if (batch_size < 2) throw ConfigError("batch_size must be >= 2");
  if (pairs_per_epoch < 2) throw ConfigError("pairs_per_epoch must be >= 2");
  if (!(pos_ratio >= 0.0 && pos_ratio <= 1.0)) throw ConfigError("pos_ratio must lie in [0, 1]");
  if (!(alpha > 0.0)) throw ConfigError("alpha must be positive");
  if (kfold_k == 1) throw ConfigError("kfold_k must be 0 (off) or >= 2");
  if (image_size < 2) throw ConfigError("image_size must be >= 2");
  if (output_dir.empty()) throw ConfigError("output_dir must not be empty");
  if (dataset == DatasetSource::synthetic && synth_per_subject < 2) {
    throw ConfigError("synth_per_subject must be >= 2");
  }
  if (dataset == DatasetSource::synthetic && holdout >= synth_subjects && kfold_k == 0) {
    throw ConfigError("holdout must be smaller than synth_subjects");
  }
  try {
    encoder().validate();
    pair_loss_config().validate();
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
}

namespace {

using Setter = std::function<void(RunConfig&, const std::string&, const std::string&)>;

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> setters =
      {
          {"model", [](RunConfig& c, const auto& k, const auto& v) { c.model = parse_enum(k, v, parse_model_kind); }},
          {"dataset", [](RunConfig& c, const auto&, const auto& v) { c.dataset = parse_dataset(v); }},
          {"loss", [](RunConfig& c, const auto& k, const auto& v) { c.loss = parse_enum(k, v, parse_loss_kind); }},
          {"metric", [](RunConfig& c, const auto& k, const auto& v) { c.metric = parse_enum(k, v, parse_metric); }},
          {"margin", [](RunConfig& c, const auto& k, const auto& v) { c.margin = to_double(k, v); }},
          {"m_n", [](RunConfig& c, const auto& k, const auto& v) { c.m_n = to_double(k, v); }},
          {"m_p", [](RunConfig& c, const auto& k, const auto& v) { c.m_p = to_double(k, v); }},
          {"routing_iters", [](RunConfig& c, const auto& k, const auto& v) { c.routing_iters = to_uint(k, v); }},
          {"epochs", [](RunConfig& c, const auto& k, const auto& v) { c.epochs = to_uint(k, v); }},
          {"batch_size", [](RunConfig& c, const auto& k, const auto& v) { c.batch_size = to_uint(k, v); }},
          {"pairs_per_epoch", [](RunConfig& c, const auto& k, const auto& v) { c.pairs_per_epoch = to_uint(k, v); }},
          {"test_pairs", [](RunConfig& c, const auto& k, const auto& v) { c.test_pairs = to_uint(k, v); }},
          {"pos_ratio", [](RunConfig& c, const auto& k, const auto& v) { c.pos_ratio = to_double(k, v); }},
          {"alpha", [](RunConfig& c, const auto& k, const auto& v) { c.alpha = to_double(k, v); }},
          {"flat_lr", [](RunConfig& c, const auto& k, const auto& v) { c.flat_lr = to_bool(k, v); }},
          {"seed", [](RunConfig& c, const auto& k, const auto& v) { c.seed = to_uint(k, v); }},
          {"holdout", [](RunConfig& c, const auto& k, const auto& v) { c.holdout = to_uint(k, v); }},
          {"kfold_k", [](RunConfig& c, const auto& k, const auto& v) { c.kfold_k = to_uint(k, v); }},
          {"output_dir", [](RunConfig& c, const auto&, const auto& v) { c.output_dir = v; }},
          {"data_dir", [](RunConfig& c, const auto&, const auto& v) { c.data_dir = v; }},
          {"reduced", [](RunConfig& c, const auto& k, const auto& v) { c.reduced = to_bool(k, v); }},
          {"image_size", [](RunConfig& c, const auto& k, const auto& v) { c.image_size = to_uint(k, v); }},
          {"normalize_at",
           [](RunConfig& c, const auto& k, const auto& v) { c.normalize_at = parse_enum(k, v, parse_normalize_at); }},
          {"detach_routing", [](RunConfig& c, const auto& k, const auto& v) { c.detach_routing = to_bool(k, v); }},
          {"batchnorm_primary",
           [](RunConfig& c, const auto& k, const auto& v) { c.batchnorm_primary = to_bool(k, v); }},
          {"dropout_rate", [](RunConfig& c, const auto& k, const auto& v) { c.dropout_rate = to_double(k, v); }},
          {"concrete_temperature",
           [](RunConfig& c, const auto& k, const auto& v) { c.concrete_temperature = to_double(k, v); }},
          {"standard_concrete",
           [](RunConfig& c, const auto& k, const auto& v) { c.standard_concrete = to_bool(k, v); }},
          {"fixed_pairs", [](RunConfig& c, const auto& k, const auto& v) { c.fixed_pairs = to_bool(k, v); }},
          {"synth_subjects", [](RunConfig& c, const auto& k, const auto& v) { c.synth_subjects = to_uint(k, v); }},
          {"synth_per_subject",
           [](RunConfig& c, const auto& k, const auto& v) { c.synth_per_subject = to_uint(k, v); }},
      };
  return setters;
}

}  // namespace

std::vector<std::string> config_keys() {
  std::vector<std::string> keys;
  for (const auto& [k, _] : setters()) keys.push_back(k);
  return keys;
}

void apply_setting(RunConfig& c, const std::string& key, const std::string& raw) {
  const std::string v = trim(raw);
  auto it = setters().find(key);
  if (it == setters().end()) throw ConfigError("unknown config key '" + key + "'");
  it->second(c, key, v);
}

std::vector<std::pair<std::string, std::string>> parse_config_text(const std::string& text) {
  std::vector<std::pair<std::string, std::string>> out;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(lineno) + ": expected 'key = value'");
    }
    std::string key = trim(line.substr(0, eq));
    if (key.empty()) throw ConfigError("config line " + std::to_string(lineno) + ": empty key");
    out.emplace_back(std::move(key), trim(line.substr(eq + 1)));
  }
  return out;
}

RunConfig load_config_file(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot read config file " + path.string());
  std::stringstream buf;
  buf << f.rdbuf();
  RunConfig cfg;
  for (const auto& [k, v] : parse_config_text(buf.str())) apply_setting(cfg, k, v);
  return cfg;
}

std::string config_echo(const RunConfig& c) {
  std::ostringstream os;
  auto b = [](bool x) { return x ? "true" : "false"; };
  os << "model = " << to_string(c.model) << "\n"
     << "dataset = " << to_string(c.dataset) << "\n"
     << "loss = " << to_string(c.loss) << "\n"
     << "metric = " << to_string(c.metric) << "\n"
     << "margin = " << fmt(c.resolved_margin()) << "\n"
     << "m_n = " << fmt(c.m_n) << "\n"
     << "m_p = " << fmt(c.m_p) << "\n"
     << "routing_iters = " << c.resolved_routing_iters() << "\n"
     << "epochs = " << c.epochs << "\n"
     << "batch_size = " << c.batch_size << "\n"
     << "pairs_per_epoch = " << c.pairs_per_epoch << "\n"
     << "test_pairs = " << c.test_pairs << "\n"
     << "pos_ratio = " << fmt(c.pos_ratio) << "\n"
     << "alpha = " << fmt(c.alpha) << "\n"
     << "flat_lr = " << b(c.flat_lr) << "\n"
     << "seed = " << c.seed << "\n"
     << "holdout = " << c.holdout << "\n"
     << "kfold_k = " << c.kfold_k << "\n"
     << "output_dir = " << c.output_dir << "\n"
     << "data_dir = " << c.data_dir << "\n"
     << "reduced = " << b(c.reduced) << "\n"
     << "image_size = " << c.image_size << "\n"
     << "normalize_at = " << to_string(c.normalize_at) << "\n"
     << "detach_routing = " << b(c.detach_routing) << "\n"
     << "batchnorm_primary = " << b(c.batchnorm_primary) << "\n"
     << "dropout_rate = " << fmt(c.dropout_rate) << "\n"
     << "concrete_temperature = " << fmt(c.concrete_temperature) << "\n"
     << "standard_concrete = " << b(c.standard_concrete) << "\n"
     << "fixed_pairs = " << b(c.fixed_pairs) << "\n"
     << "synth_subjects = " << c.synth_subjects << "\n"
     << "synth_per_subject = " << c.synth_per_subject << "\n";
  return os.str();
}

FaceDataset load_dataset(const RunConfig& cfg) {
  if (cfg.dataset == DatasetSource::synthetic) {
    return synth_dataset(cfg.synth_subjects, cfg.synth_per_subject, mix_seed(cfg.seed, 0x5e7), cfg.image_size);
  }
  std::filesystem::path root = cfg.data_dir;
  if (root.empty()) {
    const char* env = std::getenv("SCN_DATA_DIR");
    if (!env || !*env) {
      throw ConfigError("dataset " + to_string(cfg.dataset) + " needs data_dir or the SCN_DATA_DIR environment variable");
    }
    root = std::filesystem::path(env) / to_string(cfg.dataset);
  }
  if (!std::filesystem::is_directory(root)) {
    throw ConfigError("dataset directory not found: " + root.string());
  }
  return cfg.dataset == DatasetSource::att ? load_orl(root, cfg.image_size) : load_lfw(root, cfg.image_size);
}

}  // namespace scn
