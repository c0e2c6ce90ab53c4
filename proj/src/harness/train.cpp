#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>

#include "scn/checkpoint.hpp"
#include "scn/harness.hpp"
#include "scn/ops.hpp"

namespace scn {
namespace {

namespace fs = std::filesystem;

// Stream tags for mix_seed.
constexpr std::uint64_t kTagModel = 0xA11;
constexpr std::uint64_t kTagSplit = 0x5917;
constexpr std::uint64_t kTagTestPairs = 0x7E57;
constexpr std::uint64_t kTagValPairs = 0x7A1;
constexpr std::uint64_t kTagEpochPairs = 0xE90C;
constexpr std::uint64_t kTagNoise = 0x90153;

Tensor rows(const Tensor& t, std::size_t begin, std::size_t end) {
  const std::size_t stride = t.size() / t.dim(0);
  Shape s = t.shape();
  s[0] = end - begin;
  auto src = t.data().subspan(begin * stride, (end - begin) * stride);
  return Tensor(s, std::vector<double>(src.begin(), src.end()));
}

PairBatch batch_slice(const FaceDataset& ds, const std::vector<PairIndex>& pairs, std::size_t begin,
                      std::size_t end) {
  return make_batch(ds, std::span<const PairIndex>(pairs).subspan(begin, end - begin));
}

std::string fmt_g(double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.9g", x);
  return buf;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw Error("cannot write " + path.string());
  f << text;
}

struct EvalSet {
  PairBatch batch;
  bool empty = true;
};

EvalSet sample_eval_set(const FaceDataset& ds, const std::vector<int>& subjects, std::size_t n, double pos_ratio,
                        std::uint64_t seed) {
  EvalSet s;
  if (subjects.empty() || n == 0) return s;
  s.batch = sample_pairs(ds, subjects, n, pos_ratio, seed);
  s.empty = false;
  return s;
}

std::vector<std::pair<std::size_t, std::size_t>> batch_ranges(std::size_t n, std::size_t batch) {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  for (std::size_t b = 0; b < n; b += batch) out.emplace_back(b, std::min(n, b + batch));
  // Batchnorm needs two samples; fold a lone trailing pair into the previous batch.
  if (out.size() > 1 && out.back().second - out.back().first < 2) {
    out[out.size() - 2].second = out.back().second;
    out.pop_back();
  }
  return out;
}

}  // namespace

std::string format_metrics_row(const EpochMetrics& m) {
  return std::to_string(m.epoch) + "," + fmt_g(m.train_loss) + "," + fmt_g(m.test_loss) + "," +
         fmt_g(m.test_accuracy) + "," + std::to_string(m.wall_ms);
}

std::vector<EpochMetrics> read_metrics_csv(const fs::path& path) {
  std::ifstream f(path);
  if (!f) throw Error("cannot read " + path.string());
  std::string line;
  if (!std::getline(f, line) || line != kMetricsHeader) {
    throw Error(path.string() + ": expected header '" + std::string(kMetricsHeader) + "'");
  }
  std::vector<EpochMetrics> out;
  std::size_t lineno = 1;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> cols;
    std::stringstream ss(line);
    for (std::string c; std::getline(ss, c, ',');) cols.push_back(c);
    if (cols.size() != 5) throw Error(path.string() + ": line " + std::to_string(lineno) + " has the wrong arity");
    try {
      out.push_back({std::stoul(cols[0]), std::stod(cols[1]), std::stod(cols[2]), std::stod(cols[3]),
                     std::stoll(cols[4])});
    } catch (const std::exception&) {
      throw Error(path.string() + ": line " + std::to_string(lineno) + " is not numeric");
    }
  }
  if (out.empty()) throw Error(path.string() + ": metrics file has no rows");
  return out;
}

double train_step(ModelParams& params, OptimState& state, const RunConfig& cfg, const PairBatch& batch,
                  std::uint64_t noise_seed) {
  const EncoderConfig enc = cfg.encoder();
  Graph graph;
  ModelParams bound = params.bind(graph);
  SplitMix64 rng(noise_seed);
  const Embedding a = encode(batch.left, bound, enc, Mode::train, rng);
  const Embedding b = encode(batch.right, bound, enc, Mode::train, rng);
  const Tensor loss = pair_loss(distance(a, b, cfg.metric), batch.labels, cfg.pair_loss_config());
  const Gradients grads = backward(loss);

  std::vector<Tensor> g;
  for (const auto& p : bound.learnables()) g.push_back(grads.wrt(*p.tensor));
  std::vector<Tensor*> w;
  for (const auto& p : params.learnables()) w.push_back(p.tensor);
  amsgrad_step(w, g, state, cfg.optimizer());
  params.take_buffers(bound);
  params.project();
  return loss.item();
}

std::vector<double> pair_distances(const ModelParams& params, const RunConfig& cfg, const PairBatch& batch,
                                   std::size_t chunk) {
  const EncoderConfig enc = cfg.encoder();
  ModelParams local = params;
  SplitMix64 rng(0);
  std::vector<double> out;
  out.reserve(batch.size());
  for (std::size_t b = 0; b < batch.size(); b += chunk) {
    const std::size_t e = std::min(batch.size(), b + chunk);
    const Embedding l = encode(rows(batch.left, b, e), local, enc, Mode::eval, rng);
    const Embedding r = encode(rows(batch.right, b, e), local, enc, Mode::eval, rng);
    const Tensor d = distance(l, r, cfg.metric);
    out.insert(out.end(), d.data().begin(), d.data().end());
  }
  return out;
}

double pair_loss_value(std::span<const double> d, std::span<const int> labels, const PairLossConfig& cfg) {
  return pair_loss(Tensor(Shape{d.size()}, std::vector<double>(d.begin(), d.end())), labels, cfg).item();
}

TrainResult train_split(const RunConfig& cfg, const FaceDataset& ds, const SplitSpec& split, const fs::path& dir,
                        std::ostream* log) {
  cfg.validate();
  if (split.train_subjects.empty()) throw Error("split has no training subjects");
  fs::create_directories(dir);
  write_text(dir / "config.txt", config_echo(cfg));

  const EncoderConfig enc = cfg.encoder();
  TrainResult result;
  result.params = init_model(enc, mix_seed(cfg.seed, kTagModel));
  OptimState state;
  const PairLossConfig loss_cfg = cfg.pair_loss_config();

  const EvalSet test =
      sample_eval_set(ds, split.test_subjects, cfg.test_pairs, cfg.pos_ratio, mix_seed(cfg.seed, kTagTestPairs));

  std::ofstream metrics(dir / "metrics.csv", std::ios::trunc);
  if (!metrics) throw Error("cannot write " + (dir / "metrics.csv").string());
  metrics << kMetricsHeader << "\n";

  // The first tenth of each epoch's pairs is held back to choose the accuracy threshold.
  const std::size_t n_val = cfg.pairs_per_epoch >= 20 ? cfg.pairs_per_epoch / 10 : 0;
  double best = std::numeric_limits<double>::infinity();
  std::uint64_t step = 0;
  std::vector<PairIndex> pairs;

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    if (epoch == 1 || !cfg.fixed_pairs) {
      pairs = sample_pair_indices(ds, split.train_subjects, cfg.pairs_per_epoch, cfg.pos_ratio,
                                  mix_seed(mix_seed(cfg.seed, kTagEpochPairs), epoch));
    }
    double loss_sum = 0.0;
    std::size_t seen = 0;
    for (auto [b, e] : batch_ranges(pairs.size() - n_val, cfg.batch_size)) {
      const PairBatch batch = batch_slice(ds, pairs, n_val + b, n_val + e);
      const double l = train_step(result.params, state, cfg, batch, mix_seed(mix_seed(cfg.seed, kTagNoise), ++step));
      loss_sum += l * static_cast<double>(batch.size());
      seen += batch.size();
    }

    EpochMetrics row;
    row.epoch = epoch;
    row.train_loss = loss_sum / static_cast<double>(seen);

    const PairBatch val = n_val > 0 ? batch_slice(ds, pairs, 0, n_val) : batch_slice(ds, pairs, 0, pairs.size());
    const auto val_d = pair_distances(result.params, cfg, val);
    result.threshold = select_threshold(val_d, val.labels, cfg.metric).threshold;

    if (!test.empty) {
      const auto d = pair_distances(result.params, cfg, test.batch);
      row.test_loss = pair_loss_value(d, test.batch.labels, loss_cfg);
      row.test_accuracy = match_accuracy(d, test.batch.labels, result.threshold, cfg.metric);
    } else {
      row.test_loss = std::numeric_limits<double>::quiet_NaN();
      row.test_accuracy = std::numeric_limits<double>::quiet_NaN();
    }
    row.wall_ms =
        std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - t0).count();

    metrics << format_metrics_row(row) << "\n" << std::flush;
    result.epochs.push_back(row);
    if (log) {
      *log << "epoch " << epoch << "/" << cfg.epochs << " train_loss " << fmt_g(row.train_loss) << " test_loss "
           << fmt_g(row.test_loss) << " test_accuracy " << fmt_g(row.test_accuracy) << " (" << row.wall_ms
           << " ms)\n";
    }

    const double score = test.empty ? row.train_loss : row.test_loss;
    if (score < best) {
      best = score;
      save_checkpoint(result.params, &state, dir / "best.ckpt");
    }
  }
  save_checkpoint(result.params, &state, dir / "final.ckpt");
  return result;
}

std::vector<TrainResult> cmd_train(const RunConfig& cfg, std::ostream* log) {
  cfg.validate();
  const FaceDataset ds = load_dataset(cfg);
  const fs::path out(cfg.output_dir);
  fs::create_directories(out);

  std::vector<TrainResult> results;
  if (cfg.kfold_k == 0) {
    const SplitSpec split = split_subjects(ds, cfg.holdout, mix_seed(cfg.seed, kTagSplit));
    results.push_back(train_split(cfg, ds, split, out, log));
    return results;
  }

  const auto folds = kfold(ds, cfg.kfold_k, mix_seed(cfg.seed, kTagSplit));
  std::ofstream summary(out / "cv_summary.csv", std::ios::trunc);
  summary << "fold,train_loss,test_loss,test_accuracy\n";
  double sum_train = 0.0, sum_test = 0.0, sum_acc = 0.0;
  for (std::size_t f = 0; f < folds.size(); ++f) {
    if (log) *log << "fold " << f + 1 << "/" << folds.size() << "\n";
    results.push_back(train_split(cfg, ds, folds[f], out / ("fold_" + std::to_string(f + 1)), log));
    const auto& last = results.back().epochs.back();
    summary << f + 1 << "," << fmt_g(last.train_loss) << "," << fmt_g(last.test_loss) << ","
            << fmt_g(last.test_accuracy) << "\n";
    sum_train += last.train_loss;
    sum_test += last.test_loss;
    sum_acc += last.test_accuracy;
  }
  const double k = static_cast<double>(folds.size());
  summary << "mean," << fmt_g(sum_train / k) << "," << fmt_g(sum_test / k) << "," << fmt_g(sum_acc / k) << "\n";
  return results;
}

Histogram distance_histogram(std::span<const double> d, std::span<const int> labels, std::size_t bins) {
  if (d.size() != labels.size()) throw Error("histogram: size mismatch");
  if (bins == 0) throw Error("histogram: bins must be >= 1");
  Histogram h;
  h.matching.assign(bins, 0);
  h.non_matching.assign(bins, 0);
  if (d.empty()) return h;
  h.lo = *std::min_element(d.begin(), d.end());
  h.hi = *std::max_element(d.begin(), d.end());
  const double width = h.hi > h.lo ? (h.hi - h.lo) / static_cast<double>(bins) : 1.0;
  for (std::size_t i = 0; i < d.size(); ++i) {
    auto b = static_cast<std::size_t>((d[i] - h.lo) / width);
    b = std::min(b, bins - 1);
    (labels[i] == 0 ? h.matching : h.non_matching)[b] += 1;
  }
  return h;
}

double overlap_coefficient(const Histogram& h) {
  double nm = 0.0, nn = 0.0;
  for (auto c : h.matching) nm += static_cast<double>(c);
  for (auto c : h.non_matching) nn += static_cast<double>(c);
  if (nm == 0.0 || nn == 0.0) return 0.0;
  double ov = 0.0;
  for (std::size_t b = 0; b < h.matching.size(); ++b) {
    ov += std::min(static_cast<double>(h.matching[b]) / nm, static_cast<double>(h.non_matching[b]) / nn);
  }
  return ov;
}

EvalReport evaluate_model(const ModelParams& params, const RunConfig& cfg, const FaceDataset& ds,
                          const SplitSpec& split) {
  const auto& eval_subjects = split.test_subjects.empty() ? split.train_subjects : split.test_subjects;
  const std::size_t n_val = std::max<std::size_t>(cfg.pairs_per_epoch / 10, 20);
  const EvalSet val =
      sample_eval_set(ds, split.train_subjects, n_val, cfg.pos_ratio, mix_seed(cfg.seed, kTagValPairs));
  const EvalSet test =
      sample_eval_set(ds, eval_subjects, cfg.test_pairs, cfg.pos_ratio, mix_seed(cfg.seed, kTagTestPairs));
  if (test.empty) throw Error("no subjects to evaluate on");

  EvalReport r;
  if (!val.empty) {
    const auto vd = pair_distances(params, cfg, val.batch);
    r.threshold = select_threshold(vd, val.batch.labels, cfg.metric).threshold;
  }
  const auto d = pair_distances(params, cfg, test.batch);
  r.loss = pair_loss_value(d, test.batch.labels, cfg.pair_loss_config());
  r.accuracy = match_accuracy(d, test.batch.labels, r.threshold, cfg.metric);
  r.histogram = distance_histogram(d, test.batch.labels, 50);
  r.overlap = overlap_coefficient(r.histogram);
  r.n_pairs = d.size();
  return r;
}

EvalReport cmd_eval(const fs::path& checkpoint, const RunConfig& cfg, const fs::path& out_dir) {
  cfg.validate();
  const FaceDataset ds = load_dataset(cfg);
  ModelParams params = init_model(cfg.encoder(), mix_seed(cfg.seed, kTagModel));
  load_checkpoint(checkpoint, params, nullptr);

  SplitSpec split;
  if (cfg.kfold_k == 0) {
    split = split_subjects(ds, cfg.holdout, mix_seed(cfg.seed, kTagSplit));
  } else {
    split = kfold(ds, cfg.kfold_k, mix_seed(cfg.seed, kTagSplit)).front();
  }
  const EvalReport r = evaluate_model(params, cfg, ds, split);

  fs::create_directories(out_dir);
  write_text(out_dir / "eval.csv", "loss,accuracy,threshold,overlap,n_pairs\n" + fmt_g(r.loss) + "," +
                                       fmt_g(r.accuracy) + "," + fmt_g(r.threshold) + "," + fmt_g(r.overlap) + "," +
                                       std::to_string(r.n_pairs) + "\n");
  std::ostringstream dens;
  dens << "bin,lo,hi,matching,non_matching\n";
  const std::size_t bins = r.histogram.matching.size();
  const double width = (r.histogram.hi - r.histogram.lo) / static_cast<double>(bins);
  for (std::size_t b = 0; b < bins; ++b) {
    const double lo = r.histogram.lo + width * static_cast<double>(b);
    dens << b << "," << fmt_g(lo) << "," << fmt_g(b + 1 == bins ? r.histogram.hi : lo + width) << ","
         << r.histogram.matching[b] << "," << r.histogram.non_matching[b] << "\n";
  }
  write_text(out_dir / "density.csv", dens.str());
  return r;
}

std::vector<GridResult> cmd_gridsearch(const RunConfig& base, std::ostream* log) {
  const fs::path out(base.output_dir);
  fs::create_directories(out);
  const FaceDataset ds = load_dataset(base);
  const SplitSpec split = split_subjects(ds, base.holdout, mix_seed(base.seed, kTagSplit));

  std::vector<GridResult> results;
  std::ofstream summary(out / "gridsearch.csv", std::ios::trunc);
  summary << "metric,margin,final_test_loss,final_test_accuracy\n";
  for (Metric metric : {Metric::euclidean_sq, Metric::manhattan_exp, Metric::cosine}) {
    for (double margin : {0.2, 0.5, 1.0, 2.0}) {
      RunConfig cfg = base;
      cfg.metric = metric;
      cfg.kfold_k = 0;
      if (cfg.loss == LossKind::contrastive) {
        cfg.margin = margin;
      } else {
        cfg.m_p = margin;
      }
      try {
        cfg.pair_loss_config().validate();
      } catch (const Error& e) {
        if (log) *log << "skip " << to_string(metric) << " margin " << margin << ": " << e.what() << "\n";
        continue;
      }
      cfg.output_dir = (out / ("grid_" + to_string(metric) + "_m" + fmt_g(margin))).string();
      if (log) *log << "grid " << to_string(metric) << " margin " << margin << "\n";
      const TrainResult r = train_split(cfg, ds, split, cfg.output_dir, log);
      const auto& last = r.epochs.back();
      results.push_back({margin, metric, last.test_loss, last.test_accuracy});
      summary << to_string(metric) << "," << fmt_g(margin) << "," << fmt_g(last.test_loss) << ","
              << fmt_g(last.test_accuracy) << "\n"
              << std::flush;
    }
  }
  return results;
}

}  // namespace scn
