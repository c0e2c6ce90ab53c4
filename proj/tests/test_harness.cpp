#include <doctest.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "scn/checkpoint.hpp"
#include "scn/harness.hpp"

using namespace scn;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::ostringstream s;
  s << f.rdbuf();
  return s.str();
}

// metrics.csv with the wall_ms column removed.
std::string without_wall_ms(const std::string& csv) {
  std::istringstream in(csv);
  std::string line, out;
  while (std::getline(in, line)) out += line.substr(0, line.rfind(',')) + "\n";
  return out;
}

RunConfig tiny_run(const fs::path& dir) {
  RunConfig c;
  c.reduced = true;
  c.image_size = 40;
  c.synth_subjects = 8;
  c.synth_per_subject = 4;
  c.holdout = 3;
  c.pairs_per_epoch = 24;
  c.test_pairs = 24;
  c.batch_size = 8;
  c.epochs = 2;
  c.output_dir = dir.string();
  return c;
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) { fs::remove_all(path); }
  ~TempDir() { fs::remove_all(path); }
};

}  // namespace

TEST_CASE("config defaults") {
  RunConfig c;
  CHECK(c.resolved_margin() == 2.0);
  CHECK(c.resolved_routing_iters() == 4);
  CHECK(c.epochs == 100);
  CHECK(c.m_n == 0.2);
  CHECK(c.m_p == 0.5);
  c.dataset = DatasetSource::lfw;
  CHECK(c.resolved_margin() == 0.2);
  CHECK(c.resolved_routing_iters() == 6);
  c.dataset = DatasetSource::att;
  CHECK(c.resolved_margin() == 2.0);
  c.margin = 0.7;
  CHECK(c.resolved_margin() == 0.7);
}

TEST_CASE("config parsing and echo") {
  const auto kv = parse_config_text("# comment\nepochs = 7\n\n  metric=cosine   # trailing\nseed = 9\n");
  REQUIRE(kv.size() == 3);
  CHECK(kv[0] == std::pair<std::string, std::string>{"epochs", "7"});
  CHECK(kv[1].second == "cosine");
  CHECK_THROWS_AS(parse_config_text("epochs 7\n"), ConfigError);

  RunConfig c;
  apply_setting(c, "model", "sdropcapnet");
  apply_setting(c, "loss", "double_margin");
  apply_setting(c, "m_p", "0.6");
  apply_setting(c, "routing_iters", "3");
  apply_setting(c, "reduced", "true");
  CHECK(c.model == ModelKind::sdropcapnet);
  CHECK(c.resolved_routing_iters() == 3);
  CHECK_THROWS_WITH_AS(apply_setting(c, "nope", "1"), "unknown config key 'nope'", ConfigError);
  CHECK_THROWS_AS(apply_setting(c, "epochs", "-1"), ConfigError);
  CHECK_THROWS_AS(apply_setting(c, "alpha", "fast"), ConfigError);
  CHECK_THROWS_AS(apply_setting(c, "metric", "chebyshev"), ConfigError);

  const fs::path p = fs::temp_directory_path() / "scn_test_config.txt";
  std::ofstream(p) << config_echo(c);
  const RunConfig back = load_config_file(p);
  CHECK(config_echo(back) == config_echo(c));
  fs::remove(p);

  for (const auto& key : config_keys()) CHECK(config_echo(c).find(key + " = ") != std::string::npos);
}

TEST_CASE("config validation runs before compute") {
  auto bad = [](const char* key, const char* value) {
    RunConfig c;
    apply_setting(c, key, value);
    CHECK_THROWS_AS(c.validate(), ConfigError);
  };
  bad("batch_size", "1");
  bad("routing_iters", "0");
  bad("kfold_k", "1");
  bad("pos_ratio", "1.5");
  bad("holdout", "40");
  bad("dropout_rate", "1");
  bad("image_size", "5");
  RunConfig m;
  m.metric = Metric::manhattan_exp;
  m.margin = 2.0;
  CHECK_THROWS_AS(m.validate(), ConfigError);

  RunConfig att;
  att.dataset = DatasetSource::att;
  att.data_dir = (fs::temp_directory_path() / "scn_no_such_dir").string();
  CHECK_THROWS_WITH_AS(load_dataset(att), doctest::Contains("not found"), ConfigError);
}

TEST_CASE("metrics rows") {
  EpochMetrics m{3, 0.25, NAN, 0.5, 17};
  CHECK(format_metrics_row(m) == "3,0.25,nan,0.5,17");
  const fs::path p = fs::temp_directory_path() / "scn_test_metrics.csv";
  std::ofstream(p) << kMetricsHeader << "\n" << format_metrics_row({1, 0.123456789012, 0.5, 0.75, 3}) << "\n";
  const auto rows = read_metrics_csv(p);
  REQUIRE(rows.size() == 1);
  CHECK(rows[0].train_loss == doctest::Approx(0.123456789).epsilon(1e-9));
  std::ofstream(p) << "epoch,loss\n1,2\n";
  CHECK_THROWS(read_metrics_csv(p));
  std::ofstream(p) << kMetricsHeader << "\n";
  CHECK_THROWS(read_metrics_csv(p));
  fs::remove(p);
}

TEST_CASE("loss curve SVG") {
  const std::vector<EpochMetrics> rows = {{1, 1.0, 1.2, 0.5, 5}, {2, 0.6, 0.9, 0.6, 5}, {3, 0.4, 0.8, 0.7, 5}};
  const std::string svg = render_loss_svg(rows);
  CHECK(svg == render_loss_svg(rows));
  CHECK(svg.find("id=\"train_loss\"") != std::string::npos);
  CHECK(svg.find("id=\"test_loss\"") != std::string::npos);
  // The y axis spans the data range: its bottom and top ticks are the min and max.
  CHECK(svg.find(">0.4</text>") != std::string::npos);
  CHECK(svg.find(">1.2</text>") != std::string::npos);

  const std::string one = render_loss_svg({{1, 0.5, NAN, NAN, 1}});
  CHECK(one.find("id=\"test_loss\"") == std::string::npos);
  const auto at = one.find("points=\"");
  REQUIRE(at != std::string::npos);
  const std::string pts = one.substr(at + 8, one.find('"', at + 8) - at - 8);
  CHECK(pts.find(' ') == std::string::npos);  // a single point
  CHECK_THROWS(render_loss_svg({}));
}

TEST_CASE("histogram and overlap") {
  const std::vector<double> d = {0.0, 0.1, 0.2, 0.9, 1.0, 0.5};
  const std::vector<int> y = {0, 0, 0, 1, 1, 0};
  const Histogram h = distance_histogram(d, y, 50);
  std::size_t m = 0, n = 0;
  for (auto c : h.matching) m += c;
  for (auto c : h.non_matching) n += c;
  CHECK(m == 4);
  CHECK(n == 2);
  CHECK(overlap_coefficient(h) == 0.0);
  const std::vector<int> mixed = {0, 1, 0, 1, 0, 1};
  const std::vector<double> same = {0.3, 0.3, 0.6, 0.6, 0.9, 0.9};
  CHECK(overlap_coefficient(distance_histogram(same, mixed, 10)) == doctest::Approx(1.0));
}

TEST_CASE("training is deterministic and writes its artifacts") {
  TempDir a("scn_test_run_a"), b("scn_test_run_b");
  cmd_train(tiny_run(a.path));
  cmd_train(tiny_run(b.path));
  for (const char* f : {"metrics.csv", "config.txt", "final.ckpt", "best.ckpt"}) {
    CAPTURE(f);
    CHECK(fs::exists(a.path / f));
  }
  const std::string ma = slurp(a.path / "metrics.csv");
  CHECK(ma.rfind(std::string(kMetricsHeader) + "\n", 0) == 0);
  CHECK(without_wall_ms(ma) == without_wall_ms(slurp(b.path / "metrics.csv")));
  CHECK(slurp(a.path / "final.ckpt") == slurp(b.path / "final.ckpt"));
  const RunConfig ca = load_config_file(a.path / "config.txt");
  RunConfig cb = load_config_file(b.path / "config.txt");
  cb.output_dir = ca.output_dir;
  CHECK(config_echo(ca) == config_echo(cb));
  CHECK(slurp(a.path / "config.txt").find("dropout_rate = 0.2\n") != std::string::npos);
  CHECK(read_metrics_csv(a.path / "metrics.csv").size() == 2);

  RunConfig other = tiny_run(b.path);
  other.seed = 2;
  cmd_train(other);
  CHECK(without_wall_ms(ma) != without_wall_ms(slurp(b.path / "metrics.csv")));

  // Evaluating the checkpoint with the echoed config writes both reports.
  const RunConfig echoed = load_config_file(a.path / "config.txt");
  const EvalReport r = cmd_eval(a.path / "final.ckpt", echoed, a.path);
  CHECK(r.n_pairs == 24);
  CHECK(fs::exists(a.path / "eval.csv"));
  std::ifstream dens(a.path / "density.csv");
  std::string line;
  std::getline(dens, line);
  CHECK(line == "bin,lo,hi,matching,non_matching");
  std::size_t rows = 0, total = 0;
  while (std::getline(dens, line)) {
    ++rows;
    std::istringstream s(line);
    std::string cell;
    for (int i = 0; i < 3; ++i) std::getline(s, cell, ',');
    std::size_t mm, nn;
    char comma;
    s >> mm >> comma >> nn;
    total += mm + nn;
  }
  CHECK(rows == 50);
  CHECK(total == 24);
}

TEST_CASE("k-fold training writes one directory per fold") {
  TempDir a("scn_test_kfold");
  RunConfig c = tiny_run(a.path);
  c.kfold_k = 2;
  c.epochs = 1;
  const auto results = cmd_train(c);
  CHECK(results.size() == 2);
  CHECK(fs::exists(a.path / "fold_1" / "metrics.csv"));
  CHECK(fs::exists(a.path / "fold_2" / "final.ckpt"));
  std::ifstream s(a.path / "cv_summary.csv");
  std::string header;
  std::getline(s, header);
  CHECK(header == "fold,train_loss,test_loss,test_accuracy");
}

TEST_CASE("gridsearch skips invalid margins") {
  TempDir a("scn_test_grid");
  RunConfig c = tiny_run(a.path);
  c.model = ModelKind::standard;
  c.epochs = 1;
  c.pairs_per_epoch = 8;
  c.test_pairs = 8;
  const auto results = cmd_gridsearch(c);
  // manhattan_exp only accepts margins up to 1.
  CHECK(results.size() == 4 + 3 + 4);
  CHECK(fs::exists(a.path / "gridsearch.csv"));
  CHECK(fs::exists(a.path / "grid_cosine_m0.5" / "metrics.csv"));
  CHECK_FALSE(fs::exists(a.path / "grid_manhattan_exp_m2"));
}

TEST_CASE("gradcheck suite reports every layer once") {
  const auto report = run_gradcheck_suite();
  std::vector<std::string> names;
  for (const auto& e : report) {
    CAPTURE(e.layer);
    CHECK(e.max_rel_error < kGradcheckTolerance);
    names.push_back(e.layer);
  }
  const std::vector<std::string> expect = {"conv2d",
                                           "batchnorm",
                                           "dense",
                                           "squash",
                                           "routing (2 iterations)",
                                           "tanh capsule layer",
                                           "primary capsules",
                                           "distance metrics",
                                           "contrastive loss",
                                           "double-margin loss",
                                           "concrete dropout (frozen u)"};
  CHECK(names == expect);
}
