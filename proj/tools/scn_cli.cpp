// scn: train, evaluate and check Siamese capsule networks.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>

#include "scn/checkpoint.hpp"
#include "scn/harness.hpp"
#include "scn/ops.hpp"

namespace fs = std::filesystem;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitCheckFailed = 1;
constexpr int kExitUsage = 2;

// Config file first, then one flag per config key, then --set key=value.
struct ConfigFlags {
  std::string config_file;
  std::map<std::string, std::string> flags;
  std::vector<std::string> sets;

  void attach(CLI::App* app) {
    app->add_option("-c,--config", config_file, "flat key = value config file")->check(CLI::ExistingFile);
    for (const auto& key : scn::config_keys()) {
      app->add_option("--" + key, flags[key], "config key " + key);
    }
    app->add_option("--set", sets, "override as key=value (repeatable)");
  }

  scn::RunConfig resolve(CLI::App* app, const std::string& fallback_file = "") const {
    scn::RunConfig cfg;
    const std::string file = !config_file.empty() ? config_file : fallback_file;
    if (!file.empty()) cfg = scn::load_config_file(file);
    for (const auto& [key, value] : flags) {
      if (app->count("--" + key) > 0) scn::apply_setting(cfg, key, value);
    }
    for (const auto& kv : sets) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos) throw scn::ConfigError("--set expects key=value, got '" + kv + "'");
      scn::apply_setting(cfg, kv.substr(0, eq), kv.substr(eq + 1));
    }
    cfg.validate();
    return cfg;
  }
};

int run_gradcheck(const std::string& corrupt) {
  if (!corrupt.empty()) scn::debug::corrupt_backward(corrupt);
  const auto report = scn::run_gradcheck_suite();
  bool ok = true;
  for (const auto& e : report) {
    const bool pass = e.max_rel_error < scn::kGradcheckTolerance;
    ok = ok && pass;
    std::printf("%-30s max_rel_error %.3e  %s\n", e.layer.c_str(), e.max_rel_error, pass ? "ok" : "FAIL");
  }
  std::printf("%s (tolerance %.0e)\n", ok ? "all layers pass" : "gradient check failed", scn::kGradcheckTolerance);
  return ok ? kExitOk : kExitCheckFailed;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Siamese capsule network verification"};
  app.require_subcommand(1);

  ConfigFlags train_flags, eval_flags, grid_flags;

  auto* train = app.add_subcommand("train", "train a model; writes metrics.csv, config.txt and checkpoints");
  train_flags.attach(train);

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint; writes eval.csv and density.csv");
  std::string ckpt, eval_out;
  eval->add_option("checkpoint", ckpt, "checkpoint file")->required()->check(CLI::ExistingFile);
  eval->add_option("-o,--out", eval_out, "output directory (default: the checkpoint's directory)");
  eval_flags.attach(eval);

  auto* grad = app.add_subcommand("gradcheck", "finite-difference check of every layer");
  std::string corrupt;
  grad->add_option("--corrupt", corrupt, "break a primitive's backward (negative control)")->group("");

  auto* grid = app.add_subcommand("gridsearch", "sweep margins {0.2, 0.5, 1, 2} x metrics");
  grid_flags.attach(grid);

  auto* plot = app.add_subcommand("plot", "render a loss curve SVG from metrics.csv");
  std::string metrics_csv, svg_out;
  plot->add_option("metrics", metrics_csv, "metrics.csv")->required()->check(CLI::ExistingFile);
  plot->add_option("-o,--out", svg_out, "SVG path (default: loss.svg next to the CSV)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*train) {
      const auto cfg = train_flags.resolve(train);
      scn::cmd_train(cfg, &std::cout);
      std::cout << "wrote " << cfg.output_dir << "\n";
    } else if (*eval) {
      const fs::path ckpt_dir = fs::path(ckpt).parent_path();
      const fs::path echo = ckpt_dir / "config.txt";
      const auto cfg = eval_flags.resolve(eval, fs::exists(echo) ? echo.string() : "");
      const fs::path out = eval_out.empty() ? ckpt_dir : fs::path(eval_out);
      const auto r = scn::cmd_eval(ckpt, cfg, out);
      std::printf("loss %.6g accuracy %.4f threshold %.6g overlap %.4f pairs %zu\n", r.loss, r.accuracy,
                  r.threshold, r.overlap, r.n_pairs);
    } else if (*grad) {
      return run_gradcheck(corrupt);
    } else if (*grid) {
      const auto cfg = grid_flags.resolve(grid);
      for (const auto& r : scn::cmd_gridsearch(cfg, &std::cout)) {
        std::printf("%-14s margin %-4g test_loss %.6g test_accuracy %.4f\n", scn::to_string(r.metric).c_str(),
                    r.margin, r.final_test_loss, r.final_test_accuracy);
      }
    } else if (*plot) {
      const fs::path out = svg_out.empty() ? fs::path(metrics_csv).parent_path() / "loss.svg" : fs::path(svg_out);
      scn::emit_plot(metrics_csv, out);
      std::cout << "wrote " << out.string() << "\n";
    }
  } catch (const scn::ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitCheckFailed;
  }
  return kExitOk;
}
