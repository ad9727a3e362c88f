// Command-line entry point: vstpose_cli <command> [options]
//
// Configuration precedence is flag > config file > default. Every run writes a
// self-contained output directory holding the resolved config.json.

#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <spdlog/sinks/basic_file_sink.h>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "vstpose/cli.hpp"

namespace {

struct Common {
  std::string config;
  std::vector<std::string> sets;
  std::string out;
  std::string out_root;
  std::string log_level = "info";
};

struct Flags {
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> num_clips;
  std::optional<std::size_t> epochs;
  std::optional<std::size_t> max_steps;
  std::optional<double> lr;
  std::string manifest;
  std::string checkpoint;
  std::string resume;
  bool no_denoise = false;
  bool all_windows = false;
  bool tiny = false;
  double epsilon = 1e-4;
  double tolerance = 1e-3;
  std::size_t jobs = 1;
};

void add_common(CLI::App* app, Common& c) {
  app->add_option("-c,--config", c.config, "JSON config file")->check(CLI::ExistingFile);
  app->add_option("--set", c.sets, "Override a config value, e.g. --set train.lr=1e-3 (repeatable)");
  app->add_option("-o,--out", c.out, "Output directory (default: <root>/<command>_<time>_<hash>)");
  app->add_option("--out-root", c.out_root, "Root for generated output directories (default: $VSTPOSE_OUTPUT_ROOT or runs)");
  app->add_option("--log-level", c.log_level, "trace, debug, info, warn, error or off");
}

}  // namespace

int main(int argc, char** argv) {
  namespace cli = vstpose::cli;
  CLI::App app{"WiFi CSI to 2D/3D human pose: data preparation, training, evaluation and ablation"};
  app.require_subcommand(1);
  Common common;
  Flags f;

  auto* synth = app.add_subcommand("synth", "Generate a seeded synthetic dataset of framed clips");
  synth->add_option("--seed", f.seed, "synth.seed");
  synth->add_option("--num-clips", f.num_clips, "synth.num_clips");

  auto* preprocess = app.add_subcommand("preprocess", "Denoise, frame, align and clip raw recordings");
  preprocess->add_option("--manifest", f.manifest, "Manifest of raw recordings");
  preprocess->add_flag("--no-denoise", f.no_denoise, "Skip wavelet denoising");

  auto* train = app.add_subcommand("train", "Train on a clip manifest and evaluate the best checkpoint");
  train->add_option("--manifest", f.manifest, "Manifest of framed clips");
  train->add_option("--seed", f.seed, "train.seed");
  train->add_option("--epochs", f.epochs, "train.epochs");
  train->add_option("--max-steps", f.max_steps, "train.max_steps");
  train->add_option("--lr", f.lr, "train.lr");
  train->add_option("--resume", f.resume, "State checkpoint to continue from")->check(CLI::ExistingFile);

  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on the test split");
  eval->add_option("--manifest", f.manifest, "Manifest of framed clips");
  eval->add_option("--checkpoint", f.checkpoint, "Checkpoint to evaluate")->required()->check(CLI::ExistingFile);
  eval->add_flag("--all", f.all_windows, "Evaluate every window instead of the test split");

  auto* predict = app.add_subcommand("predict", "Write keypoint and velocity predictions for every window");
  predict->add_option("--manifest", f.manifest, "Manifest of framed clips");
  predict->add_option("--checkpoint", f.checkpoint, "Checkpoint to run")->required()->check(CLI::ExistingFile);

  auto* ablate = app.add_subcommand("ablate", "Train and evaluate every cell of the 'ablate' grid");
  ablate->add_option("--manifest", f.manifest, "Manifest of framed clips");
  ablate->add_option("--seed", f.seed, "train.seed");
  ablate->add_option("--epochs", f.epochs, "train.epochs");
  ablate->add_option("--max-steps", f.max_steps, "train.max_steps");
  ablate->add_option("-j,--jobs", f.jobs, "Train this many cells concurrently (default 1)")->check(CLI::PositiveNumber);

  auto* gradcheck = app.add_subcommand("gradcheck", "Compare analytic gradients with central differences");
  gradcheck->add_option("--epsilon", f.epsilon, "Finite-difference step");
  gradcheck->add_option("--tolerance", f.tolerance, "Maximum accepted relative error");
  gradcheck->add_flag("--tiny", f.tiny, "Use the tiny check geometry (T=3, J=4, D=8, N=1, H=2, C=2)");
  gradcheck->add_option("--seed", f.seed, "train.seed");

  for (auto* sub : {synth, preprocess, train, eval, predict, ablate, gradcheck}) add_common(sub, common);

  CLI11_PARSE(app, argc, argv);
  const std::string command = app.get_subcommands().front()->get_name();

  try {
    spdlog::set_level(spdlog::level::from_str(common.log_level));
    spdlog::set_default_logger(spdlog::stderr_color_mt("vstpose"));

    std::vector<cli::Override> overrides;
    const std::string seed_key = command == "synth" ? "synth.seed" : "train.seed";
    if (f.tiny) {
      for (const auto& [k, v] : std::vector<cli::Override>{{"model.window", 3}, {"model.joints", 4}, {"model.embed_dim", 8},
                                                          {"model.depth", 1}, {"model.heads", 2}, {"model.coord_dims", 2},
                                                          {"model.decoder_hidden", 8}, {"model.conv1_channels", 4},
                                                          {"model.conv2_channels", 8}}) {
        overrides.emplace_back(k, v);
      }
    }
    if (f.seed) overrides.emplace_back(seed_key, *f.seed);
    if (f.num_clips) overrides.emplace_back("synth.num_clips", *f.num_clips);
    if (f.epochs) overrides.emplace_back("train.epochs", *f.epochs);
    if (f.max_steps) overrides.emplace_back("train.max_steps", *f.max_steps);
    if (f.lr) overrides.emplace_back("train.lr", *f.lr);
    if (!f.manifest.empty()) overrides.emplace_back("data.manifest", f.manifest);
    if (f.no_denoise) overrides.emplace_back("data.denoise", false);
    for (const auto& s : common.sets) overrides.push_back(cli::parse_override(s));

    const auto cfg = cli::resolve_config(
        common.config.empty() ? std::nullopt : std::optional<std::filesystem::path>(common.config), overrides);
    const auto out = cli::output_dir(
        command, cfg, common.out.empty() ? std::nullopt : std::optional<std::filesystem::path>(common.out),
        common.out_root.empty() ? std::nullopt : std::optional<std::filesystem::path>(common.out_root));
    spdlog::default_logger()->sinks().push_back(
        std::make_shared<spdlog::sinks::basic_file_sink_mt>((out / "run.log").string()));

    cli::CommandOptions options;
    if (!f.checkpoint.empty()) options.checkpoint = f.checkpoint;
    if (!f.resume.empty()) options.resume = f.resume;
    options.all_windows = f.all_windows;
    options.epsilon = f.epsilon;
    options.tolerance = f.tolerance;
    options.jobs = f.jobs;

    const int status = cli::run_command(command, cfg, out, options);
    std::cout << out.string() << '\n';
    return status;
  } catch (const std::exception& e) {
    spdlog::error("{}: {}", command, e.what());
    return 1;
  }
}
