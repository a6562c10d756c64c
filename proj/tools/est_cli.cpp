#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "est/commands.hpp"
#include "est/config.hpp"

namespace {

// Flags shared by every subcommand. Values from --config are applied first
// and explicit flags override them.
struct Common {
  std::string config_path;
  std::uint64_t seed = 0;
  int threads = 1;
  CLI::Option* seed_opt = nullptr;
  CLI::Option* threads_opt = nullptr;

  void attach(CLI::App* app) {
    app->add_option("--config", config_path, "JSON run configuration; flags take precedence");
    seed_opt = app->add_option("--seed", seed, "Seed for every randomized step");
    threads_opt = app->add_option("--threads", threads, "Worker threads")->check(CLI::PositiveNumber);
  }

  est::config::RunConfig resolve() const {
    est::config::RunConfig c;
    if (!config_path.empty()) est::config::apply_json(c, est::commands::detail::read_config_json(config_path));
    if (seed_opt->count()) c.seed = seed;
    if (threads_opt->count()) c.threads = threads;
    return c;
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Epipolar spatio-temporal multi-view depth estimation"};
  app.require_subcommand(1);

  // synth
  Common synth_common;
  est::commands::SynthOptions synth;
  std::optional<int> synth_frames;
  std::optional<double> synth_baseline, synth_noise;
  auto* synth_cmd = app.add_subcommand("synth", "Render a synthetic sequence with ground truth");
  synth_common.attach(synth_cmd);
  synth_cmd->add_option("--scene", synth.scene, "Scene specification (JSON)")->required();
  synth_cmd->add_option("--out", synth.out, "Output directory")->required();
  synth_cmd->add_option("--frames", synth_frames, "Override the trajectory frame count");
  synth_cmd->add_option("--baseline", synth_baseline, "Override the per-frame baseline (meters)");
  synth_cmd->add_option("--noise", synth_noise, "Override the image noise sigma");

  // run
  Common run_common;
  est::commands::RunOptions run;
  std::optional<std::string> run_mode, run_fusion, run_params;
  std::optional<int> run_capacity, run_planes, run_channels;
  std::optional<double> run_zmin, run_zmax;
  auto* run_cmd = app.add_subcommand("run", "Estimate depth for a dataset");
  run_common.attach(run_cmd);
  run_cmd->add_option("--manifest", run.manifest, "Dataset manifest.json")->required();
  run_cmd->add_option("--out", run.out, "Results directory")->required();
  run_cmd->add_option("--mode", run_mode, "independent | joint | estm");
  run_cmd->add_option("--fusion", run_fusion, "adaptive | concat");
  run_cmd->add_option("--capacity", run_capacity, "Memory bank capacity (estm)");
  run_cmd->add_option("--planes", run_planes, "Depth hypotheses D");
  run_cmd->add_option("--channels", run_channels, "Feature channels C");
  run_cmd->add_option("--z-min", run_zmin, "Nearest hypothesis depth");
  run_cmd->add_option("--z-max", run_zmax, "Farthest hypothesis depth");
  run_cmd->add_option("--params", run_params, "Transformer parameter sidecar (JSON)");
  run_cmd->add_flag("--dump-probability", run.dump_probability, "Also write probability volumes");

  // eval
  Common eval_common;
  est::commands::EvalOptions eval;
  std::optional<double> eval_lambda;
  std::optional<std::string> eval_weighting;
  auto* eval_cmd = app.add_subcommand("eval", "Score a results directory against ground truth");
  eval_common.attach(eval_cmd);
  eval_cmd->add_option("--results", eval.results, "Directory written by 'run'")->required();
  eval_cmd->add_option("--manifest", eval.manifest, "Dataset manifest.json")->required();
  eval_cmd->add_option("--out", eval.out, "Report directory (default: the results directory)");
  eval_cmd->add_option("--cap", eval.caps, "Range caps in meters (repeatable)")->default_str("5 10");
  eval_cmd->add_option("--stage", eval.stage, "Depth stage to score (0-3)")->default_val(3);
  eval_cmd->add_flag("--pooled", eval.pooled, "Summarize over pooled pixels instead of the per-frame mean");
  eval_cmd->add_option("--lambda", eval_lambda, "Stage weight base for the loss report");
  eval_cmd->add_option("--weighting", eval_weighting, "as-published | reversed");

  // gradcheck
  Common grad_common;
  est::gradcheck::Options grad;
  auto* grad_cmd = app.add_subcommand("gradcheck", "Compare analytic gradients with finite differences");
  grad_common.attach(grad_cmd);
  grad_cmd->add_option("--instances", grad.instances, "Random instances per suite")->default_val(100);
  grad_cmd->add_option("--channels", grad.half_channels, "Key/value channels")->default_val(2);
  grad_cmd->add_option("--memories", grad.memories, "Memories per instance")->default_val(2);
  grad_cmd->add_option("--planes", grad.planes, "Depth planes per instance")->default_val(4);
  grad_cmd->add_option("--height", grad.height, "Volume height")->default_val(3);
  grad_cmd->add_option("--width", grad.width, "Volume width")->default_val(3);
  grad_cmd->add_flag("--corrupt-analytic", grad.corrupt)->group("");  // negative-control hook

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    // Usage errors are configuration errors; --help exits 0.
    return app.exit(e) == 0 ? 0 : est::commands::kBadConfig;
  }

  return est::commands::guarded(
      [&]() -> int {
        if (synth_cmd->parsed()) {
          const auto cfg = synth_common.resolve();
          cfg.validate();
          est::set_num_threads(cfg.threads);
          synth.seed = cfg.seed;
          synth.frames = synth_frames;
          synth.baseline = synth_baseline;
          synth.noise = synth_noise;
          return est::commands::cmd_synth(synth, std::cout);
        }
        if (run_cmd->parsed()) {
          auto cfg = run_common.resolve();
          if (run_mode) cfg.mode = est::config::parse_mode(*run_mode);
          if (run_fusion) cfg.fusion = est::config::parse_fusion(*run_fusion);
          if (run_capacity) cfg.capacity = *run_capacity;
          if (run_planes) cfg.planes = *run_planes;
          if (run_channels) cfg.channels = *run_channels;
          if (run_zmin) cfg.z_min = *run_zmin;
          if (run_zmax) cfg.z_max = *run_zmax;
          if (run_params) cfg.params = *run_params;
          run.config = cfg;
          return est::commands::cmd_run(run, std::cout);
        }
        if (eval_cmd->parsed()) {
          auto cfg = eval_common.resolve();
          if (eval_lambda) cfg.lambda = *eval_lambda;
          if (eval_weighting) cfg.weighting = est::config::parse_weighting(*eval_weighting);
          cfg.validate();
          est::set_num_threads(cfg.threads);
          eval.config = cfg;
          return est::commands::cmd_eval(eval, std::cout);
        }
        const auto cfg = grad_common.resolve();
        cfg.validate();
        est::set_num_threads(cfg.threads);
        grad.seed = cfg.seed;
        return est::commands::cmd_gradcheck(grad, std::cout);
      },
      std::cerr);
}
