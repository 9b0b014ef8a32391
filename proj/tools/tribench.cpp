#include "tribench/commands.hpp"

#include <CLI11.hpp>

#include <iostream>

using namespace tribench;
namespace fs = std::filesystem;

namespace {

struct Globals {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<double> scale;
  bool dry_run = false;
  bool force = false;
};

CommandContext make_context(const Globals& g, int argc, char** argv) {
  CommandContext ctx;
  if (!g.config.empty()) {
    if (!fs::is_regular_file(g.config)) throw IoError("missing config file: " + g.config);
    ctx.cfg = load_config(g.config);
  }
  if (g.seed) ctx.cfg.seed = *g.seed;
  if (g.scale) ctx.cfg.scale = *g.scale;
  ctx.cfg.validate();
  ctx.argv.assign(argv, argv + argc);
  ctx.dry_run = g.dry_run;
  ctx.force = g.force;
  ctx.log = &std::cerr;
  return ctx;
}

}  // namespace

int main(int argc, char** argv) {
  tune_allocator();
  CLI::App app{"Tissue triangulation workbench: simulation, translation and policy learning"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--config", g.config, "Config file (key = value with [sections])");
  app.add_option("--seed", g.seed, "Master seed (overrides the config)");
  app.add_option("--scale", g.scale, "Protocol scale factor (overrides the config)");
  app.add_flag("--dry-run", g.dry_run, "Validate and write the manifest only");
  app.add_flag("--force", g.force, "Replace a non-empty output directory");

  std::string out, data, translators, translator, selection, checkpoint, variant, experiment, frame, pose;
  std::optional<int> count_source, count_target;

  auto* gen = app.add_subcommand("gen-dataset", "Render source and stylized target frames");
  gen->add_option("--out", out)->required();
  gen->add_option("--count-source", count_source);
  gen->add_option("--count-target", count_target);

  auto* ttr = app.add_subcommand("train-translator", "Train the image translator");
  ttr->add_option("--data", data, "Dataset directory from gen-dataset")->required();
  ttr->add_option("--out", out)->required();

  auto* sel = app.add_subcommand("select-translator", "Score translator checkpoints by IS/FID rank sum");
  sel->add_option("--data", data)->required();
  sel->add_option("--translators", translators, "Directory of translator checkpoints")->required();
  sel->add_option("--out", out)->required();

  auto* tp = app.add_subcommand("train-policy", "Run the policy training protocol");
  tp->add_option("--out", out)->required();
  auto* tp_tr = tp->add_option("--translator", translator, "Translator checkpoint");
  tp->add_option("--selection", selection, "select-translator output directory")->excludes(tp_tr);

  auto* ev = app.add_subcommand("evaluate", "Evaluate one policy checkpoint");
  ev->add_option("--checkpoint", checkpoint)->required();
  ev->add_option("--variant", variant, "original | translated | embedded")->required();
  ev->add_option("--translator", translator);
  ev->add_option("--out", out)->required();

  auto* rep = app.add_subcommand("report", "Emit curve and summary CSVs from an experiment");
  rep->add_option("--experiment", experiment)->required();
  rep->add_option("--out", out)->required();

  auto* rw = app.add_subcommand("reward", "Reward of one frame and pose file");
  rw->add_option("--frame", frame)->required();
  rw->add_option("--pose", pose)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;  // --help is a success, bad usage is invalid input
  }

  try {
    CommandContext ctx = make_context(g, argc, argv);
    if (gen->parsed()) {
      if (count_source) ctx.cfg.dataset.count_source = *count_source;
      if (count_target) ctx.cfg.dataset.count_target = *count_target;
      cmd_gen_dataset(ctx, out);
    } else if (ttr->parsed()) {
      cmd_train_translator(ctx, data, out);
    } else if (sel->parsed()) {
      std::cout << cmd_select_translator(ctx, data, translators, out).best.string() << '\n';
    } else if (tp->parsed()) {
      const fs::path tr = selection.empty() ? fs::path(translator) : read_selection(selection);
      cmd_train_policy(ctx, out, tr);
    } else if (ev->parsed()) {
      const EvalResult r = cmd_evaluate(ctx, checkpoint, parse_variant(variant), translator, out);
      std::cout << "success_rate=" << r.success_rate << " mean_steps=" << r.mean_steps << '\n';
    } else if (rep->parsed()) {
      for (const VariantSummary& v : cmd_report(ctx, experiment, out))
        std::cout << variant_name(v.variant) << " success=" << v.median_best_success
                  << " steps=" << v.median_best_steps << " loss_at_half=" << v.median_loss_at_half << '\n';
    } else if (rw->parsed()) {
      std::cout << cmd_reward(ctx, frame, pose) << '\n';
    }
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
