#include "tribench/commands.hpp"

#include "tribench/image_io.hpp"
#include "tribench/manifest.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <ostream>
#include <random>
#include <sstream>

namespace tribench {

namespace fs = std::filesystem;

namespace {

void say(const CommandContext& ctx, const std::string& msg) {
  if (ctx.log) *ctx.log << msg << std::endl;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("write failed: " + path.string());
}

// Refuses to reuse a non-empty directory unless forced; forcing clears it.
void prepare_out_dir(const fs::path& dir, bool force) {
  if (fs::exists(dir) && !fs::is_directory(dir))
    throw ConfigError("output path exists and is not a directory: " + dir.string());
  if (fs::exists(dir) && !fs::is_empty(dir)) {
    if (!force) throw ConfigError("output directory is not empty: " + dir.string() + " (use --force)");
    fs::remove_all(dir);
  }
  fs::create_directories(dir);
}

void require_dir(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw IoError("missing directory: " + dir.string());
}

void require_file(const fs::path& f) {
  if (!fs::is_regular_file(f)) throw IoError("missing file: " + f.string());
}

// Writes the manifest, runs `work` unless dry-run, then finalizes with the
// hashes of everything under `roots`.
template <typename Work>
void with_manifest(const CommandContext& ctx, const std::string& command, const fs::path& dir,
                   const std::vector<fs::path>& roots, nlohmann::json extra, Work&& work) {
  fs::create_directories(dir);
  RunManifest m(dir / ("manifest_" + command + ".json"), command, ctx.argv, ctx.cfg.seed,
                ctx.cfg.scale, dump_config(ctx.cfg), ctx.dry_run);
  for (auto& [k, v] : extra.items()) m.data()[k] = v;
  m.write_initial();
  if (ctx.dry_run) {
    m.finalize({}, "dry_run");
    return;
  }
  try {
    work(m.data());
  } catch (...) {
    m.finalize(roots, "failed");
    throw;
  }
  m.finalize(roots, "complete");
}

std::map<std::string, int> read_labels(const fs::path& dir) {
  const fs::path p = dir / "labels.csv";
  std::ifstream in(p);
  if (!in) throw IoError("missing file: " + p.string());
  std::string line;
  std::getline(in, line);
  if (line != "file,bucket") throw IoError(p.string() + ": expected header file,bucket");
  std::map<std::string, int> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto c = line.find(',');
    if (c == std::string::npos) throw IoError(p.string() + ": malformed row '" + line + "'");
    try {
      out[line.substr(0, c)] = std::stoi(line.substr(c + 1));
    } catch (const std::exception&) {
      throw IoError(p.string() + ": malformed row '" + line + "'");
    }
  }
  return out;
}

void load_labeled(const fs::path& dir, std::vector<ImageBuffer>& images, std::vector<int>& labels) {
  const auto map = read_labels(dir);
  for (const fs::path& f : list_images(dir)) {
    auto it = map.find(f.filename().string());
    if (it == map.end()) throw IoError(dir.string() + "/labels.csv has no entry for " + f.filename().string());
    images.push_back(read_image(f));
    labels.push_back(it->second);
  }
}

// A random tissue state: jittered sheet plus a few grasp-pulls started at
// random particles, so the set covers hidden, partly and fully exposed lines.
TissueState random_state(const EnvConfig& env, int max_pulls, Rng& rng) {
  std::uniform_real_distribution<double> jit(-env.reset_jitter, env.reset_jitter);
  SimConfig sc = env.sim;
  sc.origin.x() += jit(rng);
  sc.origin.z() += jit(rng);
  TissueState s = init_tissue(sc);
  std::uniform_int_distribution<int> n_pulls(0, max_pulls);
  const int pulls = n_pulls(rng);
  const Aabb& w = sc.workspace;
  std::uniform_real_distribution<double> horiz(-0.03, 0.03), up(0.0, 0.02);
  for (int p = 0; p < pulls; ++p) {
    std::uniform_int_distribution<int> pick(0, s.particle_count() - 1);
    const Vec3 grasp = s.position(pick(rng)).cwiseMax(w.min).cwiseMin(w.max);
    const Vec3 target = (grasp + Vec3(horiz(rng), up(rng), horiz(rng))).cwiseMax(w.min).cwiseMin(w.max);
    try {
      s = apply_action(s, {grasp, target}, sc);
    } catch (const SimulationDiverged&) {
      break;
    }
  }
  return s;
}

std::string name_of(int i) {
  char buf[24];
  std::snprintf(buf, sizeof buf, "%05d.pgm", i);
  return buf;
}

}  // namespace

// ----------------------------------------------------------------- dataset

DatasetResult cmd_gen_dataset(const CommandContext& ctx, const fs::path& out_dir) {
  const WorkbenchConfig& cfg = ctx.cfg;
  cfg.validate();
  if (!ctx.dry_run) prepare_out_dir(out_dir, ctx.force);
  DatasetResult res;
  with_manifest(ctx, "gen-dataset", out_dir, {out_dir / "source", out_dir / "target"},
                {{"count_source", cfg.dataset.count_source}, {"count_target", cfg.dataset.count_target}},
                [&](nlohmann::json&) {
    const SeedStreams streams(cfg.seed);
    Rng rng = streams.stream("sim");
    const fs::path src = out_dir / "source", tgt = out_dir / "target";
    fs::create_directories(src);
    fs::create_directories(tgt);
    std::ostringstream src_labels, tgt_labels;
    src_labels << "file,bucket\n";
    tgt_labels << "file,bucket\n";
    const int total = cfg.dataset.count_source + cfg.dataset.count_target;
    for (int i = 0; i < total; ++i) {
      const TissueState s = random_state(cfg.env, cfg.dataset.max_pulls, rng);
      const ImageBuffer frame = render(s, cfg.env.camera, cfg.env.style);
      const std::array<Vec3, 3> grippers{s.grippers[0].position, s.grippers[1].position,
                                         s.grippers[2].position};
      const int bucket = static_cast<int>(
          pose_bucket(evaluate_reward(frame, s.line_endpoints(), grippers, cfg.env.reward)));
      const ImageBuffer gray = to_gray(frame);
      if (i < cfg.dataset.count_source) {
        const std::string name = name_of(i);
        write_image(src / name, gray);
        src_labels << name << ',' << bucket << '\n';
        ++res.source;
      } else {
        // Target frames come from states never used as source frames.
        const int j = i - cfg.dataset.count_source;
        StyleParams sp = cfg.dataset.style;
        sp.seed = streams.seed("stylize", static_cast<std::uint64_t>(j));
        const std::string name = name_of(j);
        write_image(tgt / name, stylize(gray, sp));
        tgt_labels << name << ',' << bucket << '\n';
        ++res.target;
      }
    }
    write_text(src / "labels.csv", src_labels.str());
    write_text(tgt / "labels.csv", tgt_labels.str());
    say(ctx, "wrote " + std::to_string(res.source) + " source and " + std::to_string(res.target) +
                 " target frames to " + out_dir.string());
  });
  return res;
}

// -------------------------------------------------------------- translator

std::vector<TranslatorCheckpoint> cmd_train_translator(const CommandContext& ctx,
                                                       const fs::path& data_dir,
                                                       const fs::path& out_dir) {
  ctx.cfg.validate();
  require_dir(data_dir / "source");
  require_dir(data_dir / "target");
  if (!ctx.dry_run) prepare_out_dir(out_dir, ctx.force);
  std::vector<TranslatorCheckpoint> out;
  with_manifest(ctx, "train-translator", out_dir, {out_dir}, {{"data_dir", data_dir.string()}},
                [&](nlohmann::json&) {
    Rng rng = SeedStreams(ctx.cfg.seed).stream("patches");
    out = train_translator(data_dir / "source", data_dir / "target", ctx.cfg.cut, out_dir, rng);
    say(ctx, "saved " + std::to_string(out.size()) + " translator checkpoints to " + out_dir.string());
  });
  return out;
}

SelectionResult cmd_select_translator(const CommandContext& ctx, const fs::path& data_dir,
                                      const fs::path& translator_dir, const fs::path& out_dir) {
  const WorkbenchConfig& cfg = ctx.cfg;
  cfg.validate();
  require_dir(data_dir / "source");
  require_dir(data_dir / "target");
  require_dir(translator_dir);
  const std::vector<TranslatorCheckpoint> ckpts = list_translator_checkpoints(translator_dir);
  if (ckpts.empty()) throw IoError("no translator checkpoints in " + translator_dir.string());
  if (!ctx.dry_run) prepare_out_dir(out_dir, ctx.force);
  SelectionResult res;
  with_manifest(ctx, "select-translator", out_dir, {out_dir},
                {{"checkpoints", ckpts.size()}, {"translator_dir", translator_dir.string()}},
                [&](nlohmann::json& m) {
    std::vector<ImageBuffer> train_images;
    std::vector<int> labels;
    load_labeled(data_dir / "source", train_images, labels);
    const std::size_t n_source = train_images.size();
    load_labeled(data_dir / "target", train_images, labels);
    const std::vector<ImageBuffer> source(train_images.begin(), train_images.begin() + static_cast<long>(n_source));
    const std::vector<ImageBuffer> target(train_images.begin() + static_cast<long>(n_source), train_images.end());
    if (source.empty() || target.empty()) throw IoError("empty source or target set in " + data_dir.string());

    const SeedStreams streams(cfg.seed);
    FeatureNet net(source[0].width, source[0].height, cfg.selection.feature_dim, streams.seed("metrics"));
    Rng rng = streams.stream("metrics", 1);
    net.train(train_images, labels, cfg.selection.feature_epochs, cfg.selection.feature_batch,
              cfg.selection.feature_lr, rng);
    const GaussianStats target_stats = gaussian_stats(net.run(target).features);

    std::vector<int> epochs;
    std::vector<double> is_means, fids;
    for (const TranslatorCheckpoint& c : ckpts) {
      Translator tr(cfg.cut);
      tr.load(c.path);
      std::vector<ImageBuffer> fake;
      for (const ImageBuffer& img : source) fake.push_back(translate(tr, img));
      const FeatureOutput fo = net.run(fake);
      CheckpointScore s;
      s.epoch = c.epoch;
      s.path = c.path;
      s.is = inception_score(fo.probs, cfg.selection.is_splits);
      s.fid = frechet_distance(gaussian_stats(fo.features), target_stats);
      res.scores.push_back(s);
      epochs.push_back(s.epoch);
      is_means.push_back(s.is.mean);
      fids.push_back(s.fid);
      say(ctx, "epoch " + std::to_string(s.epoch) + ": IS " + std::to_string(s.is.mean) + " FID " +
                   std::to_string(s.fid));
    }
    const auto order = rank_sum_order(epochs, is_means, fids);
    for (std::size_t r = 0; r < order.size(); ++r) {
      CheckpointScore& s = res.scores[order[r].index];
      s.rank_sum = order[r].rank_sum;
      s.selected = r < static_cast<std::size_t>(cfg.selection.top_n);
    }
    res.best = fs::absolute(res.scores[order.front().index].path);

    std::ostringstream csv;
    csv.precision(10);
    csv << "epoch,is_mean,is_std,fid,rank_sum,selected\n";
    for (const CheckpointScore& s : res.scores)
      csv << s.epoch << ',' << s.is.mean << ',' << s.is.std << ',' << s.fid << ',' << s.rank_sum << ','
          << (s.selected ? 1 : 0) << '\n';
    write_text(out_dir / "scores.csv", csv.str());
    write_text(out_dir / "selected.txt", res.best.string() + "\n");
    m["selected"] = res.best.string();
    say(ctx, "selected " + res.best.string());
  });
  return res;
}

fs::path read_selection(const fs::path& selection_dir) {
  const fs::path f = selection_dir / "selected.txt";
  std::ifstream in(f);
  if (!in) throw IoError("missing file: " + f.string());
  std::string line;
  std::getline(in, line);
  if (line.empty()) throw IoError(f.string() + " is empty");
  return line;
}

// ------------------------------------------------------------------ policy

ExperimentSpec experiment_spec(const WorkbenchConfig& cfg, const fs::path& translator) {
  ExperimentSpec spec;
  spec.env = cfg.env;
  spec.policy = cfg.policy;
  spec.train = cfg.train;
  spec.scale = cfg.scale;
  spec.master_seed = cfg.seed;
  const fs::path ckpt = translator.empty() ? cfg.experiment.translator_checkpoint : translator;
  for (Variant v : cfg.experiment.variants) {
    InputConfig ic;
    ic.variant = v;
    ic.cut = cfg.cut;
    ic.embed = cfg.embed;
    if (ic.needs_translator()) {
      if (ckpt.empty())
        throw ConfigError(variant_name(v) +
                          " needs a translator checkpoint: pass --translator or set "
                          "[experiment] translator_checkpoint");
      ic.translator_checkpoint = ckpt;
    }
    ic.validate();
    spec.variants.push_back(ic);
  }
  return spec;
}

ExperimentReport cmd_train_policy(const CommandContext& ctx, const fs::path& out_dir,
                                  const fs::path& translator) {
  ctx.cfg.validate();
  const ExperimentSpec spec = experiment_spec(ctx.cfg, translator);
  const ExperimentPlan plan = plan_experiment(spec);
  if (!ctx.dry_run) prepare_out_dir(out_dir, ctx.force);
  ExperimentReport rep;
  rep.plan = plan;
  nlohmann::json extra{{"plan", plan_to_json(plan)}};
  if (!spec.variants.empty() && !translator.empty()) extra["translator"] = translator.string();
  with_manifest(ctx, "train-policy", out_dir, {out_dir}, extra, [&](nlohmann::json&) {
    say(ctx, "training " + std::to_string(plan.runs.size()) + " runs, " +
                 std::to_string(plan.evaluations.size()) + " evaluated checkpoints");
    rep = run_experiment(spec, out_dir, ctx.cfg.experiment.virtual_clock);
  });
  return rep;
}

EvalResult cmd_evaluate(const CommandContext& ctx, const fs::path& checkpoint, Variant variant,
                        const fs::path& translator, const fs::path& out_dir) {
  const WorkbenchConfig& cfg = ctx.cfg;
  cfg.validate();
  require_file(checkpoint);
  InputConfig ic;
  ic.variant = variant;
  ic.cut = cfg.cut;
  ic.embed = cfg.embed;
  ic.translator_checkpoint = translator.empty() ? cfg.experiment.translator_checkpoint : translator;
  if (ic.needs_translator() && !ic.translator_checkpoint.empty()) require_file(ic.translator_checkpoint);
  ic.validate();
  EvalResult res;
  with_manifest(ctx, "evaluate", out_dir, {out_dir / "eval.csv", out_dir / "episodes.csv"},
                {{"checkpoint", checkpoint.string()}, {"variant", variant_name(variant)}},
                [&](nlohmann::json& m) {
    const Observer obs(ic);
    const int w = cfg.env.camera.width, h = cfg.env.camera.height;
    PolicyNet p(variant, w, h, obs.length(w, h), cfg.policy, 0);
    p.load(checkpoint);
    const auto seeds = evaluation_seeds(SeedStreams(cfg.seed).seed("eval"), cfg.train.test_episodes);
    res = evaluate(p, obs, cfg.env, seeds);
    std::ostringstream ev, eps;
    write_eval_csv(ev, {res});
    eps << "checkpoint_idx,episode,seed,steps,success,diverged,return\n";
    for (const EpisodeRecord& r : res.episodes)
      eps << 0 << ',' << r.episode << ',' << r.seed << ',' << r.steps << ',' << r.success << ','
          << r.diverged << ',' << r.episode_return << '\n';
    write_text(out_dir / "eval.csv", ev.str());
    write_text(out_dir / "episodes.csv", eps.str());
    m["success_rate"] = res.success_rate;
    m["mean_steps"] = res.mean_steps;
    say(ctx, "success " + std::to_string(res.success_rate) + ", mean steps " +
                 std::to_string(res.mean_steps) + (res.steps_flagged ? " (no successes)" : ""));
  });
  return res;
}

// ------------------------------------------------------------------ report

std::vector<VariantSummary> cmd_report(const CommandContext& ctx, const fs::path& experiment_dir,
                                       const fs::path& out_dir) {
  require_dir(experiment_dir);
  struct Found {
    Variant v;
    std::vector<fs::path> runs;
  };
  std::vector<Found> found;
  for (Variant v : {Variant::Original, Variant::Translated, Variant::Embedded}) {
    const fs::path vd = experiment_dir / variant_name(v);
    if (!fs::is_directory(vd)) continue;
    Found f{v, {}};
    for (const auto& e : fs::directory_iterator(vd))
      if (e.is_directory() && e.path().filename().string().rfind("run_", 0) == 0) f.runs.push_back(e.path());
    std::sort(f.runs.begin(), f.runs.end());
    for (const fs::path& r : f.runs) {
      require_file(r / "train_log.csv");
      require_file(r / "eval.csv");
    }
    if (!f.runs.empty()) found.push_back(std::move(f));
  }
  if (found.empty()) throw IoError("no variant runs under " + experiment_dir.string());

  std::vector<VariantSummary> out;
  with_manifest(ctx, "report", out_dir, {out_dir}, {{"experiment_dir", experiment_dir.string()}},
                [&](nlohmann::json&) {
    std::ostringstream f7, f8, f9, f10, sum;
    for (auto* os : {&f7, &f8, &f9, &f10, &sum}) os->precision(10);
    f7 << "variant,run,wall_seconds,loss,loss_lowess\n";
    f8 << "variant,run,wall_seconds,mean_reward,reward_lowess\n";
    f9 << "variant,run,best_checkpoint,success_rate\n";
    f10 << "variant,run,best_checkpoint,mean_steps,steps_flagged\n";
    sum << "variant,runs,median_best_success_rate,median_best_mean_steps,median_loss_at_half_time\n";
    for (const Found& f : found) {
      const std::string vn = variant_name(f.v);
      std::vector<RunSummary> runs;
      for (std::size_t r = 0; r < f.runs.size(); ++r) {
        const auto log = read_train_log(f.runs[r] / "train_log.csv");
        const auto evals = read_eval_csv(f.runs[r] / "eval.csv");
        if (log.empty() || evals.empty()) throw IoError("empty run logs in " + f.runs[r].string());
        std::vector<double> t, loss, rew;
        for (const TrainLogRow& row : log) {
          t.push_back(row.wall_seconds);
          loss.push_back(row.loss);
          rew.push_back(row.mean_reward);
        }
        const auto ls = t.size() > 1 ? lowess(t, loss, 0.3) : loss;
        const auto rs = t.size() > 1 ? lowess(t, rew, 0.3) : rew;
        for (std::size_t i = 0; i < t.size(); ++i) {
          f7 << vn << ',' << r << ',' << t[i] << ',' << loss[i] << ',' << ls[i] << '\n';
          f8 << vn << ',' << r << ',' << t[i] << ',' << rew[i] << ',' << rs[i] << '\n';
        }
        const RunSummary s = summarize_run(static_cast<int>(r), log, evals);
        f9 << vn << ',' << r << ',' << s.best_checkpoint << ',' << s.best_success << '\n';
        f10 << vn << ',' << r << ',' << s.best_checkpoint << ',' << s.best_steps << ','
            << (s.best_steps_flagged ? 1 : 0) << '\n';
        runs.push_back(s);
      }
      const VariantSummary vs = summarize_variant(f.v, std::move(runs));
      sum << vn << ',' << vs.runs.size() << ',' << vs.median_best_success << ',' << vs.median_best_steps
          << ',' << vs.median_loss_at_half << '\n';
      out.push_back(vs);
    }
    write_text(out_dir / "fig7_loss.csv", f7.str());
    write_text(out_dir / "fig8_reward.csv", f8.str());
    write_text(out_dir / "fig9_success.csv", f9.str());
    write_text(out_dir / "fig10_steps.csv", f10.str());
    write_text(out_dir / "summary.csv", sum.str());
  });
  return out;
}

std::string cmd_reward(const CommandContext& ctx, const fs::path& frame, const fs::path& pose) {
  require_file(frame);
  require_file(pose);
  ImageBuffer img = read_image(frame);
  if (img.channels == 1) img = replicate_gray(img);
  const PoseFile p = read_pose_file(pose.string());
  return evaluate_reward(img, p.endpoints, p.grippers, ctx.cfg.env.reward).csv_row();
}

}  // namespace tribench
