#include "tribench/config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

namespace tribench {

void DatasetConfig::validate() const {
  if (count_source < 1 || count_target < 1) throw ConfigError("dataset: image counts must be >= 1");
  if (max_pulls < 0) throw ConfigError("dataset: max_pulls must be >= 0");
  if (style.gamma <= 0.0 || style.noise_stddev < 0.0 || style.blur_radius < 0 ||
      style.vignette_strength < 0.0 || style.vignette_strength > 1.0)
    throw ConfigError("dataset: style parameters out of range");
}

void SelectionConfig::validate() const {
  if (feature_dim < 2) throw ConfigError("selection: feature_dim must be >= 2");
  if (feature_epochs < 0 || feature_batch < 1) throw ConfigError("selection: bad feature-net schedule");
  if (!(feature_lr > 0.0)) throw ConfigError("selection: feature_lr must be > 0");
  if (is_splits < 1 || top_n < 1) throw ConfigError("selection: is_splits and top_n must be >= 1");
}

void ExperimentConfig::validate() const {
  if (variants.empty()) throw ConfigError("experiment: no variants");
  for (std::size_t i = 0; i < variants.size(); ++i)
    for (std::size_t j = i + 1; j < variants.size(); ++j)
      if (variants[i] == variants[j]) throw ConfigError("experiment: duplicate variant");
  if (!translator_checkpoint.empty() && !std::filesystem::is_regular_file(translator_checkpoint))
    throw ConfigError("translator checkpoint not found: " + translator_checkpoint.string());
}

void WorkbenchConfig::validate() const {
  if (!(scale > 0.0)) throw ConfigError("run: scale must be > 0");
  env.validate();
  dataset.validate();
  cut.validate();
  selection.validate();
  embed.validate();
  policy.validate();
  train.validate();
  experiment.validate();
  if (embed.L > cut.taps || embed.k != cut.embed_dim)
    throw ConfigError("embed: L must be <= cut.taps and k must equal cut.embed_dim");
  if (env.camera.width % 16 != 0 || env.camera.height % 16 != 0)
    throw ConfigError("camera: width and height must be multiples of 16");
}

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(trim(item));
  if (!s.empty() && s.back() == ',') out.emplace_back();
  return out;
}

template <typename T>
T parse_number(const std::string& s) {
  T v{};
  const char* end = s.data() + s.size();
  const auto [p, ec] = std::from_chars(s.data(), end, v);
  if (ec != std::errc() || p != end || s.empty()) throw ConfigError("not a number: '" + s + "'");
  return v;
}

template <typename T>
std::string format_number(T v) {
  char buf[64];
  const auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, p);
}

std::vector<double> parse_doubles(const std::string& s, std::size_t n) {
  const auto items = split_list(s);
  if (items.size() != n)
    throw ConfigError("expected " + std::to_string(n) + " comma-separated numbers, got '" + s + "'");
  std::vector<double> out;
  for (const auto& it : items) out.push_back(parse_number<double>(it));
  return out;
}

struct Field {
  std::function<void(const std::string&)> set;
  std::function<std::string()> get;
};

struct Entry {
  std::string section;
  std::string key;
  Field field;
};

Field f(int& x) {
  return {[&x](const std::string& s) { x = parse_number<int>(s); }, [&x] { return format_number(x); }};
}
Field f(long& x) {
  return {[&x](const std::string& s) { x = parse_number<long>(s); }, [&x] { return format_number(x); }};
}
Field f(std::uint64_t& x) {
  return {[&x](const std::string& s) { x = parse_number<std::uint64_t>(s); },
          [&x] { return format_number(x); }};
}
Field f(double& x) {
  return {[&x](const std::string& s) { x = parse_number<double>(s); }, [&x] { return format_number(x); }};
}
Field f(bool& x) {
  return {[&x](const std::string& s) {
            if (s == "true" || s == "1") x = true;
            else if (s == "false" || s == "0") x = false;
            else throw ConfigError("not a boolean: '" + s + "'");
          },
          [&x] { return std::string(x ? "true" : "false"); }};
}
Field f(std::filesystem::path& x) {
  return {[&x](const std::string& s) { x = s; }, [&x] { return x.string(); }};
}
Field f(Vec3& x) {
  return {[&x](const std::string& s) {
            const auto v = parse_doubles(s, 3);
            x = Vec3(v[0], v[1], v[2]);
          },
          [&x] { return format_number(x.x()) + ", " + format_number(x.y()) + ", " + format_number(x.z()); }};
}
Field f(Eigen::Vector2d& x) {
  return {[&x](const std::string& s) {
            const auto v = parse_doubles(s, 2);
            x = Eigen::Vector2d(v[0], v[1]);
          },
          [&x] { return format_number(x.x()) + ", " + format_number(x.y()); }};
}
template <typename Arr>
Field int_triple(Arr& a, Arr& b, Arr& c, int lo, int hi) {
  return {[&, lo, hi](const std::string& s) {
            const auto items = split_list(s);
            if (items.size() != 3) throw ConfigError("expected 3 integers, got '" + s + "'");
            Arr* dst[3] = {&a, &b, &c};
            for (int i = 0; i < 3; ++i) {
              const int v = parse_number<int>(items[static_cast<std::size_t>(i)]);
              if (v < lo || v > hi) throw ConfigError("value out of range in '" + s + "'");
              *dst[i] = static_cast<Arr>(v);
            }
          },
          [&] {
            return format_number(static_cast<int>(a)) + ", " + format_number(static_cast<int>(b)) +
                   ", " + format_number(static_cast<int>(c));
          }};
}
Field f(Bgr& x) { return int_triple(x[0], x[1], x[2], 0, 255); }
Field f(Hsv& x) { return int_triple(x.h, x.s, x.v, 0, 255); }
Field f(std::vector<int>& x) {
  return {[&x](const std::string& s) {
            x.clear();
            for (const auto& it : split_list(s)) x.push_back(parse_number<int>(it));
          },
          [&x] {
            std::string out;
            for (std::size_t i = 0; i < x.size(); ++i) out += (i ? ", " : "") + format_number(x[i]);
            return out;
          }};
}
Field f(std::vector<Variant>& x) {
  return {[&x](const std::string& s) {
            x.clear();
            for (const auto& it : split_list(s)) x.push_back(parse_variant(it));
          },
          [&x] {
            std::string out;
            for (std::size_t i = 0; i < x.size(); ++i) out += (i ? ", " : "") + variant_name(x[i]);
            return out;
          }};
}
Field f(LocationPolicy& x) {
  return {[&x](const std::string& s) {
            if (s == "fixed_global") x = LocationPolicy::FixedGlobal;
            else if (s == "per_episode") x = LocationPolicy::PerEpisode;
            else throw ConfigError("location policy must be fixed_global or per_episode, got '" + s + "'");
          },
          [&x] { return std::string(x == LocationPolicy::FixedGlobal ? "fixed_global" : "per_episode"); }};
}

// The optional second hue band is exposed as an enable flag plus bounds.
struct BandProxy {
  std::optional<HsvBand>& band;
  bool enabled;
  HsvBand value;
};

std::vector<Entry> table(WorkbenchConfig& c, BandProxy& second) {
  SimConfig& s = c.env.sim;
  Camera& cam = c.env.camera;
  RenderStyle& st = c.env.style;
  RewardConfig& r = c.env.reward;
  return {
      {"run", "seed", f(c.seed)},
      {"run", "scale", f(c.scale)},

      {"sim", "grid_nx", f(s.grid_nx)},
      {"sim", "grid_ny", f(s.grid_ny)},
      {"sim", "sheet_size", f(s.sheet_size)},
      {"sim", "origin", f(s.origin)},
      {"sim", "dt", f(s.dt)},
      {"sim", "solver_iters", f(s.solver_iters)},
      {"sim", "gravity", f(s.gravity)},
      {"sim", "damping", f(s.damping)},
      {"sim", "stiffness", f(s.stiffness)},
      {"sim", "tissue_mass", f(s.tissue_mass)},
      {"sim", "grasp_radius", f(s.grasp_radius)},
      {"sim", "pull_substeps", f(s.pull_substeps)},
      {"sim", "settle_steps", f(s.settle_steps)},
      {"sim", "workspace_min", f(s.workspace.min)},
      {"sim", "workspace_max", f(s.workspace.max)},
      {"sim", "pin_left", f(s.pin_left)},
      {"sim", "pin_right", f(s.pin_right)},
      {"sim", "line_row", f(s.line_row)},
      {"sim", "line_span_lo", f(s.line_span_lo)},
      {"sim", "line_span_hi", f(s.line_span_hi)},
      {"sim", "fold_row", f(s.fold_row)},
      {"sim", "fold_radius", f(s.fold_radius)},
      {"sim", "gripper_home", f(s.gripper_home)},

      {"camera", "eye", f(cam.eye)},
      {"camera", "look_at", f(cam.look_at)},
      {"camera", "up", f(cam.up)},
      {"camera", "vertical_fov", f(cam.vertical_fov)},
      {"camera", "width", f(cam.width)},
      {"camera", "height", f(cam.height)},

      {"render", "background", f(st.background)},
      {"render", "tissue", f(st.tissue)},
      {"render", "line", f(st.line)},
      {"render", "gripper", f(st.gripper)},
      {"render", "gripper_radius", f(st.gripper_radius)},
      {"render", "ambient", f(st.ambient)},

      {"reward", "eps1_fraction", f(r.eps1_fraction)},
      {"reward", "eps1", f(r.eps1)},
      {"reward", "eps2", f(r.eps2)},
      {"reward", "hsv_lower", f(r.bounds.band.lower)},
      {"reward", "hsv_upper", f(r.bounds.band.upper)},
      {"reward", "second_band", f(second.enabled)},
      {"reward", "hsv2_lower", f(second.value.lower)},
      {"reward", "hsv2_upper", f(second.value.upper)},

      {"env", "horizon", f(c.env.horizon)},
      {"env", "reset_jitter", f(c.env.reset_jitter)},

      {"dataset", "count_source", f(c.dataset.count_source)},
      {"dataset", "count_target", f(c.dataset.count_target)},
      {"dataset", "max_pulls", f(c.dataset.max_pulls)},
      {"dataset", "style_gamma", f(c.dataset.style.gamma)},
      {"dataset", "style_vignette", f(c.dataset.style.vignette_strength)},
      {"dataset", "style_noise", f(c.dataset.style.noise_stddev)},
      {"dataset", "style_blur", f(c.dataset.style.blur_radius)},

      {"cut", "lambda_gan", f(c.cut.lambda_gan)},
      {"cut", "lambda_x", f(c.cut.lambda_x)},
      {"cut", "lambda_y", f(c.cut.lambda_y)},
      {"cut", "tau", f(c.cut.tau)},
      {"cut", "taps", f(c.cut.taps)},
      {"cut", "patches", f(c.cut.patches)},
      {"cut", "embed_dim", f(c.cut.embed_dim)},
      {"cut", "a", f(c.cut.a)},
      {"cut", "b", f(c.cut.b)},
      {"cut", "c", f(c.cut.c)},
      {"cut", "epochs", f(c.cut.epochs)},
      {"cut", "save_every", f(c.cut.save_every)},
      {"cut", "batch_size", f(c.cut.batch_size)},
      {"cut", "lr", f(c.cut.lr)},
      {"cut", "beta1", f(c.cut.beta1)},
      {"cut", "beta2", f(c.cut.beta2)},
      {"cut", "channels", f(c.cut.channels)},
      {"cut", "disc_channels", f(c.cut.disc_channels)},

      {"selection", "feature_dim", f(c.selection.feature_dim)},
      {"selection", "feature_epochs", f(c.selection.feature_epochs)},
      {"selection", "feature_batch", f(c.selection.feature_batch)},
      {"selection", "feature_lr", f(c.selection.feature_lr)},
      {"selection", "is_splits", f(c.selection.is_splits)},
      {"selection", "top_n", f(c.selection.top_n)},

      {"embed", "L", f(c.embed.L)},
      {"embed", "S", f(c.embed.S)},
      {"embed", "k", f(c.embed.k)},
      {"embed", "locations", f(c.embed.policy)},
      {"embed", "location_seed", f(c.embed.location_seed)},

      {"policy", "hidden", f(c.policy.hidden)},
      {"policy", "init_log_std", f(c.policy.init_log_std)},
      {"policy", "log_std_min", f(c.policy.log_std_min)},
      {"policy", "log_std_max", f(c.policy.log_std_max)},

      {"train", "batch_size", f(c.train.batch_size)},
      {"train", "lr", f(c.train.lr)},
      {"train", "entropy_coef", f(c.train.entropy_coef)},
      {"train", "epochs", f(c.train.epochs)},
      {"train", "clip", f(c.train.clip)},
      {"train", "gamma", f(c.train.gamma)},
      {"train", "gae_lambda", f(c.train.gae_lambda)},
      {"train", "value_coef", f(c.train.value_coef)},
      {"train", "n_envs", f(c.train.n_envs)},
      {"train", "rollout_steps", f(c.train.rollout_steps)},
      {"train", "total_steps_image", f(c.train.total_steps_image)},
      {"train", "total_steps_embedded", f(c.train.total_steps_embedded)},
      {"train", "runs_per_condition", f(c.train.runs_per_condition)},
      {"train", "checkpoints_per_run", f(c.train.checkpoints_per_run)},
      {"train", "test_episodes", f(c.train.test_episodes)},

      {"experiment", "variants", f(c.experiment.variants)},
      {"experiment", "translator_checkpoint", f(c.experiment.translator_checkpoint)},
      {"experiment", "virtual_clock", f(c.experiment.virtual_clock)},
  };
}

BandProxy proxy_for(WorkbenchConfig& c) {
  auto& b = c.env.reward.bounds.second_band;
  return {b, b.has_value(), b.value_or(HsvBand{{170, 100, 100}, {179, 255, 255}})};
}

void commit(BandProxy& p) {
  if (p.enabled) p.band = p.value;
  else p.band.reset();
}

}  // namespace

WorkbenchConfig parse_config(std::string_view text, const std::string& origin) {
  WorkbenchConfig cfg;
  BandProxy second = proxy_for(cfg);
  const std::vector<Entry> entries = table(cfg, second);
  std::istringstream in{std::string(text)};
  std::string line, section;
  int lineno = 0;
  auto fail = [&](const std::string& msg) {
    throw ConfigError(origin + ":" + std::to_string(lineno) + ": " + msg);
  };
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    const std::string body = trim(hash == std::string::npos ? line : line.substr(0, hash));
    if (body.empty()) continue;
    if (body.front() == '[') {
      if (body.back() != ']') fail("malformed section header");
      section = trim(body.substr(1, body.size() - 2));
      bool known = false;
      for (const auto& e : entries) known = known || e.section == section;
      if (!known) fail("unknown section [" + section + "]");
      continue;
    }
    const auto eq = body.find('=');
    if (eq == std::string::npos) fail("expected 'key = value'");
    if (section.empty()) fail("key outside of any [section]");
    const std::string key = trim(body.substr(0, eq));
    const std::string value = trim(body.substr(eq + 1));
    auto it = std::find_if(entries.begin(), entries.end(),
                           [&](const Entry& e) { return e.section == section && e.key == key; });
    if (it == entries.end()) fail("unknown key '" + key + "' in [" + section + "]");
    try {
      it->field.set(value);
    } catch (const ConfigError& e) {
      fail(section + "." + key + ": " + e.what());
    }
  }
  commit(second);
  cfg.validate();
  return cfg;
}

WorkbenchConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), path.string());
}

std::string dump_config(const WorkbenchConfig& cfg) {
  WorkbenchConfig c = cfg;
  BandProxy second = proxy_for(c);
  std::string out, section;
  for (const Entry& e : table(c, second)) {
    if (e.section != section) {
      section = e.section;
      out += (out.empty() ? "[" : "\n[") + section + "]\n";
    }
    out += e.key + " = " + e.field.get() + "\n";
  }
  return out;
}

}  // namespace tribench
