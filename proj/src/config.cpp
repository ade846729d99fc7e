#include "grendel/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "grendel/error.hpp"

namespace grendel {

namespace {

struct Field {
  std::function<void(Config&, const std::string&)> set;
  std::function<std::string(const Config&)> get;
};

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

template <typename T>
T parse_number(const std::string& text) {
  T v{};
  const std::string s = trim(text);
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size() || s.empty()) throw Error("expected a number, got '" + text + "'");
  return v;
}

bool parse_bool(const std::string& text) {
  const std::string s = trim(text);
  if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
  if (s == "false" || s == "0" || s == "no" || s == "off") return false;
  throw Error("expected true or false, got '" + text + "'");
}

std::vector<int> parse_int_list(const std::string& text) {
  std::vector<int> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!trim(item).empty()) out.push_back(parse_number<int>(item));
  }
  return out;
}

std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

template <typename T>
std::string to_text(const T& v) {
  if constexpr (std::is_same_v<T, bool>) {
    return v ? "true" : "false";
  } else if constexpr (std::is_same_v<T, double>) {
    return format_double(v);
  } else if constexpr (std::is_same_v<T, std::string>) {
    return v;
  } else if constexpr (std::is_same_v<T, std::vector<int>>) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
    return s;
  } else if constexpr (std::is_same_v<T, LrRule> || std::is_same_v<T, MomentumRule>) {
    return std::string(to_string(v));
  } else {
    return std::to_string(v);
  }
}

template <typename T>
T from_text(const std::string& s) {
  if constexpr (std::is_same_v<T, bool>) {
    return parse_bool(s);
  } else if constexpr (std::is_same_v<T, std::string>) {
    return trim(s);
  } else if constexpr (std::is_same_v<T, std::vector<int>>) {
    return parse_int_list(s);
  } else if constexpr (std::is_same_v<T, LrRule>) {
    return parse_lr_rule(trim(s));
  } else if constexpr (std::is_same_v<T, MomentumRule>) {
    return parse_momentum_rule(trim(s));
  } else {
    return parse_number<T>(s);
  }
}

template <typename Access>
Field field(Access access) {
  using T = std::remove_reference_t<decltype(access(std::declval<Config&>()))>;
  return {[access](Config& c, const std::string& s) { access(c) = from_text<T>(s); },
          [access](const Config& c) { return to_text<T>(access(const_cast<Config&>(c))); }};
}

const std::map<std::string, Field>& registry() {
  static const std::map<std::string, Field> fields = [] {
    std::map<std::string, Field> f;
    // engine
    f["engine.workers"] = field([](Config& c) -> auto& { return c.engine.workers; });
    f["engine.batch_size"] = field([](Config& c) -> auto& { return c.engine.batch_size; });
    f["engine.rebalance_pixels"] = field([](Config& c) -> auto& { return c.engine.rebalance_pixels; });
    f["engine.rebalance_gaussians"] = field([](Config& c) -> auto& { return c.engine.rebalance_gaussians; });
    f["engine.deterministic_cost"] = field([](Config& c) -> auto& { return c.engine.deterministic_cost; });
    f["engine.float32"] = field([](Config& c) -> auto& { return c.engine.float32; });
    f["engine.threads"] = field([](Config& c) -> auto& { return c.engine.threads; });
    f["engine.seed"] = field([](Config& c) -> auto& { return c.engine.seed; });
    // optimizer
    static const char* lr_keys[kNumGroups] = {"optimizer.lr_position", "optimizer.lr_scale",  "optimizer.lr_rotation",
                                              "optimizer.lr_opacity",  "optimizer.lr_sh_dc", "optimizer.lr_sh_rest"};
    for (int g = 0; g < kNumGroups; ++g) {
      f[lr_keys[g]] = field([g](Config& c) -> auto& { return c.engine.hyper.base_lr[g]; });
    }
    f["optimizer.lr_position_final"] = field([](Config& c) -> auto& { return c.engine.hyper.position_lr_final; });
    f["optimizer.lr_position_max_images"] =
        field([](Config& c) -> auto& { return c.engine.hyper.position_lr_max_images; });
    f["optimizer.beta1"] = field([](Config& c) -> auto& { return c.engine.hyper.beta1; });
    f["optimizer.beta2"] = field([](Config& c) -> auto& { return c.engine.hyper.beta2; });
    f["optimizer.eps"] = field([](Config& c) -> auto& { return c.engine.hyper.eps; });
    f["optimizer.lr_rule"] = field([](Config& c) -> auto& { return c.engine.hyper.lr_rule; });
    f["optimizer.reset_on_batch_change"] =
        field([](Config& c) -> auto& { return c.engine.hyper.reset_on_batch_change; });
    f["optimizer.momentum_rule"] = field([](Config& c) -> auto& { return c.engine.hyper.momentum_rule; });
    // densification
    f["densify.enabled"] = field([](Config& c) -> auto& { return c.engine.densify; });
    f["densify.grad_threshold"] = field([](Config& c) -> auto& { return c.engine.densify_config.grad_threshold; });
    f["densify.scale_split_threshold"] =
        field([](Config& c) -> auto& { return c.engine.densify_config.scale_split_threshold; });
    f["densify.min_opacity"] = field([](Config& c) -> auto& { return c.engine.densify_config.min_opacity; });
    f["densify.max_screen_radius"] =
        field([](Config& c) -> auto& { return c.engine.densify_config.max_screen_radius; });
    f["densify.split_scale_divisor"] =
        field([](Config& c) -> auto& { return c.engine.densify_config.split_scale_divisor; });
    f["densify.max_gaussians"] = field([](Config& c) -> auto& { return c.engine.densify_config.max_gaussians; });
    f["densify.interval_images"] = field([](Config& c) -> auto& { return c.engine.densify_config.interval_images; });
    f["densify.start_images"] = field([](Config& c) -> auto& { return c.engine.densify_config.start_images; });
    f["densify.stop_images"] = field([](Config& c) -> auto& { return c.engine.densify_config.stop_images; });
    f["densify.opacity_reset_images"] =
        field([](Config& c) -> auto& { return c.engine.densify_config.opacity_reset_images; });
    f["densify.opacity_reset_value"] =
        field([](Config& c) -> auto& { return c.engine.densify_config.opacity_reset_value; });
    // rendering and loss
    f["render.near_clip"] = field([](Config& c) -> auto& { return c.engine.pipeline.projection.near_clip; });
    f["render.dilation"] = field([](Config& c) -> auto& { return c.engine.pipeline.projection.dilation; });
    f["render.sh_degree"] = field([](Config& c) -> auto& { return c.engine.pipeline.projection.sh_degree; });
    f["render.alpha_min"] = field([](Config& c) -> auto& { return c.engine.pipeline.render.alpha_min; });
    f["render.alpha_cap"] = field([](Config& c) -> auto& { return c.engine.pipeline.render.alpha_cap; });
    f["render.transmittance_min"] =
        field([](Config& c) -> auto& { return c.engine.pipeline.render.transmittance_min; });
    f["loss.lambda_ssim"] = field([](Config& c) -> auto& { return c.engine.pipeline.loss.lambda_ssim; });
    f["loss.ssim_window"] = field([](Config& c) -> auto& { return c.engine.pipeline.loss.ssim.window; });
    f["loss.ssim_sigma"] = field([](Config& c) -> auto& { return c.engine.pipeline.loss.ssim.sigma; });
    // training run
    f["train.manifest"] = field([](Config& c) -> auto& { return c.train.manifest; });
    f["train.output_dir"] = field([](Config& c) -> auto& { return c.train.output_dir; });
    f["train.resume"] = field([](Config& c) -> auto& { return c.train.resume; });
    f["train.total_images"] = field([](Config& c) -> auto& { return c.train.total_images; });
    f["train.checkpoint_every"] = field([](Config& c) -> auto& { return c.train.checkpoint_every; });
    f["train.max_points"] = field([](Config& c) -> auto& { return c.train.max_points; });
    f["init.opacity"] = field([](Config& c) -> auto& { return c.init.initial_opacity; });
    f["init.neighbors"] = field([](Config& c) -> auto& { return c.init.neighbors; });
    // synthetic scenes
    f["synth.count"] = field([](Config& c) -> auto& { return c.synth.count; });
    f["synth.views"] = field([](Config& c) -> auto& { return c.synth.views; });
    f["synth.width"] = field([](Config& c) -> auto& { return c.synth.width; });
    f["synth.height"] = field([](Config& c) -> auto& { return c.synth.height; });
    f["synth.extent"] = field([](Config& c) -> auto& { return c.synth.extent; });
    f["synth.camera_distance"] = field([](Config& c) -> auto& { return c.synth.camera_distance; });
    f["synth.scale_min"] = field([](Config& c) -> auto& { return c.synth.scale_min; });
    f["synth.scale_max"] = field([](Config& c) -> auto& { return c.synth.scale_max; });
    f["synth.opacity_min"] = field([](Config& c) -> auto& { return c.synth.opacity_min; });
    f["synth.opacity_max"] = field([](Config& c) -> auto& { return c.synth.opacity_max; });
    f["synth.view_dependence"] = field([](Config& c) -> auto& { return c.synth.view_dependence; });
    f["synth.skew"] = field([](Config& c) -> auto& { return c.synth.skew; });
    f["synth.skew_band"] = field([](Config& c) -> auto& { return c.synth.skew_band; });
    f["synth.init_fraction"] = field([](Config& c) -> auto& { return c.synth.init_fraction; });
    f["synth.init_jitter"] = field([](Config& c) -> auto& { return c.synth.init_jitter; });
    f["synth.seed"] = field([](Config& c) -> auto& { return c.synth.seed; });
    // experiments
    f["experiment.trials"] = field([](Config& c) -> auto& { return c.experiment.trials; });
    f["experiment.batch_sizes"] = field([](Config& c) -> auto& { return c.experiment.batch_sizes; });
    f["experiment.group"] = field([](Config& c) -> auto& { return c.experiment.group; });
    f["experiment.sampling"] = field([](Config& c) -> auto& { return c.experiment.sampling; });
    f["experiment.iid_views"] = field([](Config& c) -> auto& { return c.experiment.iid_views; });
    f["experiment.iid_dimension"] = field([](Config& c) -> auto& { return c.experiment.iid_dimension; });
    f["experiment.iid_clusters"] = field([](Config& c) -> auto& { return c.experiment.iid_clusters; });
    f["experiment.trajectory_batch_sizes"] =
        field([](Config& c) -> auto& { return c.experiment.trajectory_batch_sizes; });
    f["experiment.horizon_images"] = field([](Config& c) -> auto& { return c.experiment.horizon_images; });
    f["experiment.log_every_images"] = field([](Config& c) -> auto& { return c.experiment.log_every_images; });
    return f;
  }();
  return fields;
}

void set_key(Config& config, const std::string& key, const std::string& value) {
  const auto& fields = registry();
  auto it = fields.find(key);
  if (it == fields.end()) throw Error("unknown config key '" + key + "'");
  try {
    it->second.set(config, value);
  } catch (const Error& e) {
    throw Error("config key '" + key + "': " + e.what());
  }
}

// Line of `key` inside `[section]`, for error messages; 0 when not found.
int find_line(const std::filesystem::path& path, const std::string& dotted) {
  const auto dot = dotted.find('.');
  const std::string section = dotted.substr(0, dot), key = dotted.substr(dot + 1);
  std::ifstream in(path);
  std::string line, current;
  for (int n = 1; std::getline(in, line); ++n) {
    const std::string t = trim(line);
    if (t.size() > 2 && t.front() == '[' && t.back() == ']') {
      current = trim(t.substr(1, t.size() - 2));
    } else if (current == section && t.find('=') != std::string::npos && trim(t.substr(0, t.find('='))) == key) {
      return n;
    }
  }
  return 0;
}

}  // namespace

Config load_config(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw Error("config file '" + path.string() + "' does not exist");
  boost::property_tree::ptree tree;
  try {
    boost::property_tree::read_ini(path.string(), tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw Error("config '" + path.string() + "' line " + std::to_string(e.line()) + ": " + e.message());
  }
  Config config;
  for (const auto& [section, body] : tree) {
    if (!body.data().empty()) {
      throw Error("config '" + path.string() + "': key '" + section + "' must live inside a [section]");
    }
    for (const auto& [key, value] : body) {
      const std::string dotted = section + "." + key;
      try {
        set_key(config, dotted, value.get_value<std::string>());
      } catch (const Error& e) {
        throw Error("config '" + path.string() + "' line " + std::to_string(find_line(path, dotted)) + ": " + e.what());
      }
    }
  }
  return config;
}

void apply_override(Config& config, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw Error("override '" + assignment + "' is not of the form section.key=value");
  set_key(config, trim(assignment.substr(0, eq)), assignment.substr(eq + 1));
}

std::string dump_config(const Config& config) {
  std::ostringstream out;
  std::string section;
  for (const auto& [key, f] : registry()) {
    const auto dot = key.find('.');
    const std::string s = key.substr(0, dot);
    if (s != section) {
      if (!section.empty()) out << '\n';
      out << '[' << s << "]\n";
      section = s;
    }
    out << key.substr(dot + 1) << " = " << f.get(config) << '\n';
  }
  return out.str();
}

std::vector<std::string> config_keys() {
  std::vector<std::string> keys;
  for (const auto& [k, f] : registry()) keys.push_back(k);
  return keys;
}

}  // namespace grendel
