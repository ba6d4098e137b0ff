#include "traj/config.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace traj {

namespace {

using nlohmann::json;

[[noreturn]] void unknown_key(const std::string& section, const std::string& key) {
  throw std::invalid_argument("config: unknown key '" +
                              (section.empty() ? key : section + "." + key) + "'");
}

// Pulls `key` out of `j` if present, enforcing that every key in `j` gets
// consumed by the section parser.
class Section {
 public:
  Section(const json& j, std::string name) : j_(j), name_(std::move(name)) {}

  template <typename T>
  void read(const char* key, T& out) {
    if (j_.contains(key)) {
      try {
        out = j_.at(key).get<T>();
      } catch (const json::exception&) {
        throw std::invalid_argument("config: key '" + name_ + "." + key + "' has the wrong type");
      }
    }
    seen_.push_back(key);
  }

  void finish() const {
    for (const auto& [key, value] : j_.items()) {
      if (std::find(seen_.begin(), seen_.end(), key) == seen_.end()) unknown_key(name_, key);
    }
  }

 private:
  const json& j_;
  std::string name_;
  std::vector<std::string> seen_;
};

std::string radius_to_string(const RefineConfig& cfg) {
  switch (cfg.radius_mode) {
    case RadiusMode::kAdaptiveExp:
      return "adaptive:exp";
    case RadiusMode::kAdaptiveLinear:
      return "adaptive:linear";
    case RadiusMode::kFixed: {
      std::ostringstream os;
      os << "fixed:" << cfg.fixed_radius;
      return os.str();
    }
  }
  return "adaptive:exp";
}

void radius_from_string(const std::string& s, RefineConfig& cfg) {
  if (s == "adaptive:exp") {
    cfg.radius_mode = RadiusMode::kAdaptiveExp;
  } else if (s == "adaptive:linear") {
    cfg.radius_mode = RadiusMode::kAdaptiveLinear;
  } else if (s.rfind("fixed:", 0) == 0) {
    cfg.radius_mode = RadiusMode::kFixed;
    try {
      cfg.fixed_radius = std::stod(s.substr(6));
    } catch (const std::exception&) {
      throw std::invalid_argument("config: bad fixed radius in '" + s + "'");
    }
    if (cfg.fixed_radius <= 0.0) {
      throw std::invalid_argument("config: fixed radius must be > 0");
    }
  } else {
    throw std::invalid_argument(
        "config: refine.radius must be 'fixed:<meters>', 'adaptive:linear' or 'adaptive:exp'");
  }
}

void encoding_from_string(const std::string& s, RefineConfig& cfg) {
  if (s == "anchor-centric") {
    cfg.anchor_centric = true;
  } else if (s == "agent-centric") {
    cfg.anchor_centric = false;
  } else {
    throw std::invalid_argument(
        "config: refine.encoding must be 'anchor-centric' or 'agent-centric'");
  }
}

RunConfig from_json(const json& j) {
  RunConfig cfg;
  Section root(j, "");
  root.read("seed", cfg.seed);

  if (j.contains("generator")) {
    Section s(j.at("generator"), "generator");
    s.read("n_scenarios", cfg.generator.n_scenarios);
    s.read("t_h", cfg.generator.t_h);
    s.read("t_f", cfg.generator.t_f);
    s.read("lane_count_min", cfg.generator.lane_count_min);
    s.read("lane_count_max", cfg.generator.lane_count_max);
    s.read("lane_length_min", cfg.generator.lane_length_min);
    s.read("lane_length_max", cfg.generator.lane_length_max);
    s.read("speed_min", cfg.generator.speed_min);
    s.read("speed_max", cfg.generator.speed_max);
    s.read("turn_probability", cfg.generator.turn_probability);
    s.read("noise_std", cfg.generator.noise_std);
    s.read("agent_count_min", cfg.generator.agent_count_min);
    s.read("agent_count_max", cfg.generator.agent_count_max);
    s.finish();
  }
  if (j.contains("backbone")) {
    Section s(j.at("backbone"), "backbone");
    s.read("hidden", cfg.backbone.hidden);
    s.read("k_modes", cfg.backbone.k_modes);
    s.read("n_heads", cfg.backbone.n_heads);
    s.read("dropout", cfg.backbone.dropout);
    s.finish();
  }
  if (j.contains("refine")) {
    Section s(j.at("refine"), "refine");
    s.read("n_anchors", cfg.refine.n_anchors);
    s.read("beta", cfg.refine.beta);
    s.read("r_min", cfg.refine.r_min);
    s.read("r_max", cfg.refine.r_max);
    s.read("hidden", cfg.refine.hidden);
    s.read("n_heads", cfg.refine.n_heads);
    s.read("max_context", cfg.refine.max_context);
    s.read("dropout", cfg.refine.dropout);
    std::string radius = radius_to_string(cfg.refine);
    s.read("radius", radius);
    radius_from_string(radius, cfg.refine);
    std::string encoding = cfg.refine.anchor_centric ? "anchor-centric" : "agent-centric";
    s.read("encoding", encoding);
    encoding_from_string(encoding, cfg.refine);
    s.finish();
  }
  if (j.contains("inference")) {
    Section s(j.at("inference"), "inference");
    s.read("q_bar", cfg.inference.q_bar);
    s.read("max_iterations", cfg.inference.max_iterations);
    s.finish();
  }
  if (j.contains("train")) {
    Section s(j.at("train"), "train");
    s.read("alpha", cfg.train.alpha);
    s.read("iterations", cfg.train.iterations);
    s.read("epochs", cfg.train.epochs);
    s.read("batch_size", cfg.train.batch_size);
    s.read("lr0", cfg.train.lr0);
    s.read("weight_decay", cfg.train.weight_decay);
    s.read("freeze_backbone", cfg.train.freeze_backbone);
    s.read("stop_gradient", cfg.train.stop_gradient);
    s.read("reg_all_iterations", cfg.train.reg_all_iterations);
    s.read("jobs", cfg.train.jobs);
    s.finish();
  }
  if (j.contains("eval")) {
    Section s(j.at("eval"), "eval");
    s.read("mode", cfg.eval.mode);
    s.read("iterations", cfg.eval.iterations);
    s.read("jobs", cfg.eval.jobs);
    s.finish();
  }
  if (j.contains("paths")) {
    Section s(j.at("paths"), "paths");
    s.read("data_dir", cfg.paths.data_dir);
    s.read("out_dir", cfg.paths.out_dir);
    s.finish();
  }
  for (const auto& [key, value] : j.items()) {
    static const char* known[] = {"seed",      "generator", "backbone", "refine",
                                  "inference", "train",     "eval",     "paths"};
    if (std::find_if(std::begin(known), std::end(known),
                     [&](const char* k) { return key == k; }) == std::end(known)) {
      unknown_key("", key);
    }
  }

  // Derived wiring and validation.
  cfg.generator.seed = cfg.seed;
  cfg.train.seed = cfg.seed;
  cfg.backbone.t_h = cfg.generator.t_h;
  cfg.backbone.t_f = cfg.generator.t_f;
  cfg.refine.d_backbone = cfg.backbone.hidden;
  validate_config(cfg.generator);
  validate_refine_config(cfg.refine, cfg.generator.t_f);
  validate_inference_config(cfg.inference);
  validate_train_config(cfg.train);
  if (cfg.eval.mode != "fixed" && cfg.eval.mode != "adaptive") {
    throw std::invalid_argument("config: eval.mode must be 'fixed' or 'adaptive'");
  }
  if (cfg.eval.iterations < 0) throw std::invalid_argument("config: eval.iterations must be >= 0");
  if (cfg.eval.jobs < 1) throw std::invalid_argument("config: eval.jobs must be >= 1");
  return cfg;
}

json to_json(const RunConfig& cfg) {
  json j;
  j["seed"] = cfg.seed;
  j["generator"] = {{"n_scenarios", cfg.generator.n_scenarios},
                    {"t_h", cfg.generator.t_h},
                    {"t_f", cfg.generator.t_f},
                    {"lane_count_min", cfg.generator.lane_count_min},
                    {"lane_count_max", cfg.generator.lane_count_max},
                    {"lane_length_min", cfg.generator.lane_length_min},
                    {"lane_length_max", cfg.generator.lane_length_max},
                    {"speed_min", cfg.generator.speed_min},
                    {"speed_max", cfg.generator.speed_max},
                    {"turn_probability", cfg.generator.turn_probability},
                    {"noise_std", cfg.generator.noise_std},
                    {"agent_count_min", cfg.generator.agent_count_min},
                    {"agent_count_max", cfg.generator.agent_count_max}};
  j["backbone"] = {{"hidden", cfg.backbone.hidden},
                   {"k_modes", cfg.backbone.k_modes},
                   {"n_heads", cfg.backbone.n_heads},
                   {"dropout", cfg.backbone.dropout}};
  j["refine"] = {{"n_anchors", cfg.refine.n_anchors},
                 {"beta", cfg.refine.beta},
                 {"r_min", cfg.refine.r_min},
                 {"r_max", cfg.refine.r_max},
                 {"hidden", cfg.refine.hidden},
                 {"n_heads", cfg.refine.n_heads},
                 {"max_context", cfg.refine.max_context},
                 {"dropout", cfg.refine.dropout},
                 {"radius", radius_to_string(cfg.refine)},
                 {"encoding", cfg.refine.anchor_centric ? "anchor-centric" : "agent-centric"}};
  j["inference"] = {{"q_bar", cfg.inference.q_bar},
                    {"max_iterations", cfg.inference.max_iterations}};
  j["train"] = {{"alpha", cfg.train.alpha},
                {"iterations", cfg.train.iterations},
                {"epochs", cfg.train.epochs},
                {"batch_size", cfg.train.batch_size},
                {"lr0", cfg.train.lr0},
                {"weight_decay", cfg.train.weight_decay},
                {"freeze_backbone", cfg.train.freeze_backbone},
                {"stop_gradient", cfg.train.stop_gradient},
                {"reg_all_iterations", cfg.train.reg_all_iterations},
                {"jobs", cfg.train.jobs}};
  j["eval"] = {{"mode", cfg.eval.mode},
               {"iterations", cfg.eval.iterations},
               {"jobs", cfg.eval.jobs}};
  j["paths"] = {{"data_dir", cfg.paths.data_dir}, {"out_dir", cfg.paths.out_dir}};
  return j;
}

void apply_override(json& j, const std::string& setting) {
  const size_t eq = setting.find('=');
  if (eq == std::string::npos) {
    throw std::invalid_argument("--set expects section.key=value, got '" + setting + "'");
  }
  const std::string path = setting.substr(0, eq);
  const std::string value = setting.substr(eq + 1);

  json parsed;
  try {
    parsed = json::parse(value);
  } catch (const json::exception&) {
    parsed = value;  // plain string
  }

  json* node = &j;
  std::stringstream ss(path);
  std::string part;
  std::vector<std::string> parts;
  while (std::getline(ss, part, '.')) parts.push_back(part);
  if (parts.empty()) throw std::invalid_argument("--set: empty key path");
  for (size_t i = 0; i + 1 < parts.size(); ++i) node = &(*node)[parts[i]];
  (*node)[parts.back()] = parsed;
}

}  // namespace

RunConfig default_config() { return from_json(json::object()); }

RunConfig parse_config_text(const std::string& text, const std::vector<std::string>& overrides) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("config: parse error: ") + e.what());
  }
  for (const auto& setting : overrides) apply_override(j, setting);
  return from_json(j);
}

RunConfig load_config(const std::string& path, const std::vector<std::string>& overrides) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config: " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_config_text(buf.str(), overrides);
}

std::string config_to_json_text(const RunConfig& cfg) { return to_json(cfg).dump(2); }

}  // namespace traj
