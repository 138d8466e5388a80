#include "semiseg/config.hpp"

#include <cmath>
#include <fstream>

namespace semiseg::config {

json defaults() {
  return json{
      {"seed", 1},
      {"data",
       {{"dir", "data/train"},
        {"eval_dir", "data/eval"},
        {"num_classes", 2},
        {"ratio", 0.1},
        {"gen", {{"count", 200}, {"eval_count", 100}}},
        {"scene",
         {{"height", 64},
          {"width", 64},
          {"shapes_min", 1},
          {"shapes_max", 3},
          {"texture_amplitude", 0.25},
          {"specular_prob", 0.5},
          {"fg_min", 0.03},
          {"fg_max", 0.6}}}}},
      {"model",
       {{"depth", 3}, {"base_channels", 16}, {"norm_groups", 8}, {"max_channels", 256}}},
      {"augment",
       {{"weak",
         {{"enabled", true},
          {"kinds",
           json::array({"hflip", "vflip", "rot90", "rot180", "rot270", "crop-resize"})},
          {"crop_min_axis_frac", 0.7071067811865476}}},
        {"strong",
         {{"enabled", true},
          {"contrast", json::array({0.6, 1.6})},
          {"brightness", json::array({-0.3, 0.3})},
          {"color", json::array({0.7, 1.3})},
          {"sharpness", json::array({0.0, 2.0})},
          {"noise_sigma", json::array({0.0, 0.08})},
          {"posterize_bits", json::array({3, 6})},
          {"solarize", json::array({0.5, 1.0})}}}}},
      {"pseudo", {{"temperature", 0.5}, {"threshold", 0.9}, {"hard_labels", false}}},
      {"attack", {{"method", "ifgsm"}, {"epsilon", 0.08}, {"steps", 5}}},
      {"loss", {{"w_max", 1.0}, {"ramp_frac", 0.3}, {"ramp_epochs", 0}, {"smooth", 1.0}}},
      {"trainer",
       {{"epochs", 60},
        {"batch_size", 8},
        {"lr_ini", 0.01},
        {"eta", 0.7},
        {"momentum", 0.95},
        {"mode", "semi"},
        {"eval_every", 5},
        {"checkpoint_every", 5},
        {"log_attack", true}}},
      {"metrics", {{"nsd_tolerance", 13.0}}}};
}

json load_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in.good()) throw std::runtime_error("config: cannot open " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::parse_error& e) {
    throw std::runtime_error("config: parse error in " + path.string() + ": " + e.what());
  }
  return j;
}

namespace {

bool types_compatible(const json& user, const json& schema) {
  if (schema.is_number() && user.is_number()) return true;
  if (schema.is_boolean() && user.is_boolean()) return true;
  if (schema.is_string() && user.is_string()) return true;
  if (schema.is_array() && user.is_array()) return true;
  if (schema.is_object() && user.is_object()) return true;
  return false;
}

}  // namespace

void check_against_schema(const json& user, const json& schema, const std::string& prefix) {
  if (!user.is_object())
    throw std::runtime_error("config: expected an object at '" +
                             (prefix.empty() ? "<root>" : prefix) + "'");
  for (const auto& [key, value] : user.items()) {
    const std::string path = prefix.empty() ? key : prefix + "." + key;
    if (!schema.contains(key)) throw std::runtime_error("config: unknown key '" + path + "'");
    const json& ref = schema.at(key);
    if (ref.is_object()) {
      check_against_schema(value, ref, path);
    } else if (!types_compatible(value, ref)) {
      throw std::runtime_error("config: wrong type for '" + path + "' (expected " +
                               std::string(ref.type_name()) + ")");
    }
  }
}

void apply_override(json& cfg, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0)
    throw std::runtime_error("config: override must look like key.path=value: " + assignment);
  std::string path = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);
  json value;
  try {
    value = json::parse(raw);
  } catch (const json::parse_error&) {
    value = raw;  // bare strings allowed without quotes
  }
  std::string pointer = "/";
  for (char c : path) pointer += (c == '.') ? '/' : c;
  json patch = json::object();
  patch[json::json_pointer(pointer)] = value;
  check_against_schema(patch, defaults());
  cfg.merge_patch(patch);
}

json resolve(const json& file_config, const std::vector<std::string>& overrides) {
  json cfg = defaults();
  if (!file_config.is_null()) {
    check_against_schema(file_config, cfg);
    cfg.merge_patch(file_config);
  }
  for (const auto& o : overrides) apply_override(cfg, o);
  return cfg;
}

SceneConfig to_scene_config(const json& r) {
  const json& s = r.at("data").at("scene");
  SceneConfig cfg;
  cfg.height = s.at("height").get<int>();
  cfg.width = s.at("width").get<int>();
  cfg.shapes_min = s.at("shapes_min").get<int>();
  cfg.shapes_max = s.at("shapes_max").get<int>();
  cfg.texture_amplitude = s.at("texture_amplitude").get<double>();
  cfg.specular_prob = s.at("specular_prob").get<double>();
  cfg.fg_min = s.at("fg_min").get<double>();
  cfg.fg_max = s.at("fg_max").get<double>();
  cfg.num_classes = r.at("data").at("num_classes").get<int>();
  cfg.validate();
  return cfg;
}

TrainConfig to_train_config(const json& r) {
  TrainConfig cfg;
  const json& t = r.at("trainer");
  cfg.epochs = t.at("epochs").get<int>();
  cfg.batch_size = t.at("batch_size").get<int>();
  cfg.lr_ini = t.at("lr_ini").get<double>();
  cfg.eta = t.at("eta").get<double>();
  cfg.momentum = t.at("momentum").get<double>();
  cfg.mode = train_mode_from_name(t.at("mode").get<std::string>());
  cfg.eval_every = t.at("eval_every").get<int>();
  cfg.checkpoint_every = t.at("checkpoint_every").get<int>();
  cfg.log_attack = t.at("log_attack").get<bool>();
  cfg.seed = r.at("seed").get<uint64_t>();
  cfg.nsd_tolerance = r.at("metrics").at("nsd_tolerance").get<double>();

  const json& m = r.at("model");
  cfg.model.depth = m.at("depth").get<int>();
  cfg.model.base_channels = m.at("base_channels").get<int>();
  cfg.model.norm_groups = m.at("norm_groups").get<int>();
  cfg.model.max_channels = m.at("max_channels").get<int>();
  cfg.model.num_classes = r.at("data").at("num_classes").get<int>();

  const json& p = r.at("pseudo");
  cfg.sharpen.temperature = p.at("temperature").get<double>();
  cfg.sharpen.threshold = p.at("threshold").get<double>();
  cfg.sharpen.hard_labels = p.at("hard_labels").get<bool>();

  const json& a = r.at("attack");
  cfg.attack.method = attack_method_from_name(a.at("method").get<std::string>());
  cfg.attack.epsilon = a.at("epsilon").get<double>();
  cfg.attack.steps = a.at("steps").get<int>();

  const json& l = r.at("loss");
  cfg.loss.w_max = l.at("w_max").get<double>();
  cfg.loss.smooth = l.at("smooth").get<double>();
  int ramp = l.at("ramp_epochs").get<int>();
  if (ramp <= 0)
    ramp = std::max(1, static_cast<int>(std::lround(l.at("ramp_frac").get<double>() *
                                                    cfg.epochs)));
  cfg.loss.ramp_epochs = ramp;

  const json& wk = r.at("augment").at("weak");
  cfg.weak_enabled = wk.at("enabled").get<bool>();
  cfg.weak.kinds.clear();
  for (const auto& k : wk.at("kinds")) cfg.weak.kinds.push_back(spatial_kind_from_name(k));
  cfg.weak.crop_min_axis_frac = wk.at("crop_min_axis_frac").get<double>();

  const json& st = r.at("augment").at("strong");
  cfg.strong_enabled = st.at("enabled").get<bool>();
  auto range = [&st](const char* key, double& lo, double& hi) {
    lo = st.at(key).at(0).get<double>();
    hi = st.at(key).at(1).get<double>();
  };
  range("contrast", cfg.photo.contrast_min, cfg.photo.contrast_max);
  range("brightness", cfg.photo.brightness_min, cfg.photo.brightness_max);
  range("color", cfg.photo.color_min, cfg.photo.color_max);
  range("sharpness", cfg.photo.sharpness_min, cfg.photo.sharpness_max);
  range("noise_sigma", cfg.photo.noise_sigma_min, cfg.photo.noise_sigma_max);
  range("solarize", cfg.photo.solarize_min, cfg.photo.solarize_max);
  cfg.photo.posterize_bits_min = st.at("posterize_bits").at(0).get<int>();
  cfg.photo.posterize_bits_max = st.at("posterize_bits").at(1).get<int>();

  cfg.validate();
  return cfg;
}

}  // namespace semiseg::config
