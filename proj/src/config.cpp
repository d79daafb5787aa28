#include "uasam/config.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

namespace uasam {

using nlohmann::json;

namespace {

bool compatible(const json& def, const json& val) {
  if (def.is_boolean()) return val.is_boolean();
  if (def.is_number_unsigned()) return val.is_number_unsigned() || (val.is_number_integer() && val.get<long long>() >= 0);
  if (def.is_number_integer()) return val.is_number_integer();
  if (def.is_number_float()) return val.is_number();
  if (def.is_string()) return val.is_string();
  if (def.is_array()) return val.is_array();
  if (def.is_object()) return val.is_object();
  return true;
}

std::string type_name(const json& def) {
  if (def.is_number_unsigned()) return "non-negative integer";
  if (def.is_number_integer()) return "integer";
  if (def.is_number_float()) return "number";
  return def.type_name();
}

void merge_strict(json& base, const json& user, const std::string& path) {
  if (!user.is_object()) throw ConfigError("config" + (path.empty() ? "" : " key '" + path + "'") + " must be an object");
  for (auto it = user.begin(); it != user.end(); ++it) {
    const std::string key = path.empty() ? it.key() : path + "." + it.key();
    if (!base.contains(it.key())) throw ConfigError("unknown config key '" + key + "'");
    json& slot = base[it.key()];
    if (slot.is_object()) {
      merge_strict(slot, it.value(), key);
      continue;
    }
    if (!compatible(slot, it.value())) {
      throw ConfigError("config key '" + key + "' expects a " + type_name(slot) + ", got " + it.value().dump());
    }
    slot = it.value();
  }
}

json backbone_json(const BackboneConfig& b) {
  return {{"image_size", b.image_size}, {"patch_size", b.patch_size},   {"embed_dim", b.embed_dim},
          {"num_blocks", b.num_blocks}, {"num_heads", b.num_heads},     {"mlp_ratio", b.mlp_ratio},
          {"decoder_mlp_ratio", b.decoder_mlp_ratio}};
}

BackboneConfig backbone_from(const json& j) {
  BackboneConfig b;
  b.image_size = j.at("image_size").get<std::size_t>();
  b.patch_size = j.at("patch_size").get<std::size_t>();
  b.embed_dim = j.at("embed_dim").get<std::size_t>();
  b.num_blocks = j.at("num_blocks").get<std::size_t>();
  b.num_heads = j.at("num_heads").get<std::size_t>();
  b.mlp_ratio = j.at("mlp_ratio").get<double>();
  b.decoder_mlp_ratio = j.at("decoder_mlp_ratio").get<double>();
  return b;
}

json adapter_json(const AdapterConfig& a) {
  return {{"mode", to_string(a.mode)},
          {"ratio", a.ratio},
          {"d_down", a.d_down},
          {"last_rule", to_string(a.last_rule)},
          {"p_init", a.p_init}};
}

AdapterConfig adapter_from(const json& j, std::size_t latent_dim) {
  AdapterConfig a;
  a.mode = parse_adapter_mode(j.at("mode").get<std::string>());
  a.ratio = j.at("ratio").get<double>();
  a.d_down = j.at("d_down").get<std::size_t>();
  a.last_rule = parse_last_adapter_rule(j.at("last_rule").get<std::string>());
  a.p_init = j.at("p_init").get<double>();
  a.latent_dim = latent_dim;
  return a;
}

json latent_json(const ProbLatentConfig& l) {
  return {{"latent_dim", l.latent_dim},
          {"channels", l.channels},
          {"log_sigma_min", l.log_sigma_min},
          {"log_sigma_max", l.log_sigma_max}};
}

ProbLatentConfig latent_from(const json& j) {
  ProbLatentConfig l;
  l.latent_dim = j.at("latent_dim").get<std::size_t>();
  l.channels = j.at("channels").get<std::vector<std::size_t>>();
  l.log_sigma_min = j.at("log_sigma_min").get<double>();
  l.log_sigma_max = j.at("log_sigma_max").get<double>();
  return l;
}

}  // namespace

void RunConfig::validate() const {
  model.validate();
  loss.validate();
  train.validate();
  synth.validate();
  if (synth.image_size != model.backbone.image_size) {
    throw ConfigError("synth image size " + std::to_string(synth.image_size) + " != backbone image_size " +
                      std::to_string(model.backbone.image_size));
  }
  if (eval.k_samples == 0) throw ConfigError("eval.k_samples must be at least 1");
  if (!(split_ratio > 0 && split_ratio < 1)) throw ConfigError("split_ratio must lie in (0, 1)");
  for (auto d : sweep_dims) {
    if (d == 0) throw ConfigError("sweep.dims entries must be at least 1");
  }
  for (const auto& m : ablation_modes) parse_adapter_mode(m);
  if (ablation_betas.empty()) throw ConfigError("ablation.betas must not be empty");
  for (double b : ablation_betas) {
    if (!(b >= 0) || !std::isfinite(b)) throw ConfigError("ablation.betas entries must be finite and >= 0");
  }
}

json model_to_json(const ModelConfig& c) {
  return {{"backbone", backbone_json(c.backbone)},
          {"adapter", adapter_json(c.adapter)},
          {"latent", latent_json(c.latent)},
          {"with_adapters", c.with_adapters}};
}

ModelConfig model_from_json(const json& j) {
  ModelConfig c;
  c.backbone = backbone_from(j.at("backbone"));
  c.latent = latent_from(j.at("latent"));
  c.adapter = adapter_from(j.at("adapter"), c.latent.latent_dim);
  c.with_adapters = j.at("with_adapters").get<bool>();
  return c;
}

json to_json(const RunConfig& c) {
  const auto& t = c.train;
  const auto& s = c.synth;
  return {
      {"seed", c.seed},
      {"out", c.out},
      {"split_ratio", c.split_ratio},
      {"backbone", backbone_json(c.model.backbone)},
      {"adapter", adapter_json(c.model.adapter)},
      {"latent", latent_json(c.model.latent)},
      {"loss",
       {{"beta", c.loss.beta},
        {"dice_weight", c.loss.dice_weight},
        {"ce_weight", c.loss.ce_weight},
        {"epsilon_dice", c.loss.epsilon_dice}}},
      {"train",
       {{"epochs", t.epochs},
        {"batch_size", t.batch_size},
        {"pretrain_lr", t.pretrain_lr},
        {"finetune_lr", t.finetune_lr},
        {"decay_epochs", t.decay_epochs},
        {"decay_factor", t.decay_factor},
        {"patience", t.patience},
        {"val_fraction", t.val_fraction},
        {"val_seed", t.val_seed},
        {"val_samples", t.val_samples}}},
      {"synth",
       {{"num_examples", s.num_examples},
        {"num_annotators", s.num_annotators},
        {"boundary_jitter", s.boundary_jitter},
        {"ambiguity_rate", s.ambiguity_rate},
        {"noise", s.noise},
        {"seed", s.seed}}},
      {"eval", {{"k_samples", c.eval.k_samples}, {"tie", to_string(c.eval.tie)}}},
      {"sweep", {{"dims", c.sweep_dims}}},
      {"ablation", {{"modes", c.ablation_modes}, {"betas", c.ablation_betas}}},
  };
}

RunConfig run_config_from_json(const json& doc) {
  json merged = to_json(RunConfig{});
  merge_strict(merged, doc, "");
  RunConfig c;
  try {
    c.seed = merged.at("seed").get<std::uint64_t>();
    c.out = merged.at("out").get<std::string>();
    c.split_ratio = merged.at("split_ratio").get<double>();
    c.model.backbone = backbone_from(merged.at("backbone"));
    c.model.latent = latent_from(merged.at("latent"));
    c.model.adapter = adapter_from(merged.at("adapter"), c.model.latent.latent_dim);
    const json& l = merged.at("loss");
    c.loss.beta = l.at("beta").get<double>();
    c.loss.dice_weight = l.at("dice_weight").get<double>();
    c.loss.ce_weight = l.at("ce_weight").get<double>();
    c.loss.epsilon_dice = l.at("epsilon_dice").get<double>();
    const json& t = merged.at("train");
    c.train.epochs = t.at("epochs").get<std::size_t>();
    c.train.batch_size = t.at("batch_size").get<std::size_t>();
    c.train.pretrain_lr = t.at("pretrain_lr").get<double>();
    c.train.finetune_lr = t.at("finetune_lr").get<double>();
    c.train.decay_epochs = t.at("decay_epochs").get<std::size_t>();
    c.train.decay_factor = t.at("decay_factor").get<double>();
    c.train.patience = t.at("patience").get<std::size_t>();
    c.train.val_fraction = t.at("val_fraction").get<double>();
    c.train.val_seed = t.at("val_seed").get<std::uint64_t>();
    c.train.val_samples = t.at("val_samples").get<std::size_t>();
    const json& s = merged.at("synth");
    c.synth.num_examples = s.at("num_examples").get<std::size_t>();
    c.synth.num_annotators = s.at("num_annotators").get<std::size_t>();
    c.synth.boundary_jitter = s.at("boundary_jitter").get<double>();
    c.synth.ambiguity_rate = s.at("ambiguity_rate").get<double>();
    c.synth.noise = s.at("noise").get<double>();
    c.synth.seed = s.at("seed").get<std::uint64_t>();
    c.synth.image_size = c.model.backbone.image_size;
    c.eval.k_samples = merged.at("eval").at("k_samples").get<std::size_t>();
    c.eval.tie = parse_tie_rule(merged.at("eval").at("tie").get<std::string>());
    c.sweep_dims = merged.at("sweep").at("dims").get<std::vector<std::size_t>>();
    c.ablation_modes = merged.at("ablation").at("modes").get<std::vector<std::string>>();
    c.ablation_betas = merged.at("ablation").at("betas").get<std::vector<double>>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  c.validate();
  return c;
}

json read_config_document(const std::string& path) {
  if (path.empty()) return json::object();
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path);
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

void apply_override(json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + assignment + "' is not key=value");
  const std::string key = assignment.substr(0, eq), text = assignment.substr(eq + 1);
  json value = json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;
  json* node = &doc;
  std::stringstream parts(key);
  std::string part;
  std::vector<std::string> path;
  while (std::getline(parts, part, '.')) path.push_back(part);
  for (std::size_t i = 0; i + 1 < path.size(); ++i) {
    if (!node->contains(path[i])) (*node)[path[i]] = json::object();
    node = &(*node)[path[i]];
    if (!node->is_object()) throw ConfigError("override '" + key + "': '" + path[i] + "' is not a section");
  }
  (*node)[path.back()] = value;
}

}  // namespace uasam
