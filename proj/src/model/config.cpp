#include "dmad/model/config.hpp"

#include <stdexcept>

namespace dmad::model {

const char* to_string(Architecture a) { return a == Architecture::kDivided ? "divided" : "sequential"; }

const char* to_string(VelocityMode m) {
  switch (m) {
    case VelocityMode::kRegressFromObj: return "regress-from-obj";
    case VelocityMode::kBboxDifference: return "bbox-difference";
    case VelocityMode::kRegressFromMt: return "regress-from-mt";
    case VelocityMode::kDeriveFromUnimodal: return "derive-from-unimodal";
  }
  return "?";
}

Architecture architecture_from(const std::string& s) {
  if (s == "divided") return Architecture::kDivided;
  if (s == "sequential") return Architecture::kSequential;
  throw std::invalid_argument("unknown architecture '" + s + "'");
}

VelocityMode velocity_mode_from(const std::string& s) {
  for (auto m : {VelocityMode::kRegressFromObj, VelocityMode::kBboxDifference, VelocityMode::kRegressFromMt,
                 VelocityMode::kDeriveFromUnimodal})
    if (s == to_string(m)) return m;
  throw std::invalid_argument("unknown velocity mode '" + s + "'");
}

void ModelConfig::validate() const {
  auto fail = [](const std::string& what) { throw std::invalid_argument("model config: " + what); };
  if (dim == 0 || heads == 0 || dim % heads != 0) fail("dim must be a positive multiple of heads");
  if (layers == 0) fail("at least one decoder layer is required");
  if (num_obj == 0 || num_map == 0) fail("query counts must be positive");
  if (modes == 0) fail("modes must be positive");
  if (plan_steps < 6) fail("plans shorter than 3 s are not supported");
  if (future_steps() == 0) fail("unimodal horizon must cover at least one step");
  if (!(dt > 0.0)) fail("dt must be positive");
  if (grid < 1) fail("grid must be positive");
  if (architecture == Architecture::kSequential) {
    if (interactions.touches_motion()) fail("sequential wiring has no motion queries to interact with");
    if (velocity_mode != VelocityMode::kRegressFromObj)
      fail("sequential wiring regresses velocity from object queries");
  }
  if (velocity_mode == VelocityMode::kRegressFromMt && !has_motion_decoder())
    fail("regress-from-mt needs motion queries");
}

ModelConfig with_architecture(ModelConfig c, Architecture a) {
  c.architecture = a;
  if (a == Architecture::kSequential) {
    c.interactions.obj_mt = false;
    c.interactions.mt_map = false;
    c.velocity_mode = VelocityMode::kRegressFromObj;
  }
  return c;
}

nlohmann::json to_json(const ModelConfig& c) {
  return {{"dim", c.dim},
          {"heads", c.heads},
          {"ffn_hidden", c.ffn_hidden},
          {"layers", c.layers},
          {"num_obj", c.num_obj},
          {"num_map", c.num_map},
          {"modes", c.modes},
          {"past_steps", c.past_steps},
          {"unimodal_horizon_s", c.unimodal_horizon_s},
          {"multimodal_steps", c.multimodal_steps},
          {"plan_steps", c.plan_steps},
          {"fourier_bands", c.fourier_bands},
          {"architecture", to_string(c.architecture)},
          {"interactions",
           {{"obj_map", c.interactions.obj_map},
            {"obj_mt", c.interactions.obj_mt},
            {"mt_map", c.interactions.mt_map}}},
          {"velocity_mode", to_string(c.velocity_mode)},
          {"init_seed", c.init_seed}};
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
  static const char* known[] = {"dim",        "heads",          "ffn_hidden",         "layers",
                                "num_obj",    "num_map",        "modes",              "past_steps",
                                "unimodal_horizon_s", "multimodal_steps", "plan_steps", "fourier_bands",
                                "architecture", "interactions", "velocity_mode",      "init_seed"};
  for (const auto& [k, _] : j.items()) {
    bool ok = false;
    for (const char* key : known) ok = ok || k == key;
    if (!ok) throw std::invalid_argument("model config: unknown key '" + k + "'");
  }
  ModelConfig c;
  auto get = [&](const char* key, auto& out) {
    if (j.contains(key)) out = j.at(key).get<std::decay_t<decltype(out)>>();
  };
  get("dim", c.dim);
  get("heads", c.heads);
  get("ffn_hidden", c.ffn_hidden);
  get("layers", c.layers);
  get("num_obj", c.num_obj);
  get("num_map", c.num_map);
  get("modes", c.modes);
  get("past_steps", c.past_steps);
  get("unimodal_horizon_s", c.unimodal_horizon_s);
  get("multimodal_steps", c.multimodal_steps);
  get("plan_steps", c.plan_steps);
  get("fourier_bands", c.fourier_bands);
  get("init_seed", c.init_seed);
  if (j.contains("architecture")) c.architecture = architecture_from(j.at("architecture"));
  if (j.contains("velocity_mode")) c.velocity_mode = velocity_mode_from(j.at("velocity_mode"));
  if (j.contains("interactions")) {
    const auto& i = j.at("interactions");
    for (const auto& [k, _] : i.items())
      if (k != "obj_map" && k != "obj_mt" && k != "mt_map")
        throw std::invalid_argument("model config: unknown interaction '" + k + "'");
    if (i.contains("obj_map")) c.interactions.obj_map = i.at("obj_map");
    if (i.contains("obj_mt")) c.interactions.obj_mt = i.at("obj_mt");
    if (i.contains("mt_map")) c.interactions.mt_map = i.at("mt_map");
  }
  return c;
}

}  // namespace dmad::model
