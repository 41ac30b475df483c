#include "ttoreg_cli/run_config.hpp"

#include <cstdio>
#include <fstream>

namespace ttoreg::cli {

using nlohmann::json;

namespace {

json network_json(const NetworkConfig& c) {
  return json{{"encoder_channels", c.encoder_channels},   {"bottleneck_channels", c.bottleneck_channels},
              {"decoder_channels", c.decoder_channels},   {"refine_channels", c.refine_channels},
              {"refine_blocks", c.refine_blocks},         {"leaky_slope", c.leaky_slope}};
}

NetworkConfig network_from(const json& j) {
  NetworkConfig c;
  c.encoder_channels = j.at("encoder_channels").get<std::vector<int>>();
  c.bottleneck_channels = j.at("bottleneck_channels").get<int>();
  c.decoder_channels = j.at("decoder_channels").get<std::vector<int>>();
  c.refine_channels = j.at("refine_channels").get<int>();
  c.refine_blocks = j.at("refine_blocks").get<int>();
  c.leaky_slope = j.at("leaky_slope").get<double>();
  return c;
}

const char* type_name(const json& v) {
  if (v.is_boolean()) return "boolean";
  if (v.is_number_integer()) return "integer";
  if (v.is_number()) return "number";
  if (v.is_string()) return "string";
  if (v.is_array()) return "array";
  if (v.is_object()) return "object";
  return "null";
}

bool compatible(const json& def, const json& val) {
  if (def.is_number_float()) return val.is_number();
  if (def.is_number_integer()) return val.is_number_integer();
  if (def.is_boolean()) return val.is_boolean();
  if (def.is_string()) return val.is_string();
  if (def.is_object()) return val.is_object();
  if (def.is_array()) {
    if (!val.is_array()) return false;
    if (def.empty()) return true;
    for (const auto& e : val)
      if (!compatible(def.front(), e)) return false;
    return true;
  }
  return false;
}

void merge(json& base, const json& user, const std::string& prefix) {
  if (!user.is_object()) throw UserError("config" + (prefix.empty() ? std::string() : " section '" + prefix + "'") + " must be a JSON object");
  for (const auto& [key, val] : user.items()) {
    const std::string path = prefix.empty() ? key : prefix + "." + key;
    if (!base.contains(key)) throw UserError("unknown config key '" + path + "'");
    json& def = base[key];
    if (!compatible(def, val)) {
      throw UserError("config key '" + path + "' expects " + type_name(def) + ", got " + type_name(val));
    }
    if (def.is_object()) {
      merge(def, val, path);
    } else if (def.is_number_float()) {
      def = val.get<double>();
    } else {
      def = val;
    }
  }
}

Shape3 shape_from(const json& j, const char* what) {
  const auto v = j.get<std::vector<int>>();
  if (v.size() != 3) throw UserError(std::string(what) + " must have 3 entries");
  return {v[0], v[1], v[2]};
}

StageTrain stage_from(const json& j, std::uint64_t seed, const LossWeights& w, const GeneratorConfig& synth) {
  StageTrain s;
  s.train.epochs = j.at("epochs").get<int>();
  s.train.pairs_per_epoch = j.at("pairs_per_epoch").get<int>();
  s.train.learning_rate = j.at("learning_rate").get<double>();
  s.train.checkpoint_every = j.at("checkpoint_every").get<int>();
  s.train.weights = w;
  s.train.seed = seed;
  s.gen = synth;
  s.gen.shape = shape_from(j.at("shape"), "training shape");
  return s;
}

}  // namespace

std::string fnv1a_hex(const std::string& text) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string RunConfig::hash() const { return fnv1a_hex(effective.dump()); }

json default_config_json() {
  const LossWeights w;
  const RenderConfig r;
  const TTOConfig t;
  const PmmConfig p;
  return json{
      {"seed", 0},
      {"format", "raw+json"},
      {"synth",
       {{"count", 2},
        {"shape", {64, 64, 64}},
        {"num_labels", 8},
        {"control_spacing", 8.0},
        {"sigma", 2.0},
        {"render",
         {{"blur", r.blur},
          {"blur_min", r.blur_min},
          {"blur_max", r.blur_max},
          {"noise", r.noise},
          {"noise_max", r.noise_max},
          {"bias", r.bias},
          {"bias_min", r.bias_min},
          {"bias_max", r.bias_max},
          {"gamma", r.gamma},
          {"gamma_min", r.gamma_min},
          {"gamma_max", r.gamma_max}}}}},
      {"losses",
       {{"lambda_sim", w.lambda_sim},
        {"lambda_smooth", w.lambda_smooth},
        {"lambda_dist", w.lambda_dist},
        {"alpha_div", w.alpha_div},
        {"bins", w.bins},
        {"parzen_sigma", w.parzen_sigma}}},
      {"network", {{"teacher", network_json(NetworkConfig::teacher())}, {"student", network_json(NetworkConfig::student())}}},
      {"train_teacher",
       {{"epochs", 300}, {"pairs_per_epoch", 500}, {"learning_rate", 1e-4}, {"checkpoint_every", 10}, {"shape", {64, 64, 64}}}},
      {"distill",
       {{"epochs", 500}, {"pairs_per_epoch", 500}, {"learning_rate", 1e-4}, {"checkpoint_every", 10}, {"shape", {64, 64, 64}}}},
      {"tto",
       {{"max_epochs", t.max_epochs},
        {"max_seconds", t.max_seconds},
        {"learning_rate", t.learning_rate},
        {"resize", "resample"},
        {"affine_prealign", false},
        {"affine_iterations", 100}}},
      {"eval",
       {{"patch", p.patch},
        {"stride", p.stride},
        {"bins", p.bins},
        {"min_fraction", p.min_fraction},
        {"measure", "mi"},
        {"checkerboard_tile", 8}}}};
}

RunConfig make_run_config(const json& user) {
  RunConfig c;
  c.effective = default_config_json();
  merge(c.effective, user, "");
  const json& e = c.effective;
  try {
    c.seed = e.at("seed").get<std::uint64_t>();
    const auto fmt = e.at("format").get<std::string>();
    if (fmt == "raw+json") {
      c.format = VolumeFormat::RawJson;
    } else if (fmt == "nifti") {
      c.format = VolumeFormat::Nifti;
    } else {
      throw UserError("format must be \"raw+json\" or \"nifti\", got \"" + fmt + "\"");
    }

    const json& s = e.at("synth");
    c.synth_count = s.at("count").get<int>();
    if (c.synth_count < 1) throw UserError("synth.count must be >= 1");
    c.synth.shape = shape_from(s.at("shape"), "synth.shape");
    c.synth.num_labels = s.at("num_labels").get<int>();
    c.synth.control_spacing = s.at("control_spacing").get<double>();
    c.synth.sigma = s.at("sigma").get<double>();
    const json& r = s.at("render");
    c.synth.render.blur = r.at("blur").get<bool>();
    c.synth.render.blur_min = r.at("blur_min").get<double>();
    c.synth.render.blur_max = r.at("blur_max").get<double>();
    c.synth.render.noise = r.at("noise").get<bool>();
    c.synth.render.noise_max = r.at("noise_max").get<double>();
    c.synth.render.bias = r.at("bias").get<bool>();
    c.synth.render.bias_min = r.at("bias_min").get<double>();
    c.synth.render.bias_max = r.at("bias_max").get<double>();
    c.synth.render.gamma = r.at("gamma").get<bool>();
    c.synth.render.gamma_min = r.at("gamma_min").get<double>();
    c.synth.render.gamma_max = r.at("gamma_max").get<double>();
    c.synth.validate();

    const json& l = e.at("losses");
    c.losses.lambda_sim = l.at("lambda_sim").get<double>();
    c.losses.lambda_smooth = l.at("lambda_smooth").get<double>();
    c.losses.lambda_dist = l.at("lambda_dist").get<double>();
    c.losses.alpha_div = l.at("alpha_div").get<double>();
    c.losses.bins = l.at("bins").get<int>();
    c.losses.parzen_sigma = l.at("parzen_sigma").get<double>();
    c.losses.validate();

    c.teacher_net = network_from(e.at("network").at("teacher"));
    c.student_net = network_from(e.at("network").at("student"));
    c.teacher_net.validate();
    c.student_net.validate();

    c.train_teacher = stage_from(e.at("train_teacher"), c.seed, c.losses, c.synth);
    c.distill = stage_from(e.at("distill"), c.seed, c.losses, c.synth);
    c.train_teacher.train.validate();
    c.distill.train.validate();
    c.train_teacher.gen.validate();
    c.distill.gen.validate();

    const json& t = e.at("tto");
    c.tto.max_epochs = t.at("max_epochs").get<int>();
    c.tto.max_seconds = t.at("max_seconds").get<double>();
    c.tto.learning_rate = t.at("learning_rate").get<double>();
    c.tto.weights = c.losses;
    const auto resize = t.at("resize").get<std::string>();
    if (resize == "resample") {
      c.tto.resize = ResizeMode::Resample;
    } else if (resize == "pad") {
      c.tto.resize = ResizeMode::Pad;
    } else {
      throw UserError("tto.resize must be \"resample\" or \"pad\", got \"" + resize + "\"");
    }
    c.affine_prealign = t.at("affine_prealign").get<bool>();
    c.affine_iterations = t.at("affine_iterations").get<int>();
    if (c.affine_iterations < 0) throw UserError("tto.affine_iterations must be >= 0");
    c.tto.validate();

    const json& v = e.at("eval");
    c.pmm.patch = v.at("patch").get<int>();
    c.pmm.stride = v.at("stride").get<int>();
    c.pmm.bins = v.at("bins").get<int>();
    c.pmm.min_fraction = v.at("min_fraction").get<double>();
    const auto measure = v.at("measure").get<std::string>();
    if (measure != "mi" && measure != "nmi") throw UserError("eval.measure must be \"mi\" or \"nmi\"");
    c.pmm.normalized = measure == "nmi";
    c.checkerboard_tile = v.at("checkerboard_tile").get<int>();
    if (c.checkerboard_tile < 1) throw UserError("eval.checkerboard_tile must be >= 1");
    c.pmm.validate();
  } catch (const std::invalid_argument& ex) {
    throw UserError(std::string("invalid config: ") + ex.what());
  } catch (const json::exception& ex) {
    throw UserError(std::string("invalid config: ") + ex.what());
  }
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path,
                          const std::vector<std::pair<std::string, std::string>>& overrides) {
  json user = json::object();
  if (!path.empty()) {
    std::ifstream in(path);
    if (!in) throw UserError("cannot read config file " + path.string());
    try {
      user = json::parse(in);
    } catch (const json::exception& e) {
      throw UserError("config file " + path.string() + " is not valid JSON: " + e.what());
    }
  }
  for (const auto& [key, text] : overrides) {
    json value;
    try {
      value = json::parse(text);
    } catch (const json::exception&) {
      value = text;
    }
    json* node = &user;
    std::size_t start = 0;
    while (true) {
      const auto dot = key.find('.', start);
      const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
      if (part.empty()) throw UserError("malformed override key '" + key + "'");
      if (dot == std::string::npos) {
        (*node)[part] = value;
        break;
      }
      if (!node->contains(part)) (*node)[part] = json::object();
      node = &(*node)[part];
      if (!node->is_object()) throw UserError("override '" + key + "' descends into a non-object");
      start = dot + 1;
    }
  }
  return make_run_config(user);
}

}  // namespace ttoreg::cli
