#include "run_config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

namespace ellip::cli {

using json = nlohmann::json;

namespace {

void check_keys(const json& j, const std::string& where, std::initializer_list<const char*> allowed) {
  if (!j.is_object()) throw ConfigError(where + ": expected an object");
  std::set<std::string> ok(allowed.begin(), allowed.end());
  for (const auto& [key, _] : j.items())
    if (!ok.count(key))
      throw ConfigError("unknown key '" + (where.empty() ? key : where + "." + key) + "'");
}

template <typename T>
void read(const json& j, const char* key, T& out, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError("bad value for '" + where + "." + key + "'");
  }
}

std::vector<MaterialRef> read_materials(const json& j, const std::string& where) {
  if (!j.is_array()) throw ConfigError(where + ": expected a list");
  std::vector<MaterialRef> out;
  for (const auto& e : j) {
    if (e.is_string()) {
      out.push_back({e.get<std::string>(), ""});
    } else {
      check_keys(e, where + "[]", {"name", "csv"});
      MaterialRef m;
      read(e, "name", m.name, where);
      read(e, "csv", m.csv, where);
      if (m.name.empty()) throw ConfigError(where + ": material without a name");
      out.push_back(m);
    }
  }
  return out;
}

json materials_json(const std::vector<MaterialRef>& refs) {
  json out = json::array();
  for (const auto& m : refs) {
    if (m.csv.empty()) out.push_back(m.name);
    else out.push_back({{"name", m.name}, {"csv", m.csv}});
  }
  return out;
}

std::array<double, 3> read_triplet(const json& j, const std::string& where) {
  if (!j.is_array() || j.size() != 3) throw ConfigError(where + ": expected [n2, k2, d]");
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

}  // namespace

RunConfig RunConfig::defaults() {
  RunConfig c;
  for (const auto& t : data::builtin_films()) c.synth.films.push_back({t.name, ""});
  for (const auto& t : data::builtin_substrates()) c.synth.substrates.push_back({t.name, ""});
  c.train.epochs = 24;
  c.train.weights = {1.0, 0.1};
  c.train.recon_warmup_epochs = 12;
  c.train.grad_clip = 1.0;
  c.train.cosine_lr = true;
  return c;
}

void RunConfig::sync_seeds() {
  net.seed = seed;
  train.seed = seed;
}

void RunConfig::validate() const {
  if (device_precision != "float64")
    throw ConfigError("device_precision: only float64 is supported");
  if (synth.films.empty() || synth.substrates.empty())
    throw ConfigError("synth: at least one film and one substrate are required");
  if (synth.wavelengths < 1 || synth.thickness_levels < 1)
    throw ConfigError("synth: grid sizes must be >= 1");
  optics::ExperimentConfig{theta1_deg, n1, k1, 632.8}.validate();
  synth.ratios.validate();
  net.validate();
  train.validate();
  if (invert.starts < 1 || !(invert.tol > 0.0))
    throw ConfigError("invert: starts must be >= 1 and tol > 0");
}

RunConfig parse_run_config(const std::string& json_text, RunConfig c) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  check_keys(j, "", {"seed", "experiment", "synth", "net", "train", "invert", "device_precision"});
  read(j, "seed", c.seed, "");
  read(j, "device_precision", c.device_precision, "");

  if (j.contains("experiment")) {
    const auto& e = j["experiment"];
    check_keys(e, "experiment", {"theta1_deg", "n1", "k1"});
    read(e, "theta1_deg", c.theta1_deg, "experiment");
    read(e, "n1", c.n1, "experiment");
    read(e, "k1", c.k1, "experiment");
  }
  if (j.contains("synth")) {
    const auto& s = j["synth"];
    check_keys(s, "synth", {"films", "substrates", "wavelengths", "lambda_min", "lambda_max",
                            "thickness_levels", "d_min", "d_max", "ratios", "workers"});
    if (s.contains("films")) c.synth.films = read_materials(s["films"], "synth.films");
    if (s.contains("substrates"))
      c.synth.substrates = read_materials(s["substrates"], "synth.substrates");
    read(s, "wavelengths", c.synth.wavelengths, "synth");
    read(s, "lambda_min", c.synth.lambda_min, "synth");
    read(s, "lambda_max", c.synth.lambda_max, "synth");
    read(s, "thickness_levels", c.synth.thickness_levels, "synth");
    read(s, "d_min", c.synth.d_min, "synth");
    read(s, "d_max", c.synth.d_max, "synth");
    read(s, "workers", c.synth.workers, "synth");
    if (s.contains("ratios")) {
      const auto& r = s["ratios"];
      if (!r.is_array() || r.size() != 3) throw ConfigError("synth.ratios: expected [train, val, test]");
      c.synth.ratios = {r[0].get<double>(), r[1].get<double>(), r[2].get<double>()};
    }
  }
  if (j.contains("net")) {
    const auto& n = j["net"];
    check_keys(n, "net", {"input_dim", "hidden_width", "encoder_layers", "attention_dim", "use_attention"});
    read(n, "input_dim", c.net.input_dim, "net");
    read(n, "hidden_width", c.net.hidden_width, "net");
    read(n, "encoder_layers", c.net.encoder_layers, "net");
    read(n, "attention_dim", c.net.attention_dim, "net");
    read(n, "use_attention", c.net.use_attention, "net");
  }
  if (j.contains("train")) {
    const auto& t = j["train"];
    check_keys(t, "train", {"learning_rate", "weight_decay", "batch_size", "epochs", "loss_weights",
                            "eval_threshold", "beta1", "beta2", "adam_eps", "recon_warmup_epochs",
                            "grad_clip", "recon_thickness_only", "cosine_lr"});
    read(t, "learning_rate", c.train.learning_rate, "train");
    read(t, "weight_decay", c.train.weight_decay, "train");
    read(t, "batch_size", c.train.batch_size, "train");
    read(t, "epochs", c.train.epochs, "train");
    read(t, "eval_threshold", c.train.eval_threshold, "train");
    read(t, "beta1", c.train.beta1, "train");
    read(t, "beta2", c.train.beta2, "train");
    read(t, "adam_eps", c.train.adam_eps, "train");
    read(t, "recon_warmup_epochs", c.train.recon_warmup_epochs, "train");
    read(t, "grad_clip", c.train.grad_clip, "train");
    read(t, "recon_thickness_only", c.train.recon_thickness_only, "train");
    read(t, "cosine_lr", c.train.cosine_lr, "train");
    if (t.contains("loss_weights")) {
      const auto& w = t["loss_weights"];
      if (!w.is_array() || w.size() != 2) throw ConfigError("train.loss_weights: expected [fit, recon]");
      c.train.weights = {w[0].get<double>(), w[1].get<double>()};
    }
  }
  if (j.contains("invert")) {
    const auto& v = j["invert"];
    check_keys(v, "invert", {"lo", "hi", "starts", "tol", "dedup_radius", "max_iterations", "workers"});
    if (v.contains("lo")) c.invert.bounds.lo = read_triplet(v["lo"], "invert.lo");
    if (v.contains("hi")) c.invert.bounds.hi = read_triplet(v["hi"], "invert.hi");
    read(v, "starts", c.invert.starts, "invert");
    read(v, "tol", c.invert.tol, "invert");
    read(v, "dedup_radius", c.invert.dedup_radius, "invert");
    read(v, "max_iterations", c.invert.max_iterations, "invert");
    read(v, "workers", c.invert.workers, "invert");
  }
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str());
}

std::string run_config_json(const RunConfig& c) {
  json j = {
      {"seed", c.seed},
      {"device_precision", c.device_precision},
      {"experiment", {{"theta1_deg", c.theta1_deg}, {"n1", c.n1}, {"k1", c.k1}}},
      {"synth",
       {{"films", materials_json(c.synth.films)},
        {"substrates", materials_json(c.synth.substrates)},
        {"wavelengths", c.synth.wavelengths},
        {"lambda_min", c.synth.lambda_min},
        {"lambda_max", c.synth.lambda_max},
        {"thickness_levels", c.synth.thickness_levels},
        {"d_min", c.synth.d_min},
        {"d_max", c.synth.d_max},
        {"ratios", {c.synth.ratios.train, c.synth.ratios.val, c.synth.ratios.test}},
        {"workers", c.synth.workers}}},
      {"net",
       {{"input_dim", c.net.input_dim},
        {"hidden_width", c.net.hidden_width},
        {"encoder_layers", c.net.encoder_layers},
        {"attention_dim", c.net.attention_dim},
        {"use_attention", c.net.use_attention}}},
      {"train",
       {{"learning_rate", c.train.learning_rate},
        {"weight_decay", c.train.weight_decay},
        {"batch_size", c.train.batch_size},
        {"epochs", c.train.epochs},
        {"loss_weights", {c.train.weights.fit, c.train.weights.recon}},
        {"eval_threshold", c.train.eval_threshold},
        {"beta1", c.train.beta1},
        {"beta2", c.train.beta2},
        {"adam_eps", c.train.adam_eps},
        {"recon_warmup_epochs", c.train.recon_warmup_epochs},
        {"grad_clip", c.train.grad_clip},
        {"recon_thickness_only", c.train.recon_thickness_only},
        {"cosine_lr", c.train.cosine_lr}}},
      {"invert",
       {{"lo", c.invert.bounds.lo},
        {"hi", c.invert.bounds.hi},
        {"starts", c.invert.starts},
        {"tol", c.invert.tol},
        {"dedup_radius", c.invert.dedup_radius},
        {"max_iterations", c.invert.max_iterations},
        {"workers", c.invert.workers}}},
  };
  return j.dump(2) + "\n";
}

namespace {

data::MaterialTable resolve(const MaterialRef& ref, const std::vector<data::MaterialTable>& builtins,
                            data::MaterialRole role) {
  if (!ref.csv.empty()) return data::read_material_csv(ref.csv, ref.name, role);
  return data::find_material(builtins, ref.name);
}

}  // namespace

data::SynthesisPlan synthesis_plan(const RunConfig& c) {
  data::SynthesisPlan plan;
  const auto films = data::builtin_films();
  const auto subs = data::builtin_substrates();
  for (const auto& f : c.synth.films) plan.films.push_back(resolve(f, films, data::MaterialRole::Film));
  for (const auto& s : c.synth.substrates)
    plan.substrates.push_back(resolve(s, subs, data::MaterialRole::Substrate));
  plan.lambda_grid = data::uniform_grid(c.synth.lambda_min, c.synth.lambda_max, c.synth.wavelengths);
  plan.thickness_levels = data::uniform_grid(c.synth.d_min, c.synth.d_max, c.synth.thickness_levels);
  plan.cfg = {c.theta1_deg, c.n1, c.k1, 632.8};
  plan.ratios = c.synth.ratios;
  plan.seed = c.seed;
  plan.workers = c.synth.workers;
  return plan;
}

loss::LossWeights parse_loss_weights(const std::string& text) {
  const auto comma = text.find(',');
  if (comma == std::string::npos) throw ConfigError("--loss-weights expects 'fit,recon'");
  loss::LossWeights w;
  try {
    std::size_t used = 0;
    const std::string a = text.substr(0, comma), b = text.substr(comma + 1);
    w.fit = std::stod(a, &used);
    if (used != a.size()) throw ConfigError("");
    w.recon = std::stod(b, &used);
    if (used != b.size()) throw ConfigError("");
  } catch (const std::exception&) {
    throw ConfigError("--loss-weights expects two numbers 'fit,recon'");
  }
  w.validate();
  return w;
}

}  // namespace ellip::cli
