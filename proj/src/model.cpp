#include "ellip/model.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "ellip/rng.hpp"

namespace ellip::nn {

using json = nlohmann::json;

const char* head_name(Head h) {
  switch (h) {
    case Head::N2: return "n2";
    case Head::K2: return "k2";
    case Head::D: return "d";
  }
  return "?";
}

void NetConfig::validate() const {
  if (input_dim != 5) throw std::invalid_argument("input_dim must be 5 (delta, psi, n3, k3, lambda)");
  if (hidden_width < 8) throw std::invalid_argument("hidden_width must be >= 8");
  if (encoder_layers < 2 || encoder_layers % 2 != 0)
    throw std::invalid_argument("encoder_layers must be even and >= 2");
  if (attention_dim == 0 || hidden_width % attention_dim != 0)
    throw std::invalid_argument("hidden_width must be divisible by attention_dim");
}

// ---------------------------------------------------------------- init

namespace {

Linear make_linear(std::size_t in, std::size_t out) { return {Tensor(in, out), Tensor(1, out)}; }

AffineNorm make_norm(std::size_t width) { return {Tensor(1, width, 1.0), Tensor(1, width)}; }

// U(-a, a) with a = sqrt(gain / fan_in): gain 6 before a rectifier, 3 otherwise.
void init_uniform(Linear& l, std::uint64_t seed, const std::string& name, double gain) {
  Rng rng(derive_seed(seed, name));
  const double a = std::sqrt(gain / static_cast<double>(l.weight.rows()));
  for (double& w : l.weight.values()) w = rng.uniform(-a, a);
}

}  // namespace

void InverseNet::allocate(const NetConfig& config) {
  config.validate();
  config_ = config;
  const std::size_t h = config.hidden_width;
  mapper_in = make_linear(config.input_dim, h);
  mapper_out = make_linear(h, h);
  encoder.clear();
  for (std::size_t b = 0; b < config.blocks(); ++b)
    encoder.push_back({make_norm(h), make_linear(h, h), make_norm(h), make_linear(h, h)});
  for (auto& a : attention) {
    if (config.use_attention) a = {make_linear(h, h), make_linear(h, h), make_linear(h, h)};
    else a = {};
  }
  for (auto& p : projector) p = make_linear(h, 1);
}

InverseNet::InverseNet(const NetConfig& config) {
  allocate(config);
  const auto seed = config.seed;
  init_uniform(mapper_in, seed, "mapper.in", 6.0);
  init_uniform(mapper_out, seed, "mapper.out", 6.0);
  for (std::size_t b = 0; b < encoder.size(); ++b) {
    const std::string p = "encoder." + std::to_string(b);
    init_uniform(encoder[b].fc1, seed, p + ".fc1", 6.0);
    init_uniform(encoder[b].fc2, seed, p + ".fc2", 3.0);
  }
  for (Head h : kHeads) {
    const auto i = static_cast<std::size_t>(h);
    const std::string p = std::string("head.") + head_name(h);
    if (config.use_attention) {
      init_uniform(attention[i].query, seed, p + ".query", 3.0);
      init_uniform(attention[i].key, seed, p + ".key", 3.0);
      init_uniform(attention[i].value, seed, p + ".value", 3.0);
    }
    init_uniform(projector[i], seed, p + ".projector", 3.0);
  }
}

InverseNet InverseNet::zeros(const NetConfig& config) {
  InverseNet net;
  net.allocate(config);
  for (Tensor* t : net.parameters()) t->fill(0.0);
  return net;
}

std::vector<Tensor*> InverseNet::parameters() {
  std::vector<Tensor*> out;
  auto lin = [&](Linear& l) {
    out.push_back(&l.weight);
    out.push_back(&l.bias);
  };
  auto norm = [&](AffineNorm& n) {
    out.push_back(&n.gamma);
    out.push_back(&n.beta);
  };
  lin(mapper_in);
  lin(mapper_out);
  for (auto& b : encoder) {
    norm(b.norm1);
    lin(b.fc1);
    norm(b.norm2);
    lin(b.fc2);
  }
  if (config_.use_attention)
    for (auto& a : attention) {
      lin(a.query);
      lin(a.key);
      lin(a.value);
    }
  for (auto& p : projector) lin(p);
  return out;
}

std::vector<const Tensor*> InverseNet::parameters() const {
  auto mut = const_cast<InverseNet*>(this)->parameters();
  return {mut.begin(), mut.end()};
}

std::vector<std::string> InverseNet::parameter_names() const {
  std::vector<std::string> out;
  auto lin = [&](const std::string& p) {
    out.push_back(p + ".weight");
    out.push_back(p + ".bias");
  };
  auto norm = [&](const std::string& p) {
    out.push_back(p + ".gamma");
    out.push_back(p + ".beta");
  };
  lin("mapper.in");
  lin("mapper.out");
  for (std::size_t b = 0; b < encoder.size(); ++b) {
    const std::string p = "encoder." + std::to_string(b);
    norm(p + ".norm1");
    lin(p + ".fc1");
    norm(p + ".norm2");
    lin(p + ".fc2");
  }
  if (config_.use_attention)
    for (Head h : kHeads) {
      const std::string p = std::string("head.") + head_name(h);
      lin(p + ".query");
      lin(p + ".key");
      lin(p + ".value");
    }
  for (Head h : kHeads) lin(std::string("head.") + head_name(h) + ".projector");
  return out;
}

std::size_t InverseNet::parameter_count() const {
  std::size_t n = 0;
  for (const Tensor* t : parameters()) n += t->size();
  return n;
}

// ---------------------------------------------------------------- taped forward

BoundNet::BoundNet(Tape& tape, const InverseNet& net, bool trainable)
    : tape_(tape), config_(net.config()) {
  auto place = [&](const Tensor& t) {
    Var v = trainable ? tape.variable(t) : tape.constant(t);
    params_.push_back(v);
    return v;
  };
  auto lin = [&](const Linear& l) { return LinearVars{place(l.weight), place(l.bias)}; };
  auto norm = [&](const AffineNorm& n) { return NormVars{place(n.gamma), place(n.beta)}; };
  mapper_in_ = lin(net.mapper_in);
  mapper_out_ = lin(net.mapper_out);
  for (const auto& b : net.encoder) {
    BlockVars bv;
    bv.norm1 = norm(b.norm1);
    bv.fc1 = lin(b.fc1);
    bv.norm2 = norm(b.norm2);
    bv.fc2 = lin(b.fc2);
    encoder_.push_back(bv);
  }
  if (config_.use_attention)
    for (std::size_t i = 0; i < 3; ++i)
      attention_[i] = {lin(net.attention[i].query), lin(net.attention[i].key),
                       lin(net.attention[i].value)};
  for (std::size_t i = 0; i < 3; ++i) projector_[i] = lin(net.projector[i]);
}

Var BoundNet::linear(const LinearVars& l, Var x) const {
  return ad::add(ad::matmul(x, l.weight), l.bias);
}

Var BoundNet::mapper_forward(Var x) const {
  if (x.cols() != config_.input_dim)
    throw ad::ShapeError("mapper expects " + std::to_string(config_.input_dim) + " input columns");
  return ad::relu(linear(mapper_out_, ad::relu(linear(mapper_in_, x))));
}

Var BoundNet::encoder_forward(Var fm) const {
  if (fm.cols() != config_.hidden_width) throw ad::ShapeError("encoder input width mismatch");
  Var x = fm;
  for (const auto& b : encoder_) {
    Var h = linear(b.fc1, ad::relu(ad::affine_norm(x, b.norm1.gamma, b.norm1.beta)));
    h = linear(b.fc2, ad::relu(ad::affine_norm(h, b.norm2.gamma, b.norm2.beta)));
    x = x + h;
  }
  return x;
}

Var BoundNet::attention_forward(Var fe, Head head) const {
  if (fe.cols() != config_.hidden_width) throw ad::ShapeError("attention input width mismatch");
  if (!config_.use_attention) return fe;
  const auto& a = attention_[static_cast<std::size_t>(head)];
  const std::size_t batch = fe.rows();
  const std::size_t tokens = config_.tokens();
  const std::size_t dk = config_.attention_dim;
  Var q = ad::reshape(linear(a.query, fe), batch * tokens, dk);
  Var k = ad::reshape(linear(a.key, fe), batch * tokens, dk);
  Var v = ad::reshape(linear(a.value, fe), batch * tokens, dk);
  Var scores = ad::group_matmul(q, k, batch, true) * (1.0 / std::sqrt(static_cast<double>(dk)));
  Var weights = ad::softmax_rows(scores);
  return ad::reshape(ad::group_matmul(weights, v, batch, false), batch, config_.hidden_width);
}

Var BoundNet::projector_forward(Var fa, Head head) const {
  if (fa.cols() != config_.hidden_width) throw ad::ShapeError("projector input width mismatch");
  return linear(projector_[static_cast<std::size_t>(head)], fa);
}

std::array<Var, 3> BoundNet::forward(Var x) const {
  Var fe = encoder_forward(mapper_forward(x));
  std::array<Var, 3> out;
  for (Head h : kHeads)
    out[static_cast<std::size_t>(h)] = projector_forward(attention_forward(fe, h), h);
  return out;
}

std::vector<Tensor> BoundNet::gradients() const {
  std::vector<Tensor> out;
  out.reserve(params_.size());
  for (Var v : params_) out.push_back(v.grad());
  return out;
}

Tensor predict(const InverseNet& net, const Tensor& inputs) {
  Tape tape;
  BoundNet bound(tape, net, false);
  auto heads = bound.forward(tape.constant(inputs));
  Tensor out(inputs.rows(), 3);
  for (std::size_t h = 0; h < 3; ++h) {
    const Tensor& v = heads[h].value();
    for (std::size_t r = 0; r < inputs.rows(); ++r) out(r, h) = v[r];
  }
  return out;
}

// ---------------------------------------------------------------- checkpoints

namespace {

constexpr const char* kMagic = "ellip-checkpoint 1";

json config_json(const NetConfig& c) {
  return {{"input_dim", c.input_dim},         {"hidden_width", c.hidden_width},
          {"encoder_layers", c.encoder_layers}, {"attention_dim", c.attention_dim},
          {"use_attention", c.use_attention},   {"seed", c.seed}};
}

NetConfig config_from_json(const json& j) {
  NetConfig c;
  c.input_dim = j.at("input_dim").get<std::size_t>();
  c.hidden_width = j.at("hidden_width").get<std::size_t>();
  c.encoder_layers = j.at("encoder_layers").get<std::size_t>();
  c.attention_dim = j.at("attention_dim").get<std::size_t>();
  c.use_attention = j.at("use_attention").get<bool>();
  c.seed = j.at("seed").get<std::uint64_t>();
  return c;
}

}  // namespace

std::string checkpoint_text(const InverseNet& net, const std::string& metadata_json) {
  std::string out;
  out += kMagic;
  out += "\nconfig ";
  out += config_json(net.config()).dump();
  out += "\nmetadata ";
  out += json::parse(metadata_json).dump();
  out += '\n';
  const auto names = net.parameter_names();
  const auto params = net.parameters();
  char buf[40];
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Tensor& t = *params[i];
    out += "param " + names[i] + " " + std::to_string(t.rows()) + " " + std::to_string(t.cols()) + "\n";
    for (std::size_t j = 0; j < t.size(); ++j) {
      auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, t[j]);
      out.append(buf, ptr);
      out += (j + 1 == t.size()) ? '\n' : ' ';
    }
    if (t.size() == 0) out += '\n';
  }
  out += "end\n";
  return out;
}

void write_checkpoint(const std::filesystem::path& path, const InverseNet& net,
                      const std::string& metadata_json) {
  const std::string text = checkpoint_text(net, metadata_json);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write checkpoint " + path.string());
  out << text;
  if (!out) throw std::runtime_error("write failed for checkpoint " + path.string());
}

Checkpoint parse_checkpoint(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  auto fail = [](const std::string& what) -> void {
    throw std::runtime_error("malformed checkpoint: " + what);
  };
  if (!std::getline(in, line) || line != kMagic) fail("bad magic line");
  if (!std::getline(in, line) || line.rfind("config ", 0) != 0) fail("missing config");
  const NetConfig cfg = config_from_json(json::parse(line.substr(7)));
  if (!std::getline(in, line) || line.rfind("metadata ", 0) != 0) fail("missing metadata");
  Checkpoint ck{InverseNet::zeros(cfg), line.substr(9)};

  const auto names = ck.net.parameter_names();
  auto params = ck.net.parameters();
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!std::getline(in, line)) fail("truncated before " + names[i]);
    std::istringstream hdr(line);
    std::string tag, name;
    std::size_t rows = 0, cols = 0;
    hdr >> tag >> name >> rows >> cols;
    if (tag != "param" || name != names[i]) fail("expected parameter " + names[i]);
    if (rows != params[i]->rows() || cols != params[i]->cols()) fail("shape mismatch for " + name);
    if (!std::getline(in, line)) fail("missing values for " + name);
    const char* p = line.data();
    const char* end = line.data() + line.size();
    for (std::size_t j = 0; j < params[i]->size(); ++j) {
      while (p < end && *p == ' ') ++p;
      double v = 0.0;
      auto [next, ec] = std::from_chars(p, end, v);
      if (ec != std::errc()) fail("bad value in " + name);
      (*params[i])[j] = v;
      p = next;
    }
  }
  if (!std::getline(in, line) || line != "end") fail("missing end marker");
  return ck;
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_checkpoint(ss.str());
}

}  // namespace ellip::nn
