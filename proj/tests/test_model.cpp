#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <vector>

#include "ellip/model.hpp"
#include "ellip/rng.hpp"

using namespace ellip;
using namespace ellip::nn;
using ad::Tensor;

namespace {

using Mat = std::vector<std::vector<long double>>;

Mat to_mat(const Tensor& t) {
  Mat m(t.rows(), std::vector<long double>(t.cols()));
  for (std::size_t r = 0; r < t.rows(); ++r)
    for (std::size_t c = 0; c < t.cols(); ++c) m[r][c] = t(r, c);
  return m;
}

Mat linear(const Mat& x, const Linear& l) {
  Mat y(x.size(), std::vector<long double>(l.weight.cols()));
  for (std::size_t r = 0; r < x.size(); ++r)
    for (std::size_t j = 0; j < l.weight.cols(); ++j) {
      long double s = l.bias[j];
      for (std::size_t i = 0; i < l.weight.rows(); ++i) s += x[r][i] * l.weight(i, j);
      y[r][j] = s;
    }
  return y;
}

Mat relu(Mat x) {
  for (auto& row : x)
    for (auto& v : row) v = v > 0 ? v : 0;
  return x;
}

Mat norm(Mat x, const AffineNorm& n) {
  for (auto& row : x) {
    long double m = 0, var = 0;
    for (auto v : row) m += v;
    m /= row.size();
    for (auto v : row) var += (v - m) * (v - m);
    var /= row.size();
    const long double inv = 1.0L / std::sqrt(var + 1e-5L);
    for (std::size_t c = 0; c < row.size(); ++c) row[c] = (row[c] - m) * inv * n.gamma[c] + n.beta[c];
  }
  return x;
}

Mat attention(const Mat& fe, const AttentionBlock& a, std::size_t dk) {
  const Mat q = linear(fe, a.query), k = linear(fe, a.key), v = linear(fe, a.value);
  const std::size_t tokens = fe[0].size() / dk;
  Mat out(fe.size(), std::vector<long double>(fe[0].size()));
  for (std::size_t r = 0; r < fe.size(); ++r)
    for (std::size_t i = 0; i < tokens; ++i) {
      std::vector<long double> s(tokens);
      long double mx = -1e300L;
      for (std::size_t j = 0; j < tokens; ++j) {
        long double dot = 0;
        for (std::size_t p = 0; p < dk; ++p) dot += q[r][i * dk + p] * k[r][j * dk + p];
        s[j] = dot / std::sqrt(static_cast<long double>(dk));
        mx = std::max(mx, s[j]);
      }
      long double z = 0;
      for (auto& e : s) z += (e = std::exp(e - mx));
      for (std::size_t p = 0; p < dk; ++p) {
        long double acc = 0;
        for (std::size_t j = 0; j < tokens; ++j) acc += s[j] / z * v[r][j * dk + p];
        out[r][i * dk + p] = acc;
      }
    }
  return out;
}

Mat naive_forward(const InverseNet& net, const Tensor& x) {
  Mat h = relu(linear(relu(linear(to_mat(x), net.mapper_in)), net.mapper_out));
  for (const auto& b : net.encoder) {
    Mat t = linear(relu(norm(h, b.norm1)), b.fc1);
    t = linear(relu(norm(t, b.norm2)), b.fc2);
    for (std::size_t r = 0; r < h.size(); ++r)
      for (std::size_t c = 0; c < h[r].size(); ++c) h[r][c] += t[r][c];
  }
  Mat out(x.rows(), std::vector<long double>(3));
  for (std::size_t hd = 0; hd < 3; ++hd) {
    const Mat fa = net.config().use_attention ? attention(h, net.attention[hd], net.config().attention_dim) : h;
    const Mat p = linear(fa, net.projector[hd]);
    for (std::size_t r = 0; r < x.rows(); ++r) out[r][hd] = p[r][0];
  }
  return out;
}

Tensor random_inputs(std::size_t rows, std::uint64_t seed) {
  Rng rng(seed);
  Tensor x(rows, 5);
  for (double& v : x.values()) v = rng.uniform(-2, 2);
  return x;
}

NetConfig small_config(bool attention = true) {
  NetConfig c;
  c.hidden_width = 16;
  c.encoder_layers = 4;
  c.attention_dim = 4;
  c.use_attention = attention;
  c.seed = 7;
  return c;
}

}  // namespace

TEST_CASE("config validation") {
  NetConfig c = small_config();
  c.validate();
  c.attention_dim = 5;
  CHECK_THROWS(c.validate());
  c = small_config();
  c.encoder_layers = 3;
  CHECK_THROWS(c.validate());
  CHECK(NetConfig::desk().tokens() == 8);
  CHECK(NetConfig::full_scale().tokens() == 8);
}

TEST_CASE("all-zero network outputs the projector biases") {
  InverseNet net = InverseNet::zeros(small_config());
  net.projector[0].bias[0] = 0.5;
  net.projector[1].bias[0] = -1.25;
  net.projector[2].bias[0] = 3.0;
  const Tensor y = predict(net, random_inputs(6, 1));
  for (std::size_t r = 0; r < 6; ++r) {
    CHECK(y(r, 0) == 0.5);
    CHECK(y(r, 1) == -1.25);
    CHECK(y(r, 2) == 3.0);
  }
}

TEST_CASE("residual block with zero second layer is the identity") {
  InverseNet net(small_config());
  for (auto& b : net.encoder) {
    b.fc2.weight.fill(0.0);
    b.fc2.bias.fill(0.0);
  }
  Tape t;
  BoundNet bn(t, net, false);
  Var fm = bn.mapper_forward(t.constant(random_inputs(4, 2)));
  CHECK(bn.encoder_forward(fm).value() == fm.value());
}

TEST_CASE("attention with constant values returns those values") {
  InverseNet net(small_config());
  for (auto& a : net.attention) {
    a.value.weight.fill(0.0);
    for (std::size_t j = 0; j < a.value.bias.cols(); ++j) a.value.bias[j] = static_cast<double>(j % 4);
  }
  Tape t;
  BoundNet bn(t, net, false);
  Tensor wide(3, 16);
  for (std::size_t i = 0; i < wide.size(); ++i) wide[i] = std::sin(static_cast<double>(i));
  const Tensor& out = bn.attention_forward(t.constant(wide), Head::D).value();
  for (std::size_t r = 0; r < 3; ++r)
    for (std::size_t c = 0; c < 16; ++c) CHECK(std::fabs(out(r, c) - static_cast<double>(c % 4)) < 1e-14);
}

TEST_CASE("single token attention passes values through") {
  NetConfig c = small_config();
  c.attention_dim = 16;
  InverseNet net(c);
  Tape t;
  BoundNet bn(t, net, false);
  Tensor x(2, 16);
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = 0.1 * static_cast<double>(i);
  const Tensor out = bn.attention_forward(t.constant(x), Head::N2).value();
  const Mat v = linear(to_mat(x), net.attention[0].value);
  for (std::size_t r = 0; r < 2; ++r)
    for (std::size_t j = 0; j < 16; ++j) CHECK(std::fabs(out(r, j) - static_cast<double>(v[r][j])) < 1e-13);
}

TEST_CASE("forward matches a naive long-double implementation") {
  for (bool att : {true, false}) {
    InverseNet net(small_config(att));
    const Tensor x = random_inputs(9, 4);
    const Tensor y = predict(net, x);
    const Mat ref = naive_forward(net, x);
    for (std::size_t r = 0; r < 9; ++r)
      for (std::size_t h = 0; h < 3; ++h) CHECK(std::fabs(y(r, h) - static_cast<double>(ref[r][h])) < 1e-10);
  }
}

TEST_CASE("predictions are per-sample") {
  InverseNet net(small_config());
  const Tensor x = random_inputs(8, 5);
  const Tensor all = predict(net, x);
  for (std::size_t r = 0; r < 8; ++r) {
    Tensor one(1, 5);
    for (std::size_t c = 0; c < 5; ++c) one(0, c) = x(r, c);
    const Tensor y = predict(net, one);
    for (std::size_t h = 0; h < 3; ++h) CHECK(std::fabs(y(0, h) - all(r, h)) < 1e-12);
  }
}

TEST_CASE("wrong input width is a shape error") {
  InverseNet net(small_config());
  CHECK_THROWS_AS(predict(net, Tensor(2, 4)), ad::ShapeError);
}

TEST_CASE("init is seeded and shares mapper weights across variants") {
  const InverseNet a(small_config(true)), b(small_config(true));
  CHECK(a == b);
  NetConfig shallow = small_config(false);
  shallow.encoder_layers = 2;
  const InverseNet c(shallow);
  CHECK(c.mapper_in.weight == a.mapper_in.weight);
  CHECK(c.mapper_out.weight == a.mapper_out.weight);
  CHECK(c.projector[2].weight == a.projector[2].weight);
  NetConfig other = small_config();
  other.seed = 8;
  CHECK_FALSE(InverseNet(other).mapper_in.weight == a.mapper_in.weight);
}

TEST_CASE("parameter listing") {
  const InverseNet net(small_config());
  const auto names = net.parameter_names();
  CHECK(names.size() == net.parameters().size());
  // mapper 4 + blocks 2*8 + attention 3*6 + projectors 3*2
  CHECK(names.size() == 44);
  const InverseNet plain(small_config(false));
  CHECK(plain.parameter_names().size() == 26);
}

TEST_CASE("checkpoint round trip is exact") {
  const InverseNet net(small_config());
  const auto dir = std::filesystem::temp_directory_path() / "ellip_test_ckpt";
  std::filesystem::create_directories(dir);
  write_checkpoint(dir / "c.txt", net, R"({"note":"x"})");
  const Checkpoint back = read_checkpoint(dir / "c.txt");
  CHECK(back.net == net);
  CHECK(back.metadata.find("note") != std::string::npos);
  CHECK(checkpoint_text(back.net, back.metadata) == checkpoint_text(net, back.metadata));
  const Tensor x = random_inputs(3, 9);
  CHECK(predict(back.net, x) == predict(net, x));
  CHECK_THROWS(parse_checkpoint("not a checkpoint\n"));
  std::filesystem::remove_all(dir);
}

TEST_CASE("whole-network gradient check") {
  NetConfig c = small_config();
  c.hidden_width = 8;
  c.attention_dim = 4;
  c.encoder_layers = 2;
  const InverseNet base(c);
  const Tensor x = random_inputs(3, 11);

  const std::size_t count = base.parameters().size();

  // analytic gradients from BoundNet against central differences
  InverseNet net = base;
  ad::Tape tape;
  BoundNet bn(tape, net, true);
  auto heads = bn.forward(tape.constant(x));
  tape.backward(ad::reduce_sum(heads[0] * heads[0]) + ad::reduce_sum(heads[1]) +
                ad::reduce_sum(ad::sin(heads[2])));
  const auto grads = bn.gradients();
  auto objective = [&](const InverseNet& n) {
    const Tensor y = predict(n, x);
    double s = 0;
    for (std::size_t r = 0; r < 3; ++r) s += y(r, 0) * y(r, 0) + y(r, 1) + std::sin(y(r, 2));
    return s;
  };
  const double h = 1e-6;
  std::size_t checked = 0;
  for (std::size_t p = 0; p < count; ++p)
    for (std::size_t i = 0; i < grads[p].size(); ++i) {
      InverseNet up = base, dn = base;
      (*up.parameters()[p])[i] += h;
      (*dn.parameters()[p])[i] -= h;
      const double fd = (objective(up) - objective(dn)) / (2 * h);
      INFO(base.parameter_names()[p] << "[" << i << "]");
      CHECK(std::fabs(grads[p][i] - fd) <= 1e-7 + 1e-5 * std::fabs(fd));
      ++checked;
    }
  CHECK(checked == net.parameter_count());
}
