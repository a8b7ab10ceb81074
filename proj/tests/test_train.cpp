#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "ellip/dataset.hpp"
#include "ellip/rng.hpp"
#include "ellip/train.hpp"
#include "fixtures.hpp"

using namespace ellip;
using namespace ellip::train;
using ad::Tensor;

namespace {

data::Dataset tiny_dataset() {
  data::SynthesisPlan p;
  const auto f = data::builtin_films();
  p.films = {f[0], f[1]};
  p.substrates = {data::builtin_substrates()[0]};
  p.lambda_grid = data::uniform_grid(400.0, 900.0, 8);
  p.thickness_levels = data::uniform_grid(5.0, 60.0, 5);
  p.seed = 3;
  return data::build_dataset(p);
}

nn::NetConfig tiny_net(bool attention = true) {
  nn::NetConfig c;
  c.hidden_width = 16;
  c.encoder_layers = 2;
  c.attention_dim = 4;
  c.use_attention = attention;
  c.seed = 11;
  return c;
}

// Scalar Adam with decoupled weight decay, written out longhand.
struct ScalarAdam {
  double m = 0, v = 0;
  int t = 0;
  double step(double p, double g, double lr, double wd, double b1, double b2, double eps) {
    ++t;
    m = b1 * m + (1 - b1) * g;
    v = b2 * v + (1 - b2) * g * g;
    const double mhat = m / (1 - std::pow(b1, t));
    const double vhat = v / (1 - std::pow(b2, t));
    return p - lr * (mhat / (std::sqrt(vhat) + eps) + wd * p);
  }
};

}  // namespace

TEST_CASE("adam: zero gradient without decay leaves parameters alone") {
  Tensor p(2, 2, 1.5);
  std::vector<Tensor*> params{&p};
  AdamState st = AdamState::zeros_like(params);
  const std::vector<Tensor> g{Tensor(2, 2, 0.0)};
  adam_step(params, g, st, {});
  CHECK(p == Tensor(2, 2, 1.5));
  CHECK(st.step == 1);
}

TEST_CASE("adam: first step moves by lr against the gradient sign") {
  for (double g : {3.0, -0.02}) {
    Tensor p = Tensor::scalar(1.0);
    std::vector<Tensor*> params{&p};
    AdamState st = AdamState::zeros_like(params);
    adam_step(params, std::vector<Tensor>{Tensor::scalar(g)}, st, {1e-3, 0.0});
    CHECK(p[0] - 1.0 == doctest::Approx(-1e-3 * (g > 0 ? 1 : -1)).epsilon(1e-6));
  }
}

TEST_CASE("adam: three steps on a quadratic match a scalar reference") {
  const double a = 2.5, c = -0.7, lr = 0.01, wd = 0.1;
  Tensor p = Tensor::scalar(1.3);
  std::vector<Tensor*> params{&p};
  AdamState st = AdamState::zeros_like(params);
  ScalarAdam ref;
  double q = 1.3;
  for (int i = 0; i < 3; ++i) {
    adam_step(params, std::vector<Tensor>{Tensor::scalar(a * (p[0] - c))}, st, {lr, wd, 0.9, 0.999, 1e-8});
    q = ref.step(q, a * (q - c), lr, wd, 0.9, 0.999, 1e-8);
    CHECK(std::fabs(p[0] - q) <= 1e-12);
  }
}

TEST_CASE("adam: non-finite gradients are rejected without side effects") {
  Tensor p = Tensor::scalar(1.0);
  std::vector<Tensor*> params{&p};
  AdamState st = AdamState::zeros_like(params);
  CHECK_THROWS_AS(adam_step(params, std::vector<Tensor>{Tensor::scalar(std::nan(""))}, st, {}),
                  NonFiniteGradient);
  CHECK(p[0] == 1.0);
  CHECK(st.step == 0);
  CHECK(st.m[0][0] == 0.0);
}

TEST_CASE("metrics on the hand-computed fixture") {
  const auto fx = fixture::metrics_case();
  const Metrics m = compute_metrics(fx.pred, fx.truth, fx.threshold);
  for (int c = 0; c < 3; ++c) CHECK(m.accuracy[c] == doctest::Approx(fx.accuracy[c]).epsilon(1e-15));
  CHECK(std::fabs(m.mae - fx.mae) < 1e-15);
  CHECK(std::fabs(m.r2 - fx.r2) < 1e-15);
  CHECK(m.count == 3);
}

TEST_CASE("metrics: perfect and mean predictions") {
  const auto fx = fixture::metrics_case();
  const Metrics perfect = compute_metrics(fx.truth, fx.truth, 0.05);
  CHECK(perfect.accuracy == std::array<double, 3>{1.0, 1.0, 1.0});
  CHECK(perfect.mae == 0.0);
  CHECK(perfect.r2 == 1.0);
  CHECK(metrics_row(perfect) == "1.000 1.000 1.000 0.000 1.000");

  Tensor mean(3, 3);
  for (std::size_t c = 0; c < 3; ++c) {
    const double mu = (fx.truth(0, c) + fx.truth(1, c) + fx.truth(2, c)) / 3.0;
    for (std::size_t r = 0; r < 3; ++r) mean(r, c) = mu;
  }
  CHECK(std::fabs(compute_metrics(mean, fx.truth, 0.05).r2) < 1e-15);

  CHECK_THROWS(compute_metrics(Tensor(0, 3), Tensor(0, 3), 0.05));
  CHECK_THROWS(compute_metrics(Tensor(2, 3), Tensor(3, 3), 0.05));
}

TEST_CASE("metrics do not depend on row order") {
  Rng rng(21);
  const std::size_t n = 257;
  Tensor pred(n, 3), truth(n, 3);
  for (std::size_t i = 0; i < pred.size(); ++i) {
    truth[i] = rng.uniform(-3, 3);
    pred[i] = truth[i] + rng.uniform(-0.2, 0.2);
  }
  std::vector<std::size_t> perm(n);
  for (std::size_t i = 0; i < n; ++i) perm[i] = i;
  std::reverse(perm.begin(), perm.end());
  std::swap(perm[3], perm[100]);
  Tensor p2(n, 3), t2(n, 3);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < 3; ++c) {
      p2(r, c) = pred(perm[r], c);
      t2(r, c) = truth(perm[r], c);
    }
  CHECK(compute_metrics(pred, truth, 0.05) == compute_metrics(p2, t2, 0.05));
}

TEST_CASE("train config validation") {
  TrainConfig c;
  c.validate();
  c.batch_size = 0;
  CHECK_THROWS(c.validate());
  c = {};
  c.weights = {0.0, 1.0};
  c.recon_warmup_epochs = 2;
  CHECK_THROWS(c.validate());
  c = {};
  c.recon_warmup_epochs = 2;
  CHECK(c.weights_at(1).recon == 0.0);
  CHECK(c.weights_at(2).recon == 0.0);
  CHECK(c.weights_at(3).recon == 1.0);
}

TEST_CASE("cosine learning rate schedule") {
  TrainConfig c;
  c.learning_rate = 0.01;
  c.epochs = 4;
  CHECK(c.learning_rate_at(3) == 0.01);
  c.cosine_lr = true;
  CHECK(c.learning_rate_at(1) == 0.01);
  CHECK(c.learning_rate_at(2) == doctest::Approx(0.01 * (1 + std::sqrt(0.5)) / 2).epsilon(1e-14));
  CHECK(c.learning_rate_at(3) == doctest::Approx(0.005).epsilon(1e-14));
  CHECK(c.learning_rate_at(4) == doctest::Approx(0.01 * (1 - std::sqrt(0.5)) / 2).epsilon(1e-14));
}

TEST_CASE("zero epochs returns the initial network") {
  const data::Dataset ds = tiny_dataset();
  const nn::InverseNet net(tiny_net());
  TrainConfig cfg;
  cfg.epochs = 0;
  const TrainResult r = train_loop(net, ds, cfg);
  CHECK(r.best == net);
  CHECK(r.best_epoch == 0);
  CHECK(r.steps == 0);
  CHECK(r.history.empty());
  const auto val = data::filter_split(ds.records, data::Split::Val);
  CHECK(r.best_val == evaluate(net, val, ds.manifest.norm, cfg.eval_threshold));
}

TEST_CASE("training memorizes 64 records") {
  data::Dataset ds = tiny_dataset();
  REQUIRE(ds.records.size() == 80);
  const auto train_set = data::filter_split(ds.records, data::Split::Train);
  REQUIRE(train_set.size() == 64);
  TrainConfig cfg;
  cfg.weights = {1.0, 0.0};
  cfg.weight_decay = 0.0;
  cfg.learning_rate = 3e-3;
  cfg.batch_size = 64;
  cfg.epochs = 2000;
  cfg.seed = 5;
  nn::NetConfig nc = tiny_net();
  nc.hidden_width = 32;
  nc.attention_dim = 8;
  const TrainResult r = train_loop(nn::InverseNet(nc), ds, cfg);
  REQUIRE_FALSE(r.aborted);
  // the last epoch's weights are not necessarily the best on val, so
  // measure the training fit of the final-epoch history entry
  CHECK(r.history.back().train_fit < 1e-3);
}

TEST_CASE("training is bit-reproducible") {
  const data::Dataset ds = tiny_dataset();
  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.batch_size = 16;
  cfg.weights = {1.0, 0.1};
  cfg.seed = 9;
  const TrainResult a = train_loop(nn::InverseNet(tiny_net()), ds, cfg);
  const TrainResult b = train_loop(nn::InverseNet(tiny_net()), ds, cfg);
  CHECK(a.best == b.best);
  CHECK(history_csv(a.history) == history_csv(b.history));
  CHECK(a.op_counts == b.op_counts);
}

TEST_CASE("no-recon variant never builds the reconstruction graph") {
  const data::Dataset ds = tiny_dataset();
  TrainConfig base;
  base.epochs = 2;
  base.batch_size = 16;
  base.seed = 1;
  const auto variants = ablation_variants(tiny_net(), base);
  REQUIRE(variants.size() == 4);
  CHECK(variants[0].name == "full");
  CHECK(variants[2].name == "no-recon-loss");
  CHECK(variants[2].train.weights.recon == 0.0);
  CHECK_FALSE(variants[1].net.use_attention);
  CHECK(variants[3].net.encoder_layers == 2);

  const TrainResult full = train_loop(nn::InverseNet(variants[0].net), ds, variants[0].train);
  const TrainResult plain = train_loop(nn::InverseNet(variants[2].net), ds, variants[2].train);
  for (ad::Op op : {ad::Op::Sin, ad::Op::Cos, ad::Op::SmoothPositive}) {
    CHECK(plain.op_counts[static_cast<std::size_t>(op)] == 0);
    CHECK(full.op_counts[static_cast<std::size_t>(op)] > 0);
  }
  CHECK(plain.recon_evaluations == 0);
  CHECK(full.recon_evaluations == full.steps);
}

TEST_CASE("ablation variants share mapper weights") {
  nn::NetConfig nc = tiny_net();
  nc.encoder_layers = 6;
  const auto variants = ablation_variants(nc, TrainConfig{});
  const nn::InverseNet first(variants[0].net);
  for (const auto& v : variants) {
    const nn::InverseNet net(v.net);
    CHECK(net.mapper_in == first.mapper_in);
    CHECK(net.mapper_out == first.mapper_out);
    CHECK(net.projector == first.projector);
  }
}

TEST_CASE("checkpoint metadata carries the manifest") {
  const data::Dataset ds = tiny_dataset();
  TrainConfig cfg;
  cfg.epochs = 0;
  const TrainResult r = train_loop(nn::InverseNet(tiny_net()), ds, cfg);
  const std::string meta = checkpoint_metadata(ds.manifest, cfg, r);
  CHECK(manifest_from_metadata(meta) == ds.manifest);
}
