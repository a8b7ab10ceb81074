#include "ellip/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numbers>
#include <numeric>
#include <stdexcept>

#include <json.hpp>

#include "ellip/rng.hpp"

namespace ellip::train {

using json = nlohmann::json;

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate))
    throw std::invalid_argument("learning_rate must be > 0");
  if (!(weight_decay >= 0.0)) throw std::invalid_argument("weight_decay must be >= 0");
  if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
  if (!(eval_threshold > 0.0)) throw std::invalid_argument("eval_threshold must be > 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
    throw std::invalid_argument("Adam betas must lie in [0, 1)");
  if (!(adam_eps > 0.0)) throw std::invalid_argument("Adam eps must be > 0");
  if (!(grad_clip >= 0.0)) throw std::invalid_argument("grad_clip must be >= 0");
  weights.validate();
  if (recon_warmup_epochs > 0 && !(weights.fit > 0.0))
    throw std::invalid_argument("a recon warm-up needs a positive fit weight");
}

loss::LossWeights TrainConfig::weights_at(std::size_t epoch) const {
  if (epoch <= recon_warmup_epochs) return {weights.fit, 0.0};
  return weights;
}

double TrainConfig::learning_rate_at(std::size_t epoch) const {
  if (!cosine_lr || epochs == 0) return learning_rate;
  const double t = static_cast<double>(epoch - 1) / static_cast<double>(epochs);
  return learning_rate * 0.5 * (1.0 + std::cos(std::numbers::pi * t));
}

AdamState AdamState::zeros_like(std::span<Tensor* const> params) {
  AdamState s;
  s.m.reserve(params.size());
  s.v.reserve(params.size());
  for (const Tensor* p : params) {
    s.m.emplace_back(p->rows(), p->cols());
    s.v.emplace_back(p->rows(), p->cols());
  }
  return s;
}

void adam_step(std::span<Tensor* const> params, std::span<const Tensor> grads, AdamState& state,
               const AdamConfig& cfg) {
  if (params.size() != grads.size() || state.m.size() != params.size() ||
      state.v.size() != params.size())
    throw ad::ShapeError("adam_step: parameter, gradient and state counts differ");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!params[i]->same_shape(grads[i]) || !params[i]->same_shape(state.m[i]) ||
        !params[i]->same_shape(state.v[i]))
      throw ad::ShapeError("adam_step: shape mismatch at parameter " + std::to_string(i));
    for (double g : grads[i].values())
      if (!std::isfinite(g))
        throw NonFiniteGradient("non-finite gradient in parameter " + std::to_string(i) +
                                "; step rejected");
  }
  const auto t = static_cast<double>(++state.step);
  const double c1 = 1.0 - std::pow(cfg.beta1, t);
  const double c2 = 1.0 - std::pow(cfg.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    double* p = params[i]->data();
    double* m = state.m[i].data();
    double* v = state.v[i].data();
    const double* g = grads[i].data();
    for (std::size_t j = 0, n = grads[i].size(); j < n; ++j) {
      m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g[j];
      v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g[j] * g[j];
      const double mhat = m[j] / c1;
      const double vhat = v[j] / c2;
      p[j] -= cfg.learning_rate * (mhat / (std::sqrt(vhat) + cfg.eps) + cfg.weight_decay * p[j]);
    }
  }
}

namespace {

double sorted_sum(std::vector<double>& terms) {
  std::sort(terms.begin(), terms.end());
  double s = 0.0;
  for (double t : terms) s += t;
  return s;
}

}  // namespace

Metrics compute_metrics(const Tensor& pred, const Tensor& truth, double threshold) {
  if (!pred.same_shape(truth) || pred.cols() != 3)
    throw ad::ShapeError("compute_metrics expects matching (N, 3) tensors");
  if (pred.rows() == 0) throw std::invalid_argument("cannot evaluate an empty record set");
  if (!(threshold > 0.0)) throw std::invalid_argument("threshold must be > 0");
  const std::size_t n = pred.rows();
  Metrics out;
  out.count = n;

  std::vector<double> abs_err, sq_err, sq_dev;
  abs_err.reserve(3 * n);
  sq_err.reserve(3 * n);
  sq_dev.reserve(3 * n);
  for (std::size_t c = 0; c < 3; ++c) {
    std::vector<double> col(n);
    std::size_t hits = 0;
    for (std::size_t r = 0; r < n; ++r) {
      const double e = pred(r, c) - truth(r, c);
      if (std::fabs(e) < threshold) ++hits;
      abs_err.push_back(std::fabs(e));
      sq_err.push_back(e * e);
      col[r] = truth(r, c);
    }
    out.accuracy[c] = static_cast<double>(hits) / static_cast<double>(n);
    const double mean = sorted_sum(col) / static_cast<double>(n);
    for (std::size_t r = 0; r < n; ++r) {
      const double dev = truth(r, c) - mean;
      sq_dev.push_back(dev * dev);
    }
  }
  out.mae = sorted_sum(abs_err) / static_cast<double>(3 * n);
  const double sse = sorted_sum(sq_err);
  const double sst = sorted_sum(sq_dev);
  if (sst > 0.0) out.r2 = 1.0 - sse / sst;
  else out.r2 = sse == 0.0 ? 1.0 : -std::numeric_limits<double>::infinity();
  return out;
}

Tensor input_matrix(std::span<const data::EllipsometricRecord> records,
                    const data::NormStats& norm) {
  Tensor x(records.size(), 5);
  for (std::size_t r = 0; r < records.size(); ++r) {
    const auto v = norm.normalize_inputs(records[r]);
    for (std::size_t c = 0; c < 5; ++c) x(r, c) = v[c];
  }
  return x;
}

Tensor target_matrix(std::span<const data::EllipsometricRecord> records,
                     const data::NormStats& norm) {
  Tensor y(records.size(), 3);
  for (std::size_t r = 0; r < records.size(); ++r) {
    const auto v = norm.normalize_targets(records[r]);
    for (std::size_t c = 0; c < 3; ++c) y(r, c) = v[c];
  }
  return y;
}

Metrics evaluate(const nn::InverseNet& net, std::span<const data::EllipsometricRecord> records,
                 const data::NormStats& norm, double threshold) {
  if (records.empty()) throw std::invalid_argument("cannot evaluate an empty record set");
  return compute_metrics(nn::predict(net, input_matrix(records, norm)),
                         target_matrix(records, norm), threshold);
}

namespace {

Tensor gather_rows(const Tensor& src, std::span<const std::size_t> idx) {
  Tensor out(idx.size(), src.cols());
  for (std::size_t r = 0; r < idx.size(); ++r)
    std::copy_n(src.data() + idx[r] * src.cols(), src.cols(), out.data() + r * src.cols());
  return out;
}

void clip_global_norm(std::vector<Tensor>& grads, double max_norm) {
  double sq = 0.0;
  for (const Tensor& g : grads)
    for (double v : g.values()) sq += v * v;
  const double norm = std::sqrt(sq);
  if (!(norm > max_norm) || !std::isfinite(norm)) return;
  const double s = max_norm / norm;
  for (Tensor& g : grads)
    for (double& v : g.values()) v *= s;
}

bool all_finite(const nn::InverseNet& net) {
  for (const Tensor* p : net.parameters())
    for (double v : p->values())
      if (!std::isfinite(v)) return false;
  return true;
}

}  // namespace

TrainResult train_loop(nn::InverseNet net, const data::Dataset& dataset, const TrainConfig& cfg,
                       const EpochCallback& on_epoch) {
  cfg.validate();
  const auto train_set = data::filter_split(dataset.records, data::Split::Train);
  const auto val_set = data::filter_split(dataset.records, data::Split::Val);
  if (train_set.empty() || val_set.empty())
    throw std::invalid_argument("training needs non-empty train and val splits");
  const auto& norm = dataset.manifest.norm;
  const auto geo = loss::Geometry::from_manifest(dataset.manifest);

  const Tensor x_all = input_matrix(train_set, norm);
  const Tensor y_all = target_matrix(train_set, norm);
  const auto known_all = loss::KnownBatch::from_records(train_set);

  TrainResult result;
  result.best = net;
  result.best_val = evaluate(net, val_set, norm, cfg.eval_threshold);
  result.best_epoch = 0;

  const std::vector<Tensor*> params = net.parameters();
  AdamState state = AdamState::zeros_like(params);
  AdamConfig adam = AdamConfig::from(cfg);
  const double nan = std::numeric_limits<double>::quiet_NaN();

  std::vector<std::size_t> order(train_set.size());
  for (std::size_t epoch = 1; epoch <= cfg.epochs && !result.aborted; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(derive_seed(cfg.seed, "epoch-" + std::to_string(epoch)));
    rng.shuffle(std::span<std::size_t>(order));
    adam.learning_rate = cfg.learning_rate_at(epoch);

    EpochRecord rec;
    rec.epoch = epoch;
    double fit_sum = 0.0, recon_sum = 0.0, total_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t stop = std::min(order.size(), start + cfg.batch_size);
      const std::span<const std::size_t> idx(order.data() + start, stop - start);
      loss::KnownBatch known{gather_rows(known_all.n3, idx), gather_rows(known_all.k3, idx),
                             gather_rows(known_all.lambda, idx), gather_rows(known_all.psi, idx),
                             gather_rows(known_all.delta, idx)};

      ad::Tape tape;
      nn::BoundNet bound(tape, net, true);
      const auto pred = bound.forward(tape.constant(gather_rows(x_all, idx)));
      loss::TotalLoss l;
      try {
        l = loss::total_loss(pred, gather_rows(y_all, idx), known, norm, geo, cfg.weights_at(epoch),
                             cfg.recon_thickness_only);
      } catch (const loss::ExclusionError& e) {
        result.aborted = true;
        result.abort_reason = e.what();
        break;
      }
      if (l.recon_evaluated) ++result.recon_evaluations;
      const double total = l.total.item();
      if (!std::isfinite(total)) {
        result.aborted = true;
        result.abort_reason = "non-finite loss at epoch " + std::to_string(epoch);
        break;
      }
      tape.backward(l.total);
      const auto& counts = tape.op_counts();
      for (std::size_t k = 0; k < counts.size(); ++k) result.op_counts[k] += counts[k];

      std::vector<Tensor> grads = bound.gradients();
      if (cfg.grad_clip > 0.0) clip_global_norm(grads, cfg.grad_clip);
      try {
        adam_step(params, grads, state, adam);
      } catch (const NonFiniteGradient&) {
        ++rec.rejected_steps;
        continue;
      }
      ++result.steps;
      ++batches;
      fit_sum += l.fit;
      recon_sum += l.recon;
      total_sum += total;
      rec.recon_excluded += l.excluded;
    }
    if (result.aborted) break;
    if (!all_finite(net)) {
      result.aborted = true;
      result.abort_reason = "parameters became non-finite at epoch " + std::to_string(epoch);
      break;
    }
    const double nb = batches ? static_cast<double>(batches) : nan;
    rec.train_fit = cfg.weights.fit > 0.0 ? fit_sum / nb : nan;
    rec.train_recon = cfg.weights_at(epoch).recon > 0.0 ? recon_sum / nb : nan;
    rec.train_total = total_sum / nb;
    rec.val = evaluate(net, val_set, norm, cfg.eval_threshold);
    if (rec.val.mae < result.best_val.mae) {
      result.best = net;
      result.best_val = rec.val;
      result.best_epoch = epoch;
    }
    result.history.push_back(rec);
    if (on_epoch) on_epoch(rec);
  }
  return result;
}

namespace {

void append_number(std::string& out, double v) {
  char buf[32];
  const int n = std::snprintf(buf, sizeof buf, "%.17g", v);
  out.append(buf, static_cast<std::size_t>(n));
}

}  // namespace

std::string history_csv(const std::vector<EpochRecord>& history) {
  std::string out =
      "epoch,train_fit,train_recon,train_total,rejected_steps,recon_excluded,"
      "val_accuracy_n2,val_accuracy_k2,val_accuracy_d,val_mae,val_r2\n";
  for (const auto& r : history) {
    out += std::to_string(r.epoch);
    for (double v : {r.train_fit, r.train_recon, r.train_total}) {
      out += ',';
      append_number(out, v);
    }
    out += ',' + std::to_string(r.rejected_steps) + ',' + std::to_string(r.recon_excluded);
    for (double v : {r.val.accuracy[0], r.val.accuracy[1], r.val.accuracy[2], r.val.mae, r.val.r2}) {
      out += ',';
      append_number(out, v);
    }
    out += '\n';
  }
  return out;
}

std::string checkpoint_metadata(const data::Manifest& manifest, const TrainConfig& cfg,
                                const TrainResult& result) {
  json j;
  j["manifest"] = json::parse(data::manifest_to_json(manifest));
  j["train"] = {{"learning_rate", cfg.learning_rate},
                {"weight_decay", cfg.weight_decay},
                {"batch_size", cfg.batch_size},
                {"epochs", cfg.epochs},
                {"loss_weights", {cfg.weights.fit, cfg.weights.recon}},
                {"seed", cfg.seed},
                {"eval_threshold", cfg.eval_threshold},
                {"recon_warmup_epochs", cfg.recon_warmup_epochs},
                {"grad_clip", cfg.grad_clip},
                {"recon_thickness_only", cfg.recon_thickness_only},
                {"cosine_lr", cfg.cosine_lr}};
  j["best_epoch"] = result.best_epoch;
  j["best_val_mae"] = result.best_val.mae;
  return j.dump();
}

data::Manifest manifest_from_metadata(const std::string& metadata_json) {
  const json j = json::parse(metadata_json);
  if (!j.contains("manifest")) throw std::runtime_error("checkpoint has no dataset manifest");
  return data::manifest_from_json_text(j.at("manifest").dump());
}

std::vector<AblationVariant> ablation_variants(const nn::NetConfig& net, const TrainConfig& train) {
  std::vector<AblationVariant> v;
  v.push_back({"full", net, train});

  AblationVariant no_attn{"no-attention", net, train};
  no_attn.net.use_attention = false;
  v.push_back(no_attn);

  AblationVariant no_recon{"no-recon-loss", net, train};
  no_recon.train.weights.recon = 0.0;
  if (no_recon.train.weights.fit == 0.0) no_recon.train.weights.fit = 1.0;
  v.push_back(no_recon);

  AblationVariant shallow{"shallow-encoder", net, train};
  std::size_t layers = net.encoder_layers / 3;
  layers -= layers % 2;
  shallow.net.encoder_layers = std::max<std::size_t>(2, layers);
  v.push_back(shallow);
  return v;
}

std::vector<AblationRow> ablation_suite(const data::Dataset& dataset,
                                        const std::vector<AblationVariant>& variants,
                                        const std::function<void(const std::string&)>& log) {
  const auto test_set = data::filter_split(dataset.records, data::Split::Test);
  if (test_set.empty()) throw std::invalid_argument("ablation needs a non-empty test split");
  std::vector<AblationRow> rows;
  for (const auto& v : variants) {
    if (log) log("training variant " + v.name);
    AblationRow row;
    row.name = v.name;
    row.result = train_loop(nn::InverseNet(v.net), dataset, v.train,
                            [&](const EpochRecord& r) {
                              if (log)
                                log(v.name + " epoch " + std::to_string(r.epoch) +
                                    " val " + metrics_row(r.val));
                            });
    row.test = evaluate(row.result.best, test_set, dataset.manifest.norm, v.train.eval_threshold);
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string metrics_row(const Metrics& m) {
  char buf[128];
  std::snprintf(buf, sizeof buf, "%.3f %.3f %.3f %.3f %.3f", m.accuracy[0], m.accuracy[1],
                m.accuracy[2], m.mae, m.r2);
  return buf;
}

std::string ablation_table(const std::vector<AblationRow>& rows) {
  std::string out;
  char buf[256];
  std::snprintf(buf, sizeof buf, "%-18s %12s %12s %12s %8s %8s\n", "model", "accuracy_n2",
                "accuracy_k2", "accuracy_d", "MAE", "R2");
  out += buf;
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%-18s %11.2f%% %11.2f%% %11.2f%% %8.3f %8.4f\n",
                  r.name.c_str(), 100.0 * r.test.accuracy[0], 100.0 * r.test.accuracy[1],
                  100.0 * r.test.accuracy[2], r.test.mae, r.test.r2);
    out += buf;
  }
  return out;
}

}  // namespace ellip::train
