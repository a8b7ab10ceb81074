#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "ellip/dataset.hpp"
#include "ellip/loss.hpp"
#include "ellip/model.hpp"

namespace ellip::train {

using ad::Tensor;

struct TrainConfig {
  double learning_rate = 1e-3;
  double weight_decay = 1e-4;
  std::size_t batch_size = 256;
  std::size_t epochs = 20;
  loss::LossWeights weights;
  std::uint64_t seed = 0;
  double eval_threshold = 0.05;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::size_t recon_warmup_epochs = 0;  // recon term off for these first epochs
  double grad_clip = 0.0;               // max global gradient norm, 0 = off
  bool recon_thickness_only = false;    // recon gradient reaches the d head only
  bool cosine_lr = false;               // per-epoch cosine decay of the learning rate to 0

  void validate() const;
  loss::LossWeights weights_at(std::size_t epoch) const;
  double learning_rate_at(std::size_t epoch) const;
  bool operator==(const TrainConfig&) const = default;
};

struct AdamConfig {
  double learning_rate = 1e-3;
  double weight_decay = 0.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  static AdamConfig from(const TrainConfig& c) {
    return {c.learning_rate, c.weight_decay, c.beta1, c.beta2, c.adam_eps};
  }
};

struct AdamState {
  std::vector<Tensor> m;
  std::vector<Tensor> v;
  std::uint64_t step = 0;

  static AdamState zeros_like(std::span<Tensor* const> params);
};

class NonFiniteGradient : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// One Adam update with bias correction; weight decay is decoupled:
/// p -= lr * (mhat / (sqrt(vhat) + eps) + wd * p). Throws NonFiniteGradient
/// (leaving params and state untouched) if any gradient entry is not finite.
void adam_step(std::span<Tensor* const> params, std::span<const Tensor> grads, AdamState& state,
               const AdamConfig& cfg);

struct Metrics {
  std::array<double, 3> accuracy{};  // n2, k2, d
  double mae = 0.0;
  double r2 = 0.0;
  std::size_t count = 0;

  double accuracy_n2() const { return accuracy[0]; }
  double accuracy_k2() const { return accuracy[1]; }
  double accuracy_d() const { return accuracy[2]; }
  bool operator==(const Metrics&) const = default;
};

/// Metrics over (N, 3) predictions and truths in normalized target space.
/// Accuracy counts |pred - true| < threshold per column; MAE and R^2 pool
/// all three columns, with SST taken about each column's own mean. Sums
/// run over sorted terms so the result does not depend on row order.
Metrics compute_metrics(const Tensor& pred, const Tensor& truth, double threshold);

Metrics evaluate(const nn::InverseNet& net, std::span<const data::EllipsometricRecord> records,
                 const data::NormStats& norm, double threshold);

/// Normalized (N, 5) inputs and (N, 3) targets.
Tensor input_matrix(std::span<const data::EllipsometricRecord> records, const data::NormStats& norm);
Tensor target_matrix(std::span<const data::EllipsometricRecord> records, const data::NormStats& norm);

struct EpochRecord {
  std::size_t epoch = 0;
  double train_fit = 0.0;    // batch means, NaN when the term is off
  double train_recon = 0.0;
  double train_total = 0.0;
  std::size_t rejected_steps = 0;
  std::size_t recon_excluded = 0;
  Metrics val;
};

struct TrainResult {
  nn::InverseNet best;
  std::size_t best_epoch = 0;  // 0 = initial weights
  Metrics best_val;
  std::vector<EpochRecord> history;
  ad::OpCounts op_counts{};
  std::size_t steps = 0;
  std::size_t recon_evaluations = 0;
  bool aborted = false;
  std::string abort_reason;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Mini-batch training on the train split, validating each epoch and
/// keeping the weights with the lowest validation MAE. A non-finite loss
/// stops the run and returns the best weights seen so far.
TrainResult train_loop(nn::InverseNet net, const data::Dataset& dataset, const TrainConfig& cfg,
                       const EpochCallback& on_epoch = {});

/// Per-epoch history as CSV text.
std::string history_csv(const std::vector<EpochRecord>& history);

/// Metadata JSON stored with a trained checkpoint: manifest (normalization
/// and geometry) plus the training settings.
std::string checkpoint_metadata(const data::Manifest& manifest, const TrainConfig& cfg,
                                const TrainResult& result);
data::Manifest manifest_from_metadata(const std::string& metadata_json);

struct AblationVariant {
  std::string name;
  nn::NetConfig net;
  TrainConfig train;
};

/// full, no-attention, no-recon-loss and shallow-encoder variants of a base
/// configuration. The shallow encoder keeps a third of the layers (even,
/// at least 2).
std::vector<AblationVariant> ablation_variants(const nn::NetConfig& net, const TrainConfig& train);

struct AblationRow {
  std::string name;
  Metrics test;
  TrainResult result;
};

std::vector<AblationRow> ablation_suite(const data::Dataset& dataset,
                                        const std::vector<AblationVariant>& variants,
                                        const std::function<void(const std::string&)>& log = {});

/// Table text: model, accuracy n2/k2/d, MAE, R^2.
std::string ablation_table(const std::vector<AblationRow>& rows);

/// "a.aaa b.bbb c.ccc m.mmm r.rrr"
std::string metrics_row(const Metrics& m);

}  // namespace ellip::train
