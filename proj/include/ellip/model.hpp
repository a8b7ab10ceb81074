#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "ellip/autodiff.hpp"

namespace ellip::nn {

using ad::Tape;
using ad::Tensor;
using ad::Var;

enum class Head : std::size_t { N2 = 0, K2 = 1, D = 2 };
inline constexpr std::array<Head, 3> kHeads{Head::N2, Head::K2, Head::D};
const char* head_name(Head h);

struct NetConfig {
  std::size_t input_dim = 5;
  std::size_t hidden_width = 64;
  std::size_t encoder_layers = 10;  // two linear layers per residual block
  std::size_t attention_dim = 8;    // d_k; tokens = hidden_width / d_k
  bool use_attention = true;
  std::uint64_t seed = 0;

  void validate() const;
  std::size_t tokens() const { return hidden_width / attention_dim; }
  std::size_t blocks() const { return encoder_layers / 2; }

  static NetConfig desk() { return {}; }
  static NetConfig full_scale() { return {5, 2048, 150, 256, true, 0}; }
  bool operator==(const NetConfig&) const = default;
};

/// y = x W + b with W (in, out) and b (1, out).
struct Linear {
  Tensor weight;
  Tensor bias;
  bool operator==(const Linear&) const = default;
};

struct AffineNorm {
  Tensor gamma;
  Tensor beta;
  bool operator==(const AffineNorm&) const = default;
};

/// y = x + fc2(relu(norm2(fc1(relu(norm1(x))))))
struct ResidualBlock {
  AffineNorm norm1;
  Linear fc1;
  AffineNorm norm2;
  Linear fc2;
  bool operator==(const ResidualBlock&) const = default;
};

struct AttentionBlock {
  Linear query;
  Linear key;
  Linear value;
  bool operator==(const AttentionBlock&) const = default;
};

class InverseNet {
public:
  InverseNet() = default;
  /// Variance-scaled uniform init; every sub-module draws from its own
  /// stream derived from (seed, module name), so variants with different
  /// depth or attention settings share identical mapper weights.
  explicit InverseNet(const NetConfig& config);
  static InverseNet zeros(const NetConfig& config);

  const NetConfig& config() const { return config_; }

  Linear mapper_in;   // input_dim -> hidden
  Linear mapper_out;  // hidden -> hidden
  std::vector<ResidualBlock> encoder;
  std::array<AttentionBlock, 3> attention;  // unused when !use_attention
  std::array<Linear, 3> projector;          // hidden -> 1

  /// Parameters in checkpoint order: mapper_in, mapper_out, encoder blocks
  /// (norm1, fc1, norm2, fc2), attention heads n2/k2/d (query, key, value),
  /// projectors n2/k2/d. Each linear contributes weight then bias; each norm
  /// gamma then beta. Attention is omitted when disabled.
  std::vector<Tensor*> parameters();
  std::vector<const Tensor*> parameters() const;
  std::vector<std::string> parameter_names() const;
  std::size_t parameter_count() const;

  bool operator==(const InverseNet&) const = default;

private:
  void allocate(const NetConfig& config);
  NetConfig config_;
};

/// Network parameters placed on a tape (as variables when trainable,
/// otherwise as constants).
class BoundNet {
public:
  BoundNet(Tape& tape, const InverseNet& net, bool trainable);

  Var mapper_forward(Var x) const;
  Var encoder_forward(Var fm) const;
  Var attention_forward(Var fe, Head head) const;
  Var projector_forward(Var fa, Head head) const;
  /// Normalized (n2, k2, d) predictions, each (batch, 1).
  std::array<Var, 3> forward(Var x) const;

  /// Adjoints after tape.backward(), in InverseNet::parameters() order.
  std::vector<Tensor> gradients() const;

private:
  struct LinearVars {
    Var weight, bias;
  };
  struct NormVars {
    Var gamma, beta;
  };
  struct BlockVars {
    NormVars norm1;
    LinearVars fc1;
    NormVars norm2;
    LinearVars fc2;
  };
  struct AttentionVars {
    LinearVars query, key, value;
  };

  Var linear(const LinearVars& l, Var x) const;

  Tape& tape_;
  NetConfig config_;
  std::vector<Var> params_;
  LinearVars mapper_in_, mapper_out_;
  std::vector<BlockVars> encoder_;
  std::array<AttentionVars, 3> attention_;
  std::array<LinearVars, 3> projector_;
};

/// Inference on a (batch, 5) matrix of normalized inputs; returns
/// (batch, 3) normalized predictions (n2, k2, d).
Tensor predict(const InverseNet& net, const Tensor& inputs);

struct Checkpoint {
  InverseNet net;
  std::string metadata;  // JSON text stored alongside the parameters
};

/// Text checkpoint: magic line, config JSON, metadata JSON, then one
/// `param <name> <rows> <cols>` line per tensor followed by its values in
/// shortest round-trip decimal form.
void write_checkpoint(const std::filesystem::path& path, const InverseNet& net,
                      const std::string& metadata_json = "{}");
std::string checkpoint_text(const InverseNet& net, const std::string& metadata_json = "{}");
Checkpoint read_checkpoint(const std::filesystem::path& path);
Checkpoint parse_checkpoint(const std::string& text);

}  // namespace ellip::nn
