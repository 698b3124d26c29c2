#pragma once

#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "scan/tensor.hpp"

namespace scan {

/// Named parameters, iterated in lexicographic name order.
class ParameterStore {
 public:
  /// Registers `value` under `name`. Throws UsageError on a duplicate name.
  Tensor add(const std::string& name, Tensor value);
  const Tensor& at(const std::string& name) const;
  bool contains(const std::string& name) const { return params_.count(name) != 0; }
  std::size_t size() const { return params_.size(); }
  const std::map<std::string, Tensor>& entries() const { return params_; }

  std::vector<std::pair<std::string, Tensor>> with_prefix(std::string_view prefix) const;
  void set_requires_grad(std::string_view prefix, bool on);

 private:
  std::map<std::string, Tensor> params_;
};

std::int64_t count_parameters(const ParameterStore& store);

/// Stable per-network seed from a run seed and a label such as "stage1.G".
std::uint64_t derive_seed(std::uint64_t base, std::string_view label);

/// Gaussian initialisation drawn in call order from one seeded engine.
class Initializer {
 public:
  explicit Initializer(std::uint64_t seed) : rng_(seed) {}
  Tensor normal(const Shape& shape, real stddev = 0.02f);
  /// Weights for a conv feeding pixel_shuffle(r): every group of r*r output
  /// channels that lands on one shuffled channel shares a single kernel.
  Tensor icnr(int out_channels, int in_channels, int kernel, int r, real stddev = 0.02f);

 private:
  std::mt19937_64 rng_;
};

struct Conv2d {
  Tensor weight;
  Tensor bias;
  int stride = 1;
  int pad = 0;
  Tensor operator()(const Tensor& x) const;
};

struct InstanceNorm {
  Tensor gamma;
  Tensor beta;
  Tensor operator()(const Tensor& x) const;
};

Conv2d make_conv(ParameterStore& store, const std::string& name, Initializer& init, int in_channels,
                 int out_channels, int kernel, int stride, int pad, int icnr_factor = 0);
InstanceNorm make_norm(ParameterStore& store, const std::string& name, int channels);

// --- translation network -------------------------------------------------------

struct TranslationNetConfig {
  int base_filters = 16;
  int n_res_blocks = 3;
  int in_channels = 3;
  int out_channels = 3;

  void validate() const;
  bool operator==(const TranslationNetConfig&) const = default;
};

/// Encoder (7x7, two stride-2 3x3) / residual blocks / two sub-pixel up-blocks
/// / 7x7 + tanh. Spatial size is preserved for sides divisible by 4.
class TranslationNet {
 public:
  TranslationNet(const TranslationNetConfig& cfg, std::uint64_t seed, ParameterStore& store,
                 const std::string& prefix);

  /// `up_trace`, when given, receives the pixel_shuffle output of each
  /// up-block before its normalisation.
  Tensor forward(const Tensor& x, std::vector<Tensor>* up_trace = nullptr) const;
  Tensor operator()(const Tensor& x) const { return forward(x); }
  const TranslationNetConfig& config() const { return cfg_; }

 private:
  struct ConvNorm {
    Conv2d conv;
    InstanceNorm norm;
  };
  struct ResBlock {
    ConvNorm first;
    ConvNorm second;
  };

  TranslationNetConfig cfg_;
  std::vector<ConvNorm> encoder_;
  std::vector<ResBlock> res_;
  std::vector<ConvNorm> up_;
  Conv2d out_;
};

// --- fusion block --------------------------------------------------------------

struct FusionBlockConfig {
  int hidden_filters = 8;
  static constexpr int in_channels = 9;

  void validate() const;
  bool operator==(const FusionBlockConfig&) const = default;
};

/// Two conv-IN-ReLU blocks and a conv-sigmoid block over x ⊕ y1 ⊕ y2,
/// producing a one-channel weight map in (0, 1).
class FusionBlock {
 public:
  FusionBlock(const FusionBlockConfig& cfg, std::uint64_t seed, ParameterStore& store, const std::string& prefix);
  Tensor alpha(const Tensor& x, const Tensor& y1, const Tensor& y2) const;
  const FusionBlockConfig& config() const { return cfg_; }

 private:
  FusionBlockConfig cfg_;
  Conv2d c0_, c1_, c2_;
  InstanceNorm n0_, n1_;
};

struct FusionResult {
  Tensor alpha;
  Tensor fused;
};

/// y1 * (1 - alpha) + y2 * alpha, alpha broadcast over colour channels.
Tensor fuse(const Tensor& y1, const Tensor& y2, const Tensor& alpha);
FusionResult forward_fusion(const Tensor& x, const Tensor& y1, const Tensor& y2, const FusionBlock& block);

// --- discriminator -------------------------------------------------------------

struct DiscriminatorConfig {
  int base_filters = 16;
  int n_layers = 3;
  int in_channels = 3;

  void validate() const;
  bool operator==(const DiscriminatorConfig&) const = default;
};

/// PatchGAN: n_layers 4x4 stride-2 blocks with LeakyReLU(0.2), instance norm
/// on all but the first, then a 4x4 stride-1 conv to one raw score channel.
class PatchDiscriminator {
 public:
  PatchDiscriminator(const DiscriminatorConfig& cfg, std::uint64_t seed, ParameterStore& store,
                     const std::string& prefix);
  Tensor forward(const Tensor& x) const;
  Tensor operator()(const Tensor& x) const { return forward(x); }
  /// Score-map shape for an input shape; throws ShapeError if too small.
  Shape output_shape(const Shape& input) const;
  const DiscriminatorConfig& config() const { return cfg_; }

 private:
  DiscriminatorConfig cfg_;
  std::vector<Conv2d> convs_;
  std::vector<InstanceNorm> norms_;  // one per block after the first
  Conv2d final_;
};

}  // namespace scan
