#include "scan/error.hpp"
#include "scan/nn.hpp"
#include "scan/ops.hpp"

namespace scan {

void TranslationNetConfig::validate() const {
  if (base_filters < 1) throw ConfigError("translation net: base_filters must be >= 1");
  if (n_res_blocks < 0) throw ConfigError("translation net: n_res_blocks must be >= 0");
  if (in_channels != 3 && in_channels != 6) throw ConfigError("translation net: in_channels must be 3 or 6");
  if (out_channels < 1) throw ConfigError("translation net: out_channels must be >= 1");
}

TranslationNet::TranslationNet(const TranslationNetConfig& cfg, std::uint64_t seed, ParameterStore& store,
                               const std::string& prefix)
    : cfg_(cfg) {
  cfg.validate();
  Initializer init(seed);
  const int f = cfg.base_filters;
  auto conv_norm = [&](const std::string& name, int in, int out, int k, int stride, int pad, int icnr,
                       int norm_channels) {
    ConvNorm cn;
    cn.conv = make_conv(store, prefix + "." + name, init, in, out, k, stride, pad, icnr);
    cn.norm = make_norm(store, prefix + "." + name + "_norm", norm_channels);
    return cn;
  };
  encoder_.push_back(conv_norm("enc0", cfg.in_channels, f, 7, 1, 3, 0, f));
  encoder_.push_back(conv_norm("enc1", f, 2 * f, 3, 2, 1, 0, 2 * f));
  encoder_.push_back(conv_norm("enc2", 2 * f, 4 * f, 3, 2, 1, 0, 4 * f));
  for (int i = 0; i < cfg.n_res_blocks; ++i) {
    const std::string name = "res" + std::to_string(i);
    ResBlock block;
    block.first = conv_norm(name + ".conv0", 4 * f, 4 * f, 3, 1, 1, 0, 4 * f);
    block.second = conv_norm(name + ".conv1", 4 * f, 4 * f, 3, 1, 1, 0, 4 * f);
    res_.push_back(std::move(block));
  }
  up_.push_back(conv_norm("up0", 4 * f, 2 * f * 4, 3, 1, 1, 2, 2 * f));
  up_.push_back(conv_norm("up1", 2 * f, f * 4, 3, 1, 1, 2, f));
  out_ = make_conv(store, prefix + ".out", init, f, cfg.out_channels, 7, 1, 3);
}

Tensor TranslationNet::forward(const Tensor& x, std::vector<Tensor>* up_trace) const {
  const Shape& s = x.shape();
  if (s.c != cfg_.in_channels) {
    throw ShapeError("translation net expects " + std::to_string(cfg_.in_channels) + " channels, got " + s.str());
  }
  if (s.h % 4 != 0 || s.w % 4 != 0 || s.h < 4 || s.w < 4) {
    throw ShapeError("translation net needs spatial sides divisible by 4, got " + s.str());
  }
  Tensor h = x;
  for (const auto& e : encoder_) h = relu(e.norm(e.conv(h)));
  for (const auto& r : res_) {
    Tensor branch = relu(r.first.norm(r.first.conv(h)));
    branch = r.second.norm(r.second.conv(branch));
    h = add(h, branch);
  }
  for (const auto& u : up_) {
    Tensor shuffled = pixel_shuffle(u.conv(h), 2);
    if (up_trace != nullptr) up_trace->push_back(shuffled);
    h = relu(u.norm(shuffled));
  }
  return tanh(out_(h));
}

void FusionBlockConfig::validate() const {
  if (hidden_filters < 1) throw ConfigError("fusion block: hidden_filters must be >= 1");
}

FusionBlock::FusionBlock(const FusionBlockConfig& cfg, std::uint64_t seed, ParameterStore& store,
                         const std::string& prefix)
    : cfg_(cfg) {
  cfg.validate();
  Initializer init(seed);
  const int h = cfg.hidden_filters;
  c0_ = make_conv(store, prefix + ".c0", init, FusionBlockConfig::in_channels, h, 3, 1, 1);
  n0_ = make_norm(store, prefix + ".c0_norm", h);
  c1_ = make_conv(store, prefix + ".c1", init, h, h, 3, 1, 1);
  n1_ = make_norm(store, prefix + ".c1_norm", h);
  c2_ = make_conv(store, prefix + ".c2", init, h, 1, 3, 1, 1);
}

Tensor FusionBlock::alpha(const Tensor& x, const Tensor& y1, const Tensor& y2) const {
  if (x.shape() != y1.shape() || x.shape() != y2.shape() || x.shape().c != 3) {
    throw ShapeError("fusion inputs must share an (N,3,H,W) shape: " + x.shape().str() + ", " + y1.shape().str() +
                     ", " + y2.shape().str());
  }
  const Tensor parts[] = {x, y1, y2};
  Tensor h = relu(n0_(c0_(concat_channels(parts))));
  h = relu(n1_(c1_(h)));
  return sigmoid(c2_(h));
}

Tensor fuse(const Tensor& y1, const Tensor& y2, const Tensor& alpha) { return lerp(y1, y2, alpha); }

FusionResult forward_fusion(const Tensor& x, const Tensor& y1, const Tensor& y2, const FusionBlock& block) {
  FusionResult r;
  r.alpha = block.alpha(x, y1, y2);
  r.fused = fuse(y1, y2, r.alpha);
  return r;
}

void DiscriminatorConfig::validate() const {
  if (base_filters < 1) throw ConfigError("discriminator: base_filters must be >= 1");
  if (n_layers < 1) throw ConfigError("discriminator: n_layers must be >= 1");
  if (in_channels < 1) throw ConfigError("discriminator: in_channels must be >= 1");
}

PatchDiscriminator::PatchDiscriminator(const DiscriminatorConfig& cfg, std::uint64_t seed, ParameterStore& store,
                                       const std::string& prefix)
    : cfg_(cfg) {
  cfg.validate();
  Initializer init(seed);
  int in = cfg.in_channels;
  for (int i = 0; i < cfg.n_layers; ++i) {
    const int out = cfg.base_filters * (1 << std::min(i, 3));
    const std::string name = prefix + ".block" + std::to_string(i);
    convs_.push_back(make_conv(store, name, init, in, out, 4, 2, 1));
    if (i > 0) norms_.push_back(make_norm(store, name + "_norm", out));
    in = out;
  }
  final_ = make_conv(store, prefix + ".final", init, in, 1, 4, 1, 1);
}

Shape PatchDiscriminator::output_shape(const Shape& input) const {
  auto too_small = [&] {
    return ShapeError("discriminator input " + input.str() + " is smaller than its receptive footprint");
  };
  int h = input.h;
  int w = input.w;
  for (int i = 0; i < cfg_.n_layers; ++i) {
    if (h < 2 || w < 2) throw too_small();
    h = (h - 2) / 2 + 1;
    w = (w - 2) / 2 + 1;
  }
  if (h < 2 || w < 2) throw too_small();
  return {input.n, 1, h - 1, w - 1};
}

Tensor PatchDiscriminator::forward(const Tensor& x) const {
  if (x.shape().c != cfg_.in_channels) {
    throw ShapeError("discriminator expects " + std::to_string(cfg_.in_channels) + " channels, got " +
                     x.shape().str());
  }
  output_shape(x.shape());
  Tensor h = leaky_relu(convs_[0](x), 0.2f);
  for (std::size_t i = 1; i < convs_.size(); ++i) h = leaky_relu(norms_[i - 1](convs_[i](h)), 0.2f);
  return final_(h);
}

}  // namespace scan
