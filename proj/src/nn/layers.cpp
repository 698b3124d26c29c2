#include <numeric>

#include "scan/error.hpp"
#include "scan/nn.hpp"
#include "scan/ops.hpp"

namespace scan {

Tensor ParameterStore::add(const std::string& name, Tensor value) {
  if (!value.defined()) throw UsageError("parameter " + name + " is undefined");
  if (!params_.emplace(name, value).second) throw UsageError("duplicate parameter name " + name);
  return value;
}

const Tensor& ParameterStore::at(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw UsageError("no parameter named " + name);
  return it->second;
}

std::vector<std::pair<std::string, Tensor>> ParameterStore::with_prefix(std::string_view prefix) const {
  std::vector<std::pair<std::string, Tensor>> out;
  for (auto it = params_.lower_bound(std::string(prefix)); it != params_.end(); ++it) {
    if (it->first.compare(0, prefix.size(), prefix) != 0) break;
    out.emplace_back(it->first, it->second);
  }
  return out;
}

void ParameterStore::set_requires_grad(std::string_view prefix, bool on) {
  for (auto& [name, t] : with_prefix(prefix)) t.requires_grad_(on);
}

std::int64_t count_parameters(const ParameterStore& store) {
  std::int64_t total = 0;
  for (const auto& [name, t] : store.entries()) total += t.numel();
  return total;
}

std::uint64_t derive_seed(std::uint64_t base, std::string_view label) {
  // FNV-1a over the label, then a splitmix64 finaliser.
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : label) {
    h ^= c;
    h *= 1099511628211ull;
  }
  std::uint64_t z = base + 0x9e3779b97f4a7c15ull * (h | 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

Tensor Initializer::normal(const Shape& shape, real stddev) {
  std::normal_distribution<real> dist(0.0f, stddev);
  Tensor t(shape);
  for (real& v : t.data_mut()) v = dist(rng_);
  return t;
}

Tensor Initializer::icnr(int out_channels, int in_channels, int kernel, int r, real stddev) {
  const int groups = r * r;
  if (out_channels % groups != 0) throw ShapeError("icnr: output channels not divisible by r^2");
  const Tensor base = normal({out_channels / groups, in_channels, kernel, kernel}, stddev);
  Tensor t(Shape{out_channels, in_channels, kernel, kernel});
  const std::size_t per = static_cast<std::size_t>(in_channels) * kernel * kernel;
  const auto src = base.data();
  auto dst = t.data_mut();
  for (int oc = 0; oc < out_channels; ++oc) {
    const auto from = src.subspan(static_cast<std::size_t>(oc / groups) * per, per);
    std::copy(from.begin(), from.end(), dst.begin() + static_cast<std::ptrdiff_t>(oc * per));
  }
  return t;
}

Tensor Conv2d::operator()(const Tensor& x) const { return conv2d(x, weight, bias, stride, pad); }

Tensor InstanceNorm::operator()(const Tensor& x) const { return instance_norm(x, gamma, beta); }

Conv2d make_conv(ParameterStore& store, const std::string& name, Initializer& init, int in_channels,
                 int out_channels, int kernel, int stride, int pad, int icnr_factor) {
  Conv2d c;
  c.weight = store.add(name + ".weight", icnr_factor > 0
                                              ? init.icnr(out_channels, in_channels, kernel, icnr_factor)
                                              : init.normal({out_channels, in_channels, kernel, kernel}));
  c.bias = store.add(name + ".bias", Tensor(Shape{1, out_channels, 1, 1}, 0.0f));
  c.weight.requires_grad_(true);
  c.bias.requires_grad_(true);
  c.stride = stride;
  c.pad = pad;
  return c;
}

InstanceNorm make_norm(ParameterStore& store, const std::string& name, int channels) {
  InstanceNorm n;
  n.gamma = store.add(name + ".gamma", Tensor(Shape{1, channels, 1, 1}, 1.0f));
  n.beta = store.add(name + ".beta", Tensor(Shape{1, channels, 1, 1}, 0.0f));
  n.gamma.requires_grad_(true);
  n.beta.requires_grad_(true);
  return n;
}

}  // namespace scan
