#include "scan/tensor.hpp"

#include <algorithm>
#include <unordered_map>

#include "scan/error.hpp"
#include "scan/ops.hpp"

namespace scan {

namespace {
thread_local Tape* g_active_tape = nullptr;
}

std::string Shape::str() const {
  return "(" + std::to_string(n) + "," + std::to_string(c) + "," + std::to_string(h) + "," +
         std::to_string(w) + ")";
}

Tensor::Tensor(Shape shape, real fill) : impl_(std::make_shared<detail::TensorImpl>()) {
  if (shape.n < 0 || shape.c < 0 || shape.h < 0 || shape.w < 0) {
    throw ShapeError("negative tensor extent " + shape.str());
  }
  impl_->shape = shape;
  impl_->data.assign(static_cast<std::size_t>(shape.numel()), fill);
}

Tensor::Tensor(Shape shape, std::vector<real> values) : impl_(std::make_shared<detail::TensorImpl>()) {
  if (static_cast<std::int64_t>(values.size()) != shape.numel()) {
    throw ShapeError("tensor of shape " + shape.str() + " needs " + std::to_string(shape.numel()) +
                     " values, got " + std::to_string(values.size()));
  }
  impl_->shape = shape;
  impl_->data = std::move(values);
}

Tensor Tensor::scalar(real value) { return Tensor(Shape{1, 1, 1, 1}, value); }

const Shape& Tensor::shape() const { return impl_->shape; }
std::int64_t Tensor::numel() const { return impl_->shape.numel(); }
std::span<const real> Tensor::data() const { return impl_->data; }
std::span<real> Tensor::data_mut() { return impl_->data; }

real Tensor::item() const {
  if (numel() != 1) {
    throw UsageError("item() on tensor of shape " + shape().str());
  }
  return impl_->data[0];
}

real Tensor::at(int n, int c, int h, int w) const {
  const Shape& s = impl_->shape;
  return impl_->data[static_cast<std::size_t>(((static_cast<std::int64_t>(n) * s.c + c) * s.h + h) * s.w + w)];
}

bool Tensor::requires_grad() const { return impl_ && impl_->requires_grad; }

Tensor& Tensor::requires_grad_(bool on) {
  impl_->requires_grad = on;
  return *this;
}

bool Tensor::is_leaf() const { return impl_->leaf; }
bool Tensor::has_grad() const { return impl_->grad.has_value(); }

Tensor Tensor::grad() const {
  if (!impl_->grad) return {};
  return Tensor(impl_->shape, *impl_->grad);
}

std::span<const real> Tensor::grad_data() const {
  if (!impl_->grad) return {};
  return *impl_->grad;
}

void Tensor::zero_grad() { impl_->grad.reset(); }

Tensor Tensor::detach() const { return Tensor(impl_->shape, impl_->data); }

void Tape::record(const char* op, std::vector<Tensor> inputs, const Tensor& output, BackwardFn fn) {
  auto& impl = output.impl();
  impl.requires_grad = true;
  impl.leaf = false;
  impl.tape = this;
  impl.tape_index = entries_.size();
  entries_.push_back(Entry{op, std::move(inputs), output, std::move(fn)});
}

void Tape::clear() { entries_.clear(); }

bool Tape::owns(const Tensor& t) const {
  if (!t.defined()) return false;
  const auto& impl = t.impl();
  return impl.tape == this && impl.tape_index < entries_.size() &&
         entries_[impl.tape_index].output.id() == t.id();
}

std::vector<std::pair<const detail::TensorImpl*, Tensor>> Tape::sweep(const Tensor& root,
                                                                      bool create_graph) {
  if (!root.defined() || root.numel() != 1) {
    throw UsageError("backward needs a single-element loss");
  }
  if (!owns(root)) {
    throw UsageError("loss was not produced on this tape");
  }
  std::unordered_map<const detail::TensorImpl*, Tensor> grads;
  // Insertion order of reached tensors, so results are returned deterministically.
  std::vector<const detail::TensorImpl*> order;
  grads.emplace(&root.impl(), Tensor(root.shape(), 1.0f));
  order.push_back(&root.impl());

  Tape* previous = g_active_tape;
  g_active_tape = create_graph ? this : nullptr;
  try {
    for (std::size_t i = root.impl().tape_index + 1; i-- > 0;) {
      // Copies: the backward rule may append to entries_ when create_graph is set.
      const Tensor output = entries_[i].output;
      auto found = grads.find(&output.impl());
      if (found == grads.end()) continue;
      const Tensor g = found->second;
      const std::vector<Tensor> inputs = entries_[i].inputs;
      const BackwardFn fn = entries_[i].backward;
      std::vector<Tensor> input_grads = fn(g);
      for (std::size_t j = 0; j < inputs.size() && j < input_grads.size(); ++j) {
        if (!input_grads[j].defined() || !inputs[j].requires_grad()) continue;
        const detail::TensorImpl* key = &inputs[j].impl();
        auto slot = grads.find(key);
        if (slot == grads.end()) {
          grads.emplace(key, input_grads[j]);
          order.push_back(key);
        } else {
          slot->second = add(slot->second, input_grads[j]);
        }
      }
    }
  } catch (...) {
    g_active_tape = previous;
    throw;
  }
  g_active_tape = previous;

  std::vector<std::pair<const detail::TensorImpl*, Tensor>> out;
  out.reserve(order.size());
  for (const auto* key : order) out.emplace_back(key, grads.at(key));
  return out;
}

void backward(const Tensor& loss, Tape& tape) {
  auto reached = tape.sweep(loss, false);
  for (auto& [key, g] : reached) {
    auto* impl = const_cast<detail::TensorImpl*>(key);
    if (!impl->leaf || !impl->requires_grad) continue;
    auto values = g.data();
    if (!impl->grad) {
      impl->grad.emplace(values.begin(), values.end());
    } else {
      auto& acc = *impl->grad;
      for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += values[i];
    }
  }
}

std::vector<Tensor> grad(const Tensor& output, std::span<const Tensor> inputs, Tape& tape,
                         bool create_graph) {
  auto reached = tape.sweep(output, create_graph);
  std::vector<Tensor> result;
  result.reserve(inputs.size());
  for (const auto& in : inputs) {
    auto it = std::find_if(reached.begin(), reached.end(),
                           [&](const auto& kv) { return kv.first == &in.impl(); });
    result.push_back(it != reached.end() ? it->second : Tensor(in.shape(), 0.0f));
  }
  return result;
}

TapeScope::TapeScope(Tape& tape) : previous_(g_active_tape) { g_active_tape = &tape; }
TapeScope::~TapeScope() { g_active_tape = previous_; }

NoGradScope::NoGradScope() : previous_(g_active_tape) { g_active_tape = nullptr; }
NoGradScope::~NoGradScope() { g_active_tape = previous_; }

Tape* active_tape() { return g_active_tape; }

}  // namespace scan
