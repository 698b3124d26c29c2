#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace scan {

/// Element type of every tensor. Float by default; the double build exists so
/// finite-difference checks are not limited by float rounding.
#ifdef SCAN_REAL_DOUBLE
using real = double;
#else
using real = float;
#endif

/// Rank-4 extent in (batch, channels, height, width) order.
struct Shape {
  int n = 0;
  int c = 0;
  int h = 0;
  int w = 0;

  constexpr std::int64_t numel() const {
    return static_cast<std::int64_t>(n) * c * h * w;
  }
  constexpr std::int64_t plane() const { return static_cast<std::int64_t>(h) * w; }
  friend constexpr bool operator==(const Shape&, const Shape&) = default;
  std::string str() const;
};

class Tape;

namespace detail {

struct TensorImpl {
  Shape shape;
  std::vector<real> data;
  bool requires_grad = false;
  bool leaf = true;
  std::optional<std::vector<real>> grad;
  // Position of the producing op; only meaningful while that tape still holds it.
  const Tape* tape = nullptr;
  std::size_t tape_index = 0;
};

}  // namespace detail

/// Dense float32 tensor handle. Copies share storage; use `detach()` for a
/// value copy. Data is row-major over (n, c, h, w).
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, real fill = 0.0f);
  Tensor(Shape shape, std::vector<real> values);

  static Tensor scalar(real value);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  std::int64_t numel() const;

  std::span<const real> data() const;
  /// Mutable access for leaves (parameters, inputs). Ops never mutate inputs.
  std::span<real> data_mut();
  real item() const;
  real at(int n, int c, int h, int w) const;

  bool requires_grad() const;
  Tensor& requires_grad_(bool on = true);
  bool is_leaf() const;

  bool has_grad() const;
  /// Accumulated gradient as a fresh tensor; undefined when none was written.
  Tensor grad() const;
  std::span<const real> grad_data() const;
  void zero_grad();

  /// Value copy without history or gradient.
  Tensor detach() const;

  const void* id() const { return impl_.get(); }
  detail::TensorImpl& impl() const { return *impl_; }

 private:
  std::shared_ptr<detail::TensorImpl> impl_;
};

using BackwardFn = std::function<std::vector<Tensor>(const Tensor& grad_output)>;

/// Ordered record of differentiable ops. Ops append to the tape that is active
/// on the calling thread (see TapeScope) whenever one of their inputs requires
/// a gradient.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  void record(const char* op, std::vector<Tensor> inputs, const Tensor& output, BackwardFn fn);
  std::size_t size() const { return entries_.size(); }
  void clear();
  /// True when `t` was produced by an op still recorded here.
  bool owns(const Tensor& t) const;
  const char* op_name(std::size_t index) const { return entries_.at(index).op; }

 private:
  struct Entry {
    const char* op;
    std::vector<Tensor> inputs;
    Tensor output;
    BackwardFn backward;
  };
  std::vector<Entry> entries_;

  // Reverse sweep from `root`; returns every reached tensor with its gradient.
  std::vector<std::pair<const detail::TensorImpl*, Tensor>> sweep(const Tensor& root,
                                                                  bool create_graph);

  friend void backward(const Tensor& loss, Tape& tape);
  friend std::vector<Tensor> grad(const Tensor& output, std::span<const Tensor> inputs, Tape& tape,
                                  bool create_graph);
};

/// Makes `tape` the recording tape of this thread for the scope's lifetime.
class TapeScope {
 public:
  explicit TapeScope(Tape& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* previous_;
};

/// Suspends recording for the scope's lifetime.
class NoGradScope {
 public:
  NoGradScope();
  ~NoGradScope();
  NoGradScope(const NoGradScope&) = delete;
  NoGradScope& operator=(const NoGradScope&) = delete;

 private:
  Tape* previous_;
};

Tape* active_tape();

/// Accumulates d(loss)/d(leaf) into every reachable leaf with requires_grad.
/// `loss` must be a single-element tensor produced on `tape`.
void backward(const Tensor& loss, Tape& tape);

/// Gradients of a scalar `output` with respect to `inputs` (leaves or
/// intermediates). With `create_graph`, the gradient computation is itself
/// recorded on `tape` so the results can be differentiated again.
/// Unreached inputs receive zeros.
std::vector<Tensor> grad(const Tensor& output, std::span<const Tensor> inputs, Tape& tape,
                         bool create_graph = false);

}  // namespace scan
