#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace langcond {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Deterministic random stream. The engine is mt19937_64, whose output
/// sequence is fixed by the standard; every distribution on top of it is
/// implemented here so draws are identical across standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }
  /// Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Standard normal via Box-Muller (no cached second variate).
  double normal();
  /// Unbiased integer in [0, n).
  std::size_t below(std::size_t n);
  bool bernoulli(double p) { return uniform() < p; }

  std::string state() const;
  void set_state(const std::string& state);

 private:
  std::mt19937_64 engine_;
};

struct Node;

/// Dense row-major float64 tensor with an optional reverse-mode tape.
///
/// A Tensor is a shared handle: copies refer to the same storage. Values are
/// treated as immutable once an op has consumed them, except for parameters
/// updated by the optimizer between steps.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double value);

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  /// Size of an axis; negative axes count from the back.
  std::size_t dim(int axis) const;
  std::size_t size() const;

  std::span<const double> data() const;
  std::span<double> mutable_data();
  double item() const;

  bool requires_grad() const;
  bool has_grad() const;
  std::span<const double> grad() const;
  std::span<double> mutable_grad();
  void zero_grad();

  /// Runs reverse accumulation from this scalar. A graph can be walked once.
  void backward() const;

  /// Same values, no tape connection.
  Tensor detach() const;
  /// Deep copy of values (and requires_grad flag), fresh storage.
  Tensor clone() const;

  const Node* id() const { return node_.get(); }
  std::shared_ptr<Node> node() const { return node_; }
  explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

 private:
  std::shared_ptr<Node> node_;
};

using BackwardFn = std::function<void(const Node&)>;

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;
  bool requires_grad = false;
  bool consumed = false;
  std::vector<std::shared_ptr<Node>> inputs;
  BackwardFn backward;

  /// Grad buffer, allocated (zeroed) on first use.
  std::span<double> grad_buffer();
};

/// Disables tape recording on the current thread while alive.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

/// Builds an op result. `fn` runs during backward with the result node (value
/// and accumulated grad) and must push gradients into its inputs. Nothing is
/// recorded when grad mode is off or no input requires a gradient.
Tensor make_result(Shape shape, std::vector<double> value, std::vector<Tensor> inputs, BackwardFn fn);

/// Gradient sink for an input inside a backward function; empty when the input
/// does not require gradients.
std::span<double> grad_sink(const Tensor& t);

}  // namespace langcond
