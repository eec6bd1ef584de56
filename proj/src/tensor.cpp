#include "langcond/tensor.h"

#include <cmath>
#include <numbers>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

namespace langcond {

namespace {
thread_local bool g_grad_enabled = true;
}

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

double Rng::normal() {
  double u1 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::size_t Rng::below(std::size_t n) {
  if (n == 0) throw std::invalid_argument("Rng::below: empty range");
  const std::uint64_t bound = static_cast<std::uint64_t>(n);
  const std::uint64_t limit = UINT64_MAX - (UINT64_MAX % bound);
  std::uint64_t x = engine_();
  while (x >= limit) x = engine_();
  return static_cast<std::size_t>(x % bound);
}

std::string Rng::state() const {
  std::ostringstream os;
  os << engine_;
  return os.str();
}

void Rng::set_state(const std::string& state) {
  std::istringstream is(state);
  is >> engine_;
  if (is.fail()) throw std::invalid_argument("Rng::set_state: malformed state");
}

std::span<double> Node::grad_buffer() {
  if (grad.empty() && !value.empty()) grad.assign(value.size(), 0.0);
  return grad;
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }
bool grad_enabled() { return g_grad_enabled; }

namespace {
std::shared_ptr<Node> new_node(Shape shape, std::vector<double> value, bool requires_grad) {
  if (numel(shape) != value.size()) {
    throw std::invalid_argument("tensor: shape " + shape_str(shape) + " does not match " +
                                std::to_string(value.size()) + " values");
  }
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  n->requires_grad = requires_grad;
  return n;
}

const Node& checked(const std::shared_ptr<Node>& n) {
  if (!n) throw std::logic_error("tensor: use of undefined tensor");
  return *n;
}
}  // namespace

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  const auto n = numel(shape);
  return Tensor(new_node(std::move(shape), std::vector<double>(n, 0.0), requires_grad));
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const auto n = numel(shape);
  return Tensor(new_node(std::move(shape), std::vector<double>(n, value), requires_grad));
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
  return Tensor(new_node(std::move(shape), std::move(values), requires_grad));
}

Tensor Tensor::scalar(double value) { return Tensor(new_node({}, {value}, false)); }

const Shape& Tensor::shape() const { return checked(node_).shape; }

std::size_t Tensor::dim(int axis) const {
  const auto& s = shape();
  const int r = static_cast<int>(s.size());
  const int a = axis < 0 ? r + axis : axis;
  if (a < 0 || a >= r) throw std::out_of_range("tensor: axis out of range for " + shape_str(s));
  return s[static_cast<std::size_t>(a)];
}

std::size_t Tensor::size() const { return checked(node_).value.size(); }
std::span<const double> Tensor::data() const { return checked(node_).value; }
std::span<double> Tensor::mutable_data() {
  checked(node_);
  return node_->value;
}

double Tensor::item() const {
  if (size() != 1) throw std::invalid_argument("tensor: item() on " + shape_str(shape()));
  return node_->value[0];
}

bool Tensor::requires_grad() const { return checked(node_).requires_grad; }
bool Tensor::has_grad() const { return !checked(node_).grad.empty(); }
std::span<const double> Tensor::grad() const { return checked(node_).grad; }
std::span<double> Tensor::mutable_grad() {
  checked(node_);
  return node_->grad_buffer();
}

void Tensor::zero_grad() {
  checked(node_);
  if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

Tensor Tensor::detach() const {
  const auto& n = checked(node_);
  return Tensor(new_node(n.shape, n.value, false));
}

Tensor Tensor::clone() const {
  const auto& n = checked(node_);
  return Tensor(new_node(n.shape, n.value, n.requires_grad));
}

void Tensor::backward() const {
  const auto& root = checked(node_);
  if (root.value.size() != 1) throw std::invalid_argument("backward: loss must be a scalar");
  if (root.consumed) throw std::logic_error("backward: graph already consumed; rebuild the forward pass");
  node_->consumed = true;
  if (!root.requires_grad) return;

  // Iterative post-order DFS gives a topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{node_.get(), 0}};
  seen.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->inputs.size()) {
      Node* child = n->inputs[next++].get();
      if (child->requires_grad && seen.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }

  node_->grad_buffer()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    n->grad_buffer();
    if (n->backward) n->backward(*n);
  }
}

Tensor make_result(Shape shape, std::vector<double> value, std::vector<Tensor> inputs, BackwardFn fn) {
  bool needs = false;
  if (g_grad_enabled) {
    for (const auto& t : inputs) needs = needs || (t.defined() && t.requires_grad());
  }
  auto n = new_node(std::move(shape), std::move(value), needs);
  if (needs) {
    n->inputs.reserve(inputs.size());
    for (const auto& t : inputs) {
      if (t.defined()) n->inputs.push_back(t.node());
    }
    n->backward = std::move(fn);
  }
  return Tensor(std::move(n));
}

std::span<double> grad_sink(const Tensor& t) {
  if (!t.defined() || !t.requires_grad()) return {};
  return t.node()->grad_buffer();
}

}  // namespace langcond
