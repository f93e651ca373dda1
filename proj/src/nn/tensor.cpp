#include "rgbx/nn/tensor.hpp"

#include <algorithm>
#include <sstream>
#include <unordered_set>

#include "rgbx/errors.hpp"

namespace rgbx::nn {

namespace {
thread_local bool g_grad_enabled = true;
}

std::int64_t numel(const Shape& shape) {
  std::int64_t n = 1;
  for (int d : shape) n *= d;
  return n;
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '(' << shape[0] << ", " << shape[1] << ", " << shape[2] << ", " << shape[3] << ')';
  return os.str();
}

std::vector<double>& Node::ensure_grad() {
  if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
  return grad;
}

static void check_shape(const Shape& shape) {
  for (int d : shape) {
    if (d < 1) throw ShapeError("tensor dimensions must be >= 1, got " + to_string(shape));
  }
}

Tensor Tensor::zeros(const Shape& shape, bool requires_grad) {
  return full(shape, 0.0, requires_grad);
}

Tensor Tensor::full(const Shape& shape, double value, bool requires_grad) {
  check_shape(shape);
  auto node = std::make_shared<Node>();
  node->shape = shape;
  node->value.assign(static_cast<std::size_t>(numel(shape)), value);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::from(const Shape& shape, std::vector<double> values, bool requires_grad) {
  check_shape(shape);
  if (static_cast<std::int64_t>(values.size()) != numel(shape)) {
    throw ShapeError("value count " + std::to_string(values.size()) + " does not match shape " +
                     to_string(shape));
  }
  auto node = std::make_shared<Node>();
  node->shape = shape;
  node->value = std::move(values);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return full({1, 1, 1, 1}, value, requires_grad);
}

void Tensor::zero_grad() {
  if (node_) std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

static std::size_t flat_index(const Shape& s, int b, int h, int w, int c) {
  return ((static_cast<std::size_t>(b) * s[1] + h) * s[2] + w) * s[3] + c;
}

double& Tensor::at(int b, int h, int w, int c) {
  return node_->value[flat_index(node_->shape, b, h, w, c)];
}

double Tensor::at(int b, int h, int w, int c) const {
  return node_->value[flat_index(node_->shape, b, h, w, c)];
}

double Tensor::item() const {
  if (node_->value.size() != 1) {
    throw ContractError("item() on tensor of shape " + to_string(node_->shape));
  }
  return node_->value[0];
}

Tensor Tensor::detach() const { return Tensor::from(node_->shape, node_->value, false); }

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

Tensor make_result(const Shape& shape, std::vector<double> values, std::vector<Tensor> inputs,
                   std::function<void(Node&)> backward_fn) {
  auto node = std::make_shared<Node>();
  node->shape = shape;
  node->value = std::move(values);
  if (g_grad_enabled) {
    const bool any = std::any_of(inputs.begin(), inputs.end(),
                                 [](const Tensor& t) { return t.defined() && t.requires_grad(); });
    if (any) {
      node->requires_grad = true;
      node->parents.reserve(inputs.size());
      for (auto& t : inputs) {
        if (t.defined()) node->parents.push_back(t.node());
      }
      node->backward = std::move(backward_fn);
    }
  }
  return Tensor(std::move(node));
}

void backward(const Tensor& loss) {
  if (!loss.defined() || loss.size() != 1) {
    throw ContractError("backward() requires a scalar loss, got shape " +
                        (loss.defined() ? to_string(loss.shape()) : std::string("<undefined>")));
  }
  if (!loss.requires_grad()) {
    throw ContractError("backward() on a tensor that does not require grad");
  }

  // Iterative post-order DFS; reversed order is a valid topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(loss.node().get(), 0);
  visited.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* parent = node->parents[next++].get();
      if (parent->requires_grad && visited.insert(parent).second) stack.emplace_back(parent, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  loss.node()->ensure_grad()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* node = *it;
    if (node->backward) {
      node->ensure_grad();
      node->backward(*node);
    }
  }
}

}  // namespace rgbx::nn
