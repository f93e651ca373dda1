#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace rgbx::nn {

// Channel-last layout: (batch, height, width, channel). Every tensor in the
// library is rank 4; lower-rank values use leading 1s.
using Shape = std::array<int, 4>;

std::int64_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

// One vertex of the reverse-mode graph. `backward` reads this node's grad and
// accumulates into the parents' grads.
struct Node {
  Shape shape{1, 1, 1, 1};
  std::vector<double> value;
  std::vector<double> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  std::vector<double>& ensure_grad();
};

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  static Tensor zeros(const Shape& shape, bool requires_grad = false);
  static Tensor full(const Shape& shape, double value, bool requires_grad = false);
  static Tensor from(const Shape& shape, std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int dim(int axis) const { return node_->shape[static_cast<std::size_t>(axis)]; }
  int batch() const { return dim(0); }
  int height() const { return dim(1); }
  int width() const { return dim(2); }
  int channels() const { return dim(3); }
  std::int64_t size() const { return static_cast<std::int64_t>(node_->value.size()); }

  std::span<const double> data() const { return node_->value; }
  // Mutable access is meant for leaves (parameters, inputs). Mutating an
  // intermediate after it was consumed invalidates its graph.
  std::span<double> mutable_data() { return node_->value; }
  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const double> grad() const { return node_->grad; }
  std::span<double> mutable_grad() { return node_->ensure_grad(); }
  void zero_grad();

  double& at(int b, int h, int w, int c);
  double at(int b, int h, int w, int c) const;
  double item() const;

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }

  // Copy of the values with no graph attached.
  Tensor detach() const;

  bool same_node(const Tensor& other) const { return node_ == other.node_; }
  const std::shared_ptr<Node>& node() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

// Reverse-mode sweep from a scalar. Leaf grads accumulate across calls until
// zero_grad().
void backward(const Tensor& loss);

bool grad_enabled();

// Disables graph construction on this thread for the guard's lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

// Builds the output node of an op. The node tracks gradients only when grad
// mode is on and at least one input requires them.
Tensor make_result(const Shape& shape, std::vector<double> values,
                   std::vector<Tensor> inputs,
                   std::function<void(Node&)> backward_fn);

}  // namespace rgbx::nn
