#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace seedet {

/// Extents, outermost first. An empty shape denotes a scalar.
using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

template <class T>
struct Node {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // sized like data iff requires_grad
  bool requires_grad = false;
  bool leaf = true;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> inputs;
  // Reads self.grad and accumulates into the grads of self.inputs.
  std::function<void(Node& self)> backward;

  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), T(0));
  }
};

}  // namespace detail

/// Dense row-major tensor (last axis fastest) with optional gradient
/// tracking. Copies share storage; use clone() for a deep copy.
template <class T>
class Tensor {
 public:
  using value_type = T;
  using NodePtr = std::shared_ptr<detail::Node<T>>;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T(0));
  Tensor(Shape shape, std::vector<T> values);

  static Tensor scalar(T value);
  /// Leaf tensor that accumulates gradients.
  static Tensor parameter(Shape shape, std::vector<T> values);

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const;
  std::size_t dim(std::size_t axis) const;
  std::size_t rank() const { return shape().size(); }
  std::size_t numel() const;

  std::span<const T> data() const;
  /// Direct write access; only leaves may be mutated.
  std::span<T> mutable_data();
  T item() const;

  bool requires_grad() const;
  void set_requires_grad(bool flag);
  bool has_grad() const;
  std::span<const T> grad() const;
  std::span<T> mutable_grad();
  void zero_grad();

  bool is_leaf() const;
  const char* op_name() const;

  /// Deep copy of the values, detached from any graph.
  Tensor clone() const;
  /// Same values, no graph history, no gradient.
  Tensor detach() const { return clone(); }

  const NodePtr& node() const { return node_; }
  static Tensor from_node(NodePtr node);

 private:
  NodePtr node_;
};

extern template class Tensor<float>;
extern template class Tensor<double>;

/// Disables graph construction on the current thread while alive.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_mode_enabled();

/// Ordered list of the operations that produced a tensor. Producers always
/// precede consumers.
template <class T>
struct ComputationRecord {
  std::vector<detail::Node<T>*> ops;
};

template <class T>
ComputationRecord<T> trace(const Tensor<T>& root);

/// Reverse-mode differentiation from a scalar loss. Leaf gradients
/// accumulate across calls; intermediate gradients are reset each call.
template <class T>
void backward(const Tensor<T>& loss);

namespace detail {

/// Throws NumericError naming `op` if any value is NaN or infinite.
template <class T>
void check_finite(std::span<const T> values, const char* op);

/// Wraps freshly computed values into a tensor, recording the backward
/// rule when gradient tracking applies to any input.
template <class T>
Tensor<T> make_result(Shape shape, std::vector<T> values, const char* op,
                      std::vector<std::shared_ptr<Node<T>>> inputs,
                      std::function<void(Node<T>&)> backward_fn);

}  // namespace detail

}  // namespace seedet
