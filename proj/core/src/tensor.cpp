#include "seedet/tensor.hpp"

#include <cmath>
#include <numeric>
#include <sstream>
#include <unordered_map>

#include "seedet/error.hpp"

namespace seedet {

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

namespace {
thread_local bool g_grad_enabled = true;
}

bool grad_mode_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

template <class T>
Tensor<T>::Tensor(Shape shape, T fill) : node_(std::make_shared<detail::Node<T>>()) {
  node_->data.assign(shape_numel(shape), fill);
  node_->shape = std::move(shape);
}

template <class T>
Tensor<T>::Tensor(Shape shape, std::vector<T> values)
    : node_(std::make_shared<detail::Node<T>>()) {
  if (values.size() != shape_numel(shape)) {
    throw ShapeError("tensor: " + std::to_string(values.size()) +
                     " values do not fill shape " + shape_str(shape));
  }
  node_->shape = std::move(shape);
  node_->data = std::move(values);
}

template <class T>
Tensor<T> Tensor<T>::scalar(T value) {
  return Tensor(Shape{}, std::vector<T>{value});
}

template <class T>
Tensor<T> Tensor<T>::parameter(Shape shape, std::vector<T> values) {
  Tensor t(std::move(shape), std::move(values));
  t.set_requires_grad(true);
  return t;
}

template <class T>
Tensor<T> Tensor<T>::from_node(NodePtr node) {
  Tensor t;
  t.node_ = std::move(node);
  return t;
}

template <class T>
const Shape& Tensor<T>::shape() const {
  if (!node_) throw Error("tensor: access to undefined tensor");
  return node_->shape;
}

template <class T>
std::size_t Tensor<T>::dim(std::size_t axis) const {
  const auto& s = shape();
  if (axis >= s.size()) {
    throw ShapeError("tensor: axis " + std::to_string(axis) + " out of range for " +
                     shape_str(s));
  }
  return s[axis];
}

template <class T>
std::size_t Tensor<T>::numel() const {
  return node_ ? node_->data.size() : 0;
}

template <class T>
std::span<const T> Tensor<T>::data() const {
  if (!node_) return {};
  return node_->data;
}

template <class T>
std::span<T> Tensor<T>::mutable_data() {
  if (!node_) throw Error("tensor: access to undefined tensor");
  if (!node_->leaf) throw Error("tensor: only leaf tensors may be mutated in place");
  return node_->data;
}

template <class T>
T Tensor<T>::item() const {
  if (numel() != 1) throw ShapeError("tensor: item() on tensor of shape " + shape_str(shape()));
  return node_->data[0];
}

template <class T>
bool Tensor<T>::requires_grad() const {
  return node_ && node_->requires_grad;
}

template <class T>
void Tensor<T>::set_requires_grad(bool flag) {
  if (!node_) throw Error("tensor: access to undefined tensor");
  if (!node_->leaf) throw Error("tensor: requires_grad can only be set on leaves");
  node_->requires_grad = flag;
  if (flag) {
    node_->ensure_grad();
  } else {
    node_->grad.clear();
  }
}

template <class T>
bool Tensor<T>::has_grad() const {
  return node_ && node_->grad.size() == node_->data.size() && node_->requires_grad;
}

template <class T>
std::span<const T> Tensor<T>::grad() const {
  if (!has_grad()) throw Error("tensor: gradient requested on a tensor without one");
  return node_->grad;
}

template <class T>
std::span<T> Tensor<T>::mutable_grad() {
  if (!has_grad()) throw Error("tensor: gradient requested on a tensor without one");
  return node_->grad;
}

template <class T>
void Tensor<T>::zero_grad() {
  if (has_grad()) std::fill(node_->grad.begin(), node_->grad.end(), T(0));
}

template <class T>
bool Tensor<T>::is_leaf() const {
  return !node_ || node_->leaf;
}

template <class T>
const char* Tensor<T>::op_name() const {
  return node_ ? node_->op : "undefined";
}

template <class T>
Tensor<T> Tensor<T>::clone() const {
  if (!node_) return {};
  return Tensor(node_->shape, node_->data);
}

template class Tensor<float>;
template class Tensor<double>;

namespace {

template <class T>
struct Traversal {
  std::vector<detail::Node<T>*> ops;
  std::vector<detail::Node<T>*> leaves;
};

template <class T>
Traversal<T> topological_order(detail::Node<T>* root) {
  enum class Mark : unsigned char { Open, Done };
  Traversal<T> out;
  std::unordered_map<detail::Node<T>*, Mark> marks;
  // Iterative post-order DFS; (node, next input index).
  std::vector<std::pair<detail::Node<T>*, std::size_t>> stack;
  stack.emplace_back(root, 0);
  marks[root] = Mark::Open;
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      detail::Node<T>* child = node->inputs[next++].get();
      auto it = marks.find(child);
      if (it == marks.end()) {
        marks.emplace(child, Mark::Open);
        stack.emplace_back(child, 0);
      } else if (it->second == Mark::Open) {
        throw Error("autodiff: cycle detected in computation graph");
      }
      continue;
    }
    marks[node] = Mark::Done;
    (node->leaf ? out.leaves : out.ops).push_back(node);
    stack.pop_back();
  }
  return out;
}

}  // namespace

template <class T>
ComputationRecord<T> trace(const Tensor<T>& root) {
  if (!root.defined()) throw Error("autodiff: trace of undefined tensor");
  return ComputationRecord<T>{topological_order(root.node().get()).ops};
}

template <class T>
void backward(const Tensor<T>& loss) {
  if (!loss.defined()) throw Error("autodiff: backward on undefined tensor");
  if (loss.numel() != 1) {
    throw ShapeError("autodiff: backward needs a scalar loss, got shape " +
                     shape_str(loss.shape()));
  }
  if (!loss.requires_grad()) {
    throw Error("autodiff: loss does not depend on any tensor requiring grad");
  }
  auto order = topological_order(loss.node().get());
  for (auto* op : order.ops) {
    if (op->requires_grad) op->grad.assign(op->data.size(), T(0));
  }
  detail::Node<T>* root = loss.node().get();
  root->ensure_grad();
  root->grad[0] += T(1);
  for (auto it = order.ops.rbegin(); it != order.ops.rend(); ++it) {
    detail::Node<T>* op = *it;
    if (!op->requires_grad || !op->backward) continue;
    detail::check_finite<T>(op->grad, op->op);
    op->backward(*op);
  }
  for (auto* leaf : order.leaves) {
    if (leaf->requires_grad) detail::check_finite<T>(leaf->grad, "backward");
  }
}

template ComputationRecord<float> trace(const Tensor<float>&);
template ComputationRecord<double> trace(const Tensor<double>&);
template void backward(const Tensor<float>&);
template void backward(const Tensor<double>&);

namespace detail {

template <class T>
void check_finite(std::span<const T> values, const char* op) {
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!std::isfinite(values[i])) {
      throw NumericError(std::string("non-finite value produced by ") + op + " at index " +
                         std::to_string(i));
    }
  }
}

template <class T>
Tensor<T> make_result(Shape shape, std::vector<T> values, const char* op,
                      std::vector<std::shared_ptr<Node<T>>> inputs,
                      std::function<void(Node<T>&)> backward_fn) {
  check_finite<T>(values, op);
  auto node = std::make_shared<Node<T>>();
  node->shape = std::move(shape);
  node->data = std::move(values);
  node->op = op;
  bool track = false;
  if (grad_mode_enabled()) {
    for (const auto& in : inputs) track = track || (in && in->requires_grad);
  }
  if (track) {
    node->leaf = false;
    node->requires_grad = true;
    node->inputs = std::move(inputs);
    node->backward = std::move(backward_fn);
  }
  return Tensor<T>::from_node(std::move(node));
}

template void check_finite(std::span<const float>, const char*);
template void check_finite(std::span<const double>, const char*);
template Tensor<float> make_result(Shape, std::vector<float>, const char*,
                                   std::vector<std::shared_ptr<Node<float>>>,
                                   std::function<void(Node<float>&)>);
template Tensor<double> make_result(Shape, std::vector<double>, const char*,
                                    std::vector<std::shared_ptr<Node<double>>>,
                                    std::function<void(Node<double>&)>);

}  // namespace detail

}  // namespace seedet
