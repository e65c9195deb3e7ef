#ifndef CBT_TENSOR_HPP
#define CBT_TENSOR_HPP

#include <algorithm>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "cbt/common.hpp"

namespace cbt {

using Shape = std::vector<int>;

inline int64_t shape_numel(const Shape& dims) {
  int64_t n = 1;
  for (int d : dims) n *= d;
  return n;
}

inline std::string shape_str(const Shape& dims) {
  std::string s = "[";
  for (size_t i = 0; i < dims.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(dims[i]);
  }
  return s + "]";
}

// Reverse-mode autograd node. A Tensor is a shared handle to one of these;
// ops link nodes into a DAG and backward() walks it in reverse topological
// order. backward_fn reads this node's grad and accumulates into the parents'.
template <typename T>
struct TensorNode {
  Shape dims;
  std::vector<T> value;
  std::vector<T> grad;  // empty until needed; same length as value otherwise
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<TensorNode<T>>> parents;
  std::function<void(TensorNode<T>&)> backward_fn;
};

template <typename T>
class TensorT {
 public:
  using Node = TensorNode<T>;

  TensorT() = default;

  static TensorT zeros(Shape dims) {
    return from_data(std::move(dims), {});
  }

  static TensorT full(Shape dims, T v) {
    auto t = zeros(std::move(dims));
    std::fill(t.data().begin(), t.data().end(), v);
    return t;
  }

  static TensorT scalar(T v) { return full({1}, v); }

  static TensorT from_data(Shape dims, std::vector<T> v) {
    auto node = std::make_shared<Node>();
    int64_t n = shape_numel(dims);
    CBT_REQUIRE(n > 0, "tensor shape ", shape_str(dims), " has empty extent");
    if (v.empty()) v.assign(static_cast<size_t>(n), T(0));
    CBT_REQUIRE(static_cast<int64_t>(v.size()) == n, "tensor data length ",
                v.size(), " does not match shape ", shape_str(dims));
    node->dims = std::move(dims);
    node->value = std::move(v);
    TensorT t;
    t.node_ = std::move(node);
    return t;
  }

  bool defined() const { return node_ != nullptr; }
  const Shape& dims() const { return node_->dims; }
  int dim(int i) const { return node_->dims[static_cast<size_t>(i)]; }
  int ndim() const { return static_cast<int>(node_->dims.size()); }
  int64_t numel() const { return static_cast<int64_t>(node_->value.size()); }

  std::vector<T>& data() { return node_->value; }
  const std::vector<T>& data() const { return node_->value; }
  T* ptr() { return node_->value.data(); }
  const T* ptr() const { return node_->value.data(); }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool b) { node_->requires_grad = b; }

  bool has_grad() const { return !node_->grad.empty(); }
  std::vector<T>& grad() {
    if (node_->grad.empty()) node_->grad.assign(node_->value.size(), T(0));
    return node_->grad;
  }
  const std::vector<T>& grad() const { return node_->grad; }
  void zero_grad() {
    std::fill(node_->grad.begin(), node_->grad.end(), T(0));
  }

  T item() const {
    CBT_REQUIRE(numel() == 1, "item() on non-scalar tensor ",
                shape_str(node_->dims));
    return node_->value[0];
  }

  // Value copy detached from the graph.
  TensorT detach() const {
    return from_data(node_->dims, node_->value);
  }

  const char* op_name() const { return node_->op; }

  // Runs reverse-mode accumulation from this scalar.
  void backward() const;

  std::shared_ptr<Node> node() const { return node_; }

  // Factory for op outputs; used by all op implementations, including the
  // custom warp/quality ops outside tensor-core.
  static TensorT make_op(const char* op, Shape dims, std::vector<T> value,
                         std::vector<TensorT> parents,
                         std::function<void(Node&)> backward_fn) {
    TensorT t = from_data(std::move(dims), std::move(value));
    t.node_->op = op;
    bool needs = false;
    for (auto& p : parents) {
      needs = needs || p.requires_grad();
      t.node_->parents.push_back(p.node_);
    }
    t.node_->requires_grad = needs;
    if (needs) t.node_->backward_fn = std::move(backward_fn);
#ifdef CBT_FINITE_CHECKS
    CBT_REQUIRE(all_finite(t.ptr(), t.numel()), "non-finite values in output of ", op);
#endif
    return t;
  }

 private:
  std::shared_ptr<Node> node_;
};

template <typename T>
void TensorT<T>::backward() const {
  CBT_REQUIRE(numel() == 1, "backward() requires a scalar root, got ",
              shape_str(node_->dims));
  CBT_REQUIRE(node_->requires_grad, "backward() on a graph with no grad-requiring inputs");

  // Iterative post-order DFS for topological order. A sorted vector beats a
  // hash set at the graph sizes seen here.
  std::vector<Node*> order;
  std::vector<std::pair<Node*, size_t>> stack;
  std::vector<Node*> marks;
  marks.reserve(256);
  auto mark_find = [&](Node* n) {
    auto it = std::lower_bound(marks.begin(), marks.end(), n);
    return (it != marks.end() && *it == n);
  };
  auto mark_add = [&](Node* n) {
    auto it = std::lower_bound(marks.begin(), marks.end(), n);
    marks.insert(it, n);
  };

  stack.push_back({node_.get(), 0});
  while (!stack.empty()) {
    auto& [n, idx] = stack.back();
    if (idx == 0 && mark_find(n)) {
      stack.pop_back();
      continue;
    }
    if (idx == 0) mark_add(n);
    if (idx < n->parents.size()) {
      Node* p = n->parents[idx].get();
      ++idx;
      if (p->requires_grad && !mark_find(p)) stack.push_back({p, 0});
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }

  node_->grad.assign(1, T(1));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward_fn && !n->grad.empty()) n->backward_fn(*n);
  }
}

using Tensor = TensorT<float>;
using TensorD = TensorT<double>;

// Accumulates src into node's grad buffer, allocating on first touch.
template <typename T>
inline std::vector<T>& grad_buffer(TensorNode<T>& n) {
  if (n.grad.empty()) n.grad.assign(n.value.size(), T(0));
  return n.grad;
}

}  // namespace cbt

#endif
