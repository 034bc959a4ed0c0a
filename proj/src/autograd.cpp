#include "recalib/autograd.hpp"

#include <unordered_set>
#include <utility>

namespace recalib {

namespace {
thread_local bool g_grad_enabled = true;
}  // namespace

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

bool grad_enabled() { return g_grad_enabled; }

std::string shape_str(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

template <typename T>
void backward(const Var<T>& loss) {
  if (!loss.defined() || !loss.node()->has_record()) {
    throw std::logic_error("backward: tensor was not produced by a recorded forward pass");
  }
  if (loss.value().numel() != 1) {
    throw ShapeError("backward: loss must be a scalar, got shape " + shape_str(loss.shape()));
  }

  // Iterative post-order DFS gives a topological order with inputs first.
  std::vector<NodePtr<T>> order;
  std::unordered_set<Node<T>*> seen;
  std::vector<std::pair<NodePtr<T>, std::size_t>> stack;
  stack.emplace_back(loss.node(), 0);
  seen.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      NodePtr<T> child = node->inputs[next++];
      if (child->requires_grad && seen.insert(child.get()).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  loss.node()->grad_buffer().fill(T(1));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* node = it->get();
    if (!node->has_record()) continue;
    if (!node->grad.empty()) node->backward(*node);
    // Interior nodes release their record and gradient once consumed.
    node->backward = nullptr;
    node->inputs.clear();
    node->grad = Tensor<T>();
  }
}

template void backward<float>(const Var<float>&);
template void backward<double>(const Var<double>&);

}  // namespace recalib
