#include "voxdiff/autodiff.hpp"

#include <unordered_set>
#include <utility>

#include "voxdiff/error.hpp"

namespace voxdiff::ad {

namespace {
thread_local bool g_grad_enabled = true;
}

std::string Shape::str() const {
  return "(" + std::to_string(n) + "," + std::to_string(c) + "," + std::to_string(x) + "," +
         std::to_string(y) + "," + std::to_string(z) + ")";
}

bool grad_enabled() noexcept { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

template <std::floating_point Real>
Var<Real> constant(Shape shape, std::vector<Real> values) {
  if (values.size() != shape.numel()) {
    throw ShapeError("constant of shape " + shape.str() + " given " +
                     std::to_string(values.size()) + " values");
  }
  auto node = std::make_shared<Node<Real>>();
  node->shape = shape;
  node->value = std::move(values);
  return node;
}

template <std::floating_point Real>
Var<Real> constant(Shape shape, Real fill) {
  return constant<Real>(shape, std::vector<Real>(shape.numel(), fill));
}

template <std::floating_point Real>
Var<Real> leaf(Shape shape, std::vector<Real> values) {
  auto node = constant<Real>(shape, std::move(values));
  node->requires_grad = true;
  return node;
}

template <std::floating_point Real>
void backward(const Var<Real>& loss) {
  if (!loss || loss->numel() != 1) {
    throw ShapeError("backward() needs a scalar loss, got shape " +
                     (loss ? loss->shape.str() : std::string("null")));
  }
  // Iterative post-order DFS gives a topological order (parents first).
  std::vector<Node<Real>*> order;
  std::unordered_set<const Node<Real>*> visited;
  std::vector<std::pair<Node<Real>*, std::size_t>> stack;
  stack.emplace_back(loss.get(), 0);
  visited.insert(loss.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node<Real>* parent = node->parents[next++].get();
      if (parent->requires_grad && visited.insert(parent).second) {
        stack.emplace_back(parent, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  loss->ensure_grad();
  loss->grad[0] += Real(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<Real>& node = **it;
    if (node.backward_fn && !node.grad.empty()) node.backward_fn(node);
  }
}

#define VOXDIFF_INSTANTIATE(Real)                                     \
  template Var<Real> constant<Real>(Shape, std::vector<Real>);        \
  template Var<Real> constant<Real>(Shape, Real);                     \
  template Var<Real> leaf<Real>(Shape, std::vector<Real>);            \
  template void backward<Real>(const Var<Real>&);

VOXDIFF_INSTANTIATE(float)
VOXDIFF_INSTANTIATE(double)
#undef VOXDIFF_INSTANTIATE

}  // namespace voxdiff::ad
