#ifndef DIME_CORE_AUTODIFF_HPP
#define DIME_CORE_AUTODIFF_HPP

#include <algorithm>
#include <atomic>
#include <functional>
#include <memory>
#include <unordered_set>
#include <utility>
#include <vector>

#include "dime/core/array.hpp"

namespace dime {

namespace detail {
inline std::atomic<uint64_t>& node_counter() {
    static std::atomic<uint64_t> c{0};
    return c;
}
}  // namespace detail

// Thread-local switch: when disabled, ops produce plain values and the
// graph is pruned as it is built (inference mode).
inline bool& grad_mode() {
    thread_local bool enabled = true;
    return enabled;
}

struct NoGradGuard {
    bool prev;
    NoGradGuard() : prev(grad_mode()) { grad_mode() = false; }
    ~NoGradGuard() { grad_mode() = prev; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;
};

// Reverse-mode autodiff variable: a shared node holding a dense value,
// an optional gradient buffer, and the closure that pushes gradients to
// its parents. Graphs are built dynamically by the ops in ops.hpp /
// nn_ops.hpp; Tensor::backward() runs the tape in reverse creation order.
template <typename T>
class Tensor {
public:
    struct Node {
        Array<T> val;
        std::vector<T> grad;  // empty until first accumulation
        bool requires_grad = false;
        uint64_t id = 0;
        std::vector<std::shared_ptr<Node>> parents;
        std::function<void(Node&)> backprop;
    };
    using NodePtr = std::shared_ptr<Node>;

    Tensor() = default;
    explicit Tensor(Array<T> value, bool requires_grad = false) {
        n_ = std::make_shared<Node>();
        n_->val = std::move(value);
        n_->requires_grad = requires_grad && grad_mode();
        n_->id = detail::node_counter().fetch_add(1, std::memory_order_relaxed);
    }

    static Tensor scalar(T v, bool requires_grad = false) {
        return Tensor(Array<T>({1}, std::vector<T>{v}), requires_grad);
    }

    bool defined() const { return n_ != nullptr; }
    const Array<T>& value() const { return n_->val; }
    Array<T>& mutable_value() { return n_->val; }
    const std::vector<int>& shape() const { return n_->val.shape; }
    int64_t numel() const { return n_->val.numel(); }
    bool requires_grad() const { return n_ && n_->requires_grad; }
    T item() const { return n_->val.v.at(0); }

    // Gradient buffer, zero-initialized on first access.
    std::vector<T>& grad() {
        if (n_->grad.empty()) n_->grad.assign(n_->val.v.size(), T(0));
        return n_->grad;
    }
    const std::vector<T>& grad() const { return n_->grad; }
    bool has_grad() const { return !n_->grad.empty(); }
    void zero_grad() { n_->grad.clear(); }

    // Value reuse without graph history.
    Tensor detach() const { return Tensor(n_->val, false); }

    NodePtr node() const { return n_; }
    static Tensor from_node(NodePtr n) {
        Tensor t;
        t.n_ = std::move(n);
        return t;
    }

    // Backpropagate from a scalar output. Accumulates into the .grad of
    // every reachable node that requires a gradient.
    void backward() {
        if (!n_) throw Error("backward() on empty tensor");
        if (n_->val.numel() != 1) throw Error("backward() requires a scalar output");
        if (!n_->requires_grad) throw Error("backward() output does not require grad");

        // Reachable subgraph, executed in reverse creation order.
        std::vector<Node*> order;
        std::unordered_set<Node*> seen;
        std::vector<Node*> stack{n_.get()};
        seen.insert(n_.get());
        while (!stack.empty()) {
            Node* cur = stack.back();
            stack.pop_back();
            order.push_back(cur);
            for (const auto& p : cur->parents) {
                if (p->requires_grad && seen.insert(p.get()).second) stack.push_back(p.get());
            }
        }
        std::sort(order.begin(), order.end(),
                  [](const Node* a, const Node* b) { return a->id > b->id; });

        if (n_->grad.empty()) n_->grad.assign(1, T(0));
        n_->grad[0] += T(1);
        for (Node* node : order) {
            if (node->backprop && !node->grad.empty()) node->backprop(*node);
        }
    }

private:
    NodePtr n_;
};

namespace detail {

// Gradient buffer of a parent node, allocated on demand.
template <typename T>
inline std::vector<T>& grad_buf(typename Tensor<T>::Node& n) {
    if (n.grad.empty()) n.grad.assign(n.val.v.size(), T(0));
    return n.grad;
}

// Node factory used by every op. When gradients are off (or no parent
// needs them) the parent list and closure are dropped, so inference
// frees intermediates eagerly.
template <typename T>
Tensor<T> make_op(Array<T> val, std::vector<Tensor<T>> parents,
                  std::function<void(typename Tensor<T>::Node&)> backprop) {
    bool needs = false;
    if (grad_mode()) {
        for (const auto& p : parents) needs = needs || p.requires_grad();
    }
    Tensor<T> out(std::move(val), needs);
    if (needs) {
        auto n = out.node();
        n->parents.reserve(parents.size());
        for (auto& p : parents) n->parents.push_back(p.node());
        n->backprop = std::move(backprop);
    }
    return out;
}

}  // namespace detail
}  // namespace dime

#endif
