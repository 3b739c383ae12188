#include <algorithm>

#include "avdit/autodiff.hpp"

namespace avdit {

template <typename T>
Var<T> Graph<T>::push(Node node) {
    nodes_.push_back(std::move(node));
    return Var<T>(this, static_cast<std::uint32_t>(nodes_.size() - 1));
}

template <typename T>
Var<T> Graph<T>::constant(Tensor<T> value) {
    Node n;
    n.value = std::move(value);
    return push(std::move(n));
}

template <typename T>
Var<T> Graph<T>::variable(Tensor<T> value) {
    Node n;
    n.value = std::move(value);
    n.requires_grad = grad_enabled_;
    return push(std::move(n));
}

template <typename T>
Var<T> Graph<T>::param(Parameter<T>& p) {
    if (auto it = param_nodes_.find(&p); it != param_nodes_.end()) return Var<T>(this, it->second);
    Node n;
    n.value = p.value;
    n.requires_grad = grad_enabled_;
    n.param = &p;
    Var<T> v = push(std::move(n));
    param_nodes_.emplace(&p, v.id());
    return v;
}

template <typename T>
Var<T> Graph<T>::record(Tensor<T> value, std::initializer_list<Var<T>> inputs, BackwardFn fn) {
    return record(std::move(value), std::span<const Var<T>>(inputs.begin(), inputs.size()), std::move(fn));
}

template <typename T>
Var<T> Graph<T>::record(Tensor<T> value, std::span<const Var<T>> inputs, BackwardFn fn) {
#ifndef NDEBUG
    bool inputs_finite = true;
    for (const auto& in : inputs) inputs_finite = inputs_finite && all_finite(nodes_[in.id()].value);
    if (inputs_finite && !all_finite(value)) throw DomainError("op produced a non-finite value from finite inputs");
#endif
    Node n;
    n.value = std::move(value);
    if (grad_enabled_) {
        for (const auto& in : inputs) {
            if (in.valid() && nodes_[in.id()].requires_grad) {
                n.requires_grad = true;
                break;
            }
        }
        if (n.requires_grad) n.backward = std::move(fn);
    }
    return push(std::move(n));
}

template <typename T>
Tensor<T>* Graph<T>::grad_of(Var<T> v) {
    Node& n = nodes_[v.id()];
    if (!n.requires_grad) return nullptr;
    if (n.grad.empty()) n.grad = Tensor<T>(n.value.shape());
    return &n.grad;
}

template <typename T>
const Tensor<T>* Graph<T>::grad(Var<T> v) const {
    const Node& n = nodes_[v.id()];
    return n.grad.empty() ? nullptr : &n.grad;
}

template <typename T>
void Graph<T>::backward(Var<T> root) {
    backward(root, Tensor<T>(nodes_[root.id()].value.shape(), T(1)));
}

template <typename T>
void Graph<T>::backward(Var<T> root, const Tensor<T>& seed) {
    require_same_shape(nodes_[root.id()].value.shape(), seed.shape(), "backward seed");
    trace_.clear();
    if (!nodes_[root.id()].requires_grad) return;
    for (auto& n : nodes_) n.grad = Tensor<T>();
    nodes_[root.id()].grad = seed;
    for (std::uint32_t id = root.id() + 1; id-- > 0;) {
        Node& n = nodes_[id];
        if (n.grad.empty()) continue;
        trace_.push_back(id);
        if (n.backward) n.backward(*this, n.grad);
    }
    for (auto& n : nodes_) {
        if (n.param == nullptr || n.grad.empty()) continue;
        Tensor<T>& dst = n.param->grad;
        if (dst.shape() != n.grad.shape()) dst = Tensor<T>(n.grad.shape());
        auto d = dst.data();
        auto s = n.grad.data();
        for (std::size_t i = 0; i < d.size(); ++i) d[i] += s[i];
    }
}

template class Graph<float>;
template class Graph<double>;

}  // namespace avdit
