#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "avdit/tensor.hpp"

namespace avdit {

/// A named trainable tensor together with its accumulated gradient.
template <typename T>
struct Parameter {
    std::string name;
    Tensor<T> value;
    Tensor<T> grad;

    void zero_grad() { grad = Tensor<T>(value.shape()); }
};

template <typename T>
class Graph;

/// Handle to a node of a Graph. Cheap to copy; only valid while its graph lives.
template <typename T>
class Var {
   public:
    Var() = default;
    Var(Graph<T>* graph, std::uint32_t id) : graph_(graph), id_(id) {}

    bool valid() const noexcept { return graph_ != nullptr; }
    Graph<T>& graph() const { return *graph_; }
    std::uint32_t id() const noexcept { return id_; }

    const Tensor<T>& value() const;
    const Shape& shape() const { return value().shape(); }
    std::size_t rows() const { return value().rows(); }
    std::size_t cols() const { return value().cols(); }

   private:
    Graph<T>* graph_ = nullptr;
    std::uint32_t id_ = 0;
};

/// Gradient tape. Ops append nodes in execution order; backward() walks them
/// in exact reverse order. Leaves bound to a Parameter flush their gradient
/// into Parameter::grad (additively) at the end of backward().
template <typename T>
class Graph {
   public:
    using BackwardFn = std::function<void(Graph&, const Tensor<T>& out_grad)>;

    explicit Graph(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;

    Var<T> constant(Tensor<T> value);
    Var<T> variable(Tensor<T> value);
    /// Leaf bound to `p`; repeated calls with the same parameter reuse one node.
    Var<T> param(Parameter<T>& p);

    /// Appends an op node. `fn` receives the gradient of this node and must
    /// accumulate into the inputs via grad_of().
    Var<T> record(Tensor<T> value, std::initializer_list<Var<T>> inputs, BackwardFn fn);
    Var<T> record(Tensor<T> value, std::span<const Var<T>> inputs, BackwardFn fn);

    const Tensor<T>& value(Var<T> v) const { return nodes_[v.id()].value; }
    bool requires_grad(Var<T> v) const { return nodes_[v.id()].requires_grad; }
    bool grad_enabled() const noexcept { return grad_enabled_; }

    /// Gradient buffer of `v`, allocated as zeros on first use; nullptr when
    /// `v` does not require a gradient.
    Tensor<T>* grad_of(Var<T> v);
    /// Gradient computed by the last backward(); nullptr if none reached `v`.
    const Tensor<T>* grad(Var<T> v) const;

    /// Seeds d(root)/d(root) with ones and propagates.
    void backward(Var<T> root);
    void backward(Var<T> root, const Tensor<T>& seed);

    std::size_t size() const noexcept { return nodes_.size(); }
    /// Node ids in the order the last backward() visited them.
    const std::vector<std::uint32_t>& backward_trace() const noexcept { return trace_; }

   private:
    struct Node {
        Tensor<T> value;
        Tensor<T> grad;
        bool requires_grad = false;
        BackwardFn backward;
        Parameter<T>* param = nullptr;
    };

    Var<T> push(Node node);

    bool grad_enabled_;
    std::deque<Node> nodes_;
    std::unordered_map<Parameter<T>*, std::uint32_t> param_nodes_;
    std::vector<std::uint32_t> trace_;
};

template <typename T>
const Tensor<T>& Var<T>::value() const {
    return graph_->value(*this);
}

// ---------------------------------------------------------------------------
// Ops. Binary elementwise ops accept `b` either with a's shape or with a shape
// equal to a trailing suffix of a's shape (trailing-axis broadcast).

template <typename T> Var<T> add(Var<T> a, Var<T> b);
template <typename T> Var<T> sub(Var<T> a, Var<T> b);
template <typename T> Var<T> mul(Var<T> a, Var<T> b);
template <typename T> Var<T> scale(Var<T> a, T c);
template <typename T> Var<T> add_scalar(Var<T> a, T c);

template <typename T> Var<T> exp(Var<T> a);
/// Throws DomainError on any non-positive input.
template <typename T> Var<T> log(Var<T> a);
template <typename T> Var<T> gelu(Var<T> a);
template <typename T> Var<T> silu(Var<T> a);
template <typename T> Var<T> sigmoid(Var<T> a);
template <typename T> Var<T> square(Var<T> a);

/// Along the trailing axis.
template <typename T> Var<T> softmax(Var<T> a);
template <typename T> Var<T> log_softmax(Var<T> a);
/// Zero-mean, unit-variance rows (biased variance), no affine part.
template <typename T> Var<T> layernorm(Var<T> a, T eps = T(1e-5));

template <typename T> Var<T> matmul(Var<T> a, Var<T> b);
/// a · bᵀ for a [m x k], b [n x k].
template <typename T> Var<T> matmul_nt(Var<T> a, Var<T> b);
template <typename T> Var<T> transpose(Var<T> a);
/// Same data, new shape with equal element count.
template <typename T> Var<T> reshape(Var<T> a, Shape shape);

template <typename T> Var<T> slice_rows(Var<T> a, std::size_t begin, std::size_t end);
template <typename T> Var<T> slice_cols(Var<T> a, std::size_t begin, std::size_t end);
template <typename T> Var<T> concat_rows(std::span<const Var<T>> parts);
template <typename T> Var<T> concat_cols(std::span<const Var<T>> parts);
/// Zero rows before/after.
template <typename T> Var<T> pad_rows(Var<T> a, std::size_t before, std::size_t after);
/// Repeats a single row `n` times.
template <typename T> Var<T> repeat_rows(Var<T> a, std::size_t n);
/// out[r, :] = weights[r] * a[r, :] with constant weights.
template <typename T> Var<T> row_scale(Var<T> a, std::span<const T> weights);

/// table [V x D], ids in [0, V) -> [L x D]
template <typename T> Var<T> embedding(Var<T> table, std::span<const int> ids);

/// x [T x Cin], w [K x Cin x Cout], optional bias [Cout].
/// Output length floor((T + 2p - K) / stride) + 1.
template <typename T>
Var<T> conv1d(Var<T> x, Var<T> w, Var<T> bias, std::size_t stride, std::size_t padding);
/// x [T x C], w [K x C], optional bias [C]; stride 1.
template <typename T> Var<T> depthwise_conv1d(Var<T> x, Var<T> w, Var<T> bias, std::size_t padding);
/// x [T x Cin], w [K x Cin x Cout]. Output length (T - 1) * stride - 2p + K.
template <typename T>
Var<T> transposed_conv1d(Var<T> x, Var<T> w, Var<T> bias, std::size_t stride, std::size_t padding);

template <typename T> Var<T> sum(Var<T> a);
template <typename T> Var<T> mean(Var<T> a);

template <typename T> Var<T> operator+(Var<T> a, Var<T> b) { return add(a, b); }
template <typename T> Var<T> operator-(Var<T> a, Var<T> b) { return sub(a, b); }
template <typename T> Var<T> operator*(Var<T> a, Var<T> b) { return mul(a, b); }
template <typename T> Var<T> operator*(Var<T> a, T c) { return scale(a, c); }

/// Convenience overloads for initializer lists.
template <typename T> Var<T> concat_rows(std::initializer_list<Var<T>> parts) {
    return concat_rows<T>(std::span<const Var<T>>(parts.begin(), parts.size()));
}
template <typename T> Var<T> concat_cols(std::initializer_list<Var<T>> parts) {
    return concat_cols<T>(std::span<const Var<T>>(parts.begin(), parts.size()));
}

extern template class Graph<float>;
extern template class Graph<double>;

}  // namespace avdit
