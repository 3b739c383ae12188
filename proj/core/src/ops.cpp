#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <numbers>

#include "avdit/autodiff.hpp"

namespace avdit {

namespace {

template <typename T>
using MatMap = Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
template <typename T>
using ConstMatMap = Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

template <typename T>
ConstMatMap<T> cmap(const Tensor<T>& t, std::size_t rows, std::size_t cols) {
    return ConstMatMap<T>(t.ptr(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}
template <typename T>
MatMap<T> mmap(Tensor<T>& t, std::size_t rows, std::size_t cols) {
    return MatMap<T>(t.ptr(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

bool is_trailing_suffix(const Shape& big, const Shape& small) {
    if (small.size() > big.size()) return false;
    return std::equal(small.rbegin(), small.rend(), big.rbegin());
}

template <typename T>
std::size_t broadcast_inner(Var<T> a, Var<T> b, const char* op) {
    const Shape& sa = a.shape();
    const Shape& sb = b.shape();
    if (sa == sb) return a.value().numel();
    if (!is_trailing_suffix(sa, sb)) {
        throw DimensionError(std::string(op) + ": cannot broadcast " + shape_str(sb) + " onto " + shape_str(sa));
    }
    return b.value().numel();
}

template <typename T>
void require_rank2(Var<T> a, const char* op) {
    if (a.value().rank() != 2) {
        throw DimensionError(std::string(op) + ": expected a rank-2 tensor, got " + shape_str(a.shape()));
    }
}

template <typename T>
void accumulate_reduced(Tensor<T>& dst, const Tensor<T>& src, std::size_t inner) {
    auto d = dst.data();
    auto s = src.data();
    for (std::size_t i = 0; i < s.size(); ++i) d[i % inner] += s[i];
}

template <typename T>
void accumulate(Tensor<T>& dst, const Tensor<T>& src) {
    auto d = dst.data();
    auto s = src.data();
    for (std::size_t i = 0; i < s.size(); ++i) d[i] += s[i];
}

// Unary elementwise op with derivative expressed through (x, y).
template <typename T, typename Fwd, typename Deriv>
Var<T> unary(Var<T> a, Fwd fwd, Deriv deriv) {
    const Tensor<T>& x = a.value();
    Tensor<T> y(x.shape());
    for (std::size_t i = 0; i < x.numel(); ++i) y[i] = fwd(x[i]);
    return a.graph().record(std::move(y), {a}, [a, deriv](Graph<T>& g, const Tensor<T>& gy) {
        Tensor<T>* ga = g.grad_of(a);
        if (!ga) return;
        const Tensor<T>& xv = g.value(a);
        for (std::size_t i = 0; i < xv.numel(); ++i) (*ga)[i] += gy[i] * deriv(xv[i]);
    });
}

}  // namespace

// ---------------------------------------------------------------------------
// elementwise

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
    const std::size_t inner = broadcast_inner(a, b, "add");
    const Tensor<T>& x = a.value();
    const Tensor<T>& y = b.value();
    Tensor<T> out(x.shape());
    for (std::size_t i = 0; i < x.numel(); ++i) out[i] = x[i] + y[i % inner];
    return a.graph().record(std::move(out), {a, b}, [a, b, inner](Graph<T>& g, const Tensor<T>& go) {
        if (auto* ga = g.grad_of(a)) accumulate(*ga, go);
        if (auto* gb = g.grad_of(b)) accumulate_reduced(*gb, go, inner);
    });
}

template <typename T>
Var<T> sub(Var<T> a, Var<T> b) {
    const std::size_t inner = broadcast_inner(a, b, "sub");
    const Tensor<T>& x = a.value();
    const Tensor<T>& y = b.value();
    Tensor<T> out(x.shape());
    for (std::size_t i = 0; i < x.numel(); ++i) out[i] = x[i] - y[i % inner];
    return a.graph().record(std::move(out), {a, b}, [a, b, inner](Graph<T>& g, const Tensor<T>& go) {
        if (auto* ga = g.grad_of(a)) accumulate(*ga, go);
        if (auto* gb = g.grad_of(b)) {
            auto d = gb->data();
            for (std::size_t i = 0; i < go.numel(); ++i) d[i % inner] -= go[i];
        }
    });
}

template <typename T>
Var<T> mul(Var<T> a, Var<T> b) {
    const std::size_t inner = broadcast_inner(a, b, "mul");
    const Tensor<T>& x = a.value();
    const Tensor<T>& y = b.value();
    Tensor<T> out(x.shape());
    for (std::size_t i = 0; i < x.numel(); ++i) out[i] = x[i] * y[i % inner];
    return a.graph().record(std::move(out), {a, b}, [a, b, inner](Graph<T>& g, const Tensor<T>& go) {
        const Tensor<T>& xv = g.value(a);
        const Tensor<T>& yv = g.value(b);
        if (auto* ga = g.grad_of(a)) {
            for (std::size_t i = 0; i < go.numel(); ++i) (*ga)[i] += go[i] * yv[i % inner];
        }
        if (auto* gb = g.grad_of(b)) {
            for (std::size_t i = 0; i < go.numel(); ++i) (*gb)[i % inner] += go[i] * xv[i];
        }
    });
}

template <typename T>
Var<T> scale(Var<T> a, T c) {
    const Tensor<T>& x = a.value();
    Tensor<T> out(x.shape());
    for (std::size_t i = 0; i < x.numel(); ++i) out[i] = x[i] * c;
    return a.graph().record(std::move(out), {a}, [a, c](Graph<T>& g, const Tensor<T>& go) {
        if (auto* ga = g.grad_of(a)) {
            for (std::size_t i = 0; i < go.numel(); ++i) (*ga)[i] += go[i] * c;
        }
    });
}

template <typename T>
Var<T> add_scalar(Var<T> a, T c) {
    const Tensor<T>& x = a.value();
    Tensor<T> out(x.shape());
    for (std::size_t i = 0; i < x.numel(); ++i) out[i] = x[i] + c;
    return a.graph().record(std::move(out), {a}, [a](Graph<T>& g, const Tensor<T>& go) {
        if (auto* ga = g.grad_of(a)) accumulate(*ga, go);
    });
}

template <typename T>
Var<T> exp(Var<T> a) {
    const Tensor<T>& x = a.value();
    Tensor<T> y(x.shape());
    for (std::size_t i = 0; i < x.numel(); ++i) y[i] = std::exp(x[i]);
    Tensor<T> saved = y;
    return a.graph().record(std::move(y), {a}, [a, y = std::move(saved)](Graph<T>& g, const Tensor<T>& go) {
        Tensor<T>* ga = g.grad_of(a);
        if (!ga) return;
        for (std::size_t i = 0; i < go.numel(); ++i) (*ga)[i] += go[i] * y[i];
    });
}

template <typename T>
Var<T> log(Var<T> a) {
    for (T v : a.value().data()) {
        if (!(v > T(0))) throw DomainError("log: non-positive input");
    }
    return unary<T>(a, [](T x) { return std::log(x); }, [](T x) { return T(1) / x; });
}

template <typename T>
Var<T> gelu(Var<T> a) {
    constexpr T inv_sqrt2 = T(0.70710678118654752440);
    constexpr T inv_sqrt_2pi = T(0.39894228040143267794);
    return unary<T>(
        a, [=](T x) { return T(0.5) * x * (T(1) + std::erf(x * inv_sqrt2)); },
        [=](T x) { return T(0.5) * (T(1) + std::erf(x * inv_sqrt2)) + x * inv_sqrt_2pi * std::exp(T(-0.5) * x * x); });
}

template <typename T>
Var<T> sigmoid(Var<T> a) {
    auto sig = [](T x) { return T(1) / (T(1) + std::exp(-x)); };
    return unary<T>(a, sig, [=](T x) {
        const T s = sig(x);
        return s * (T(1) - s);
    });
}

template <typename T>
Var<T> silu(Var<T> a) {
    auto sig = [](T x) { return T(1) / (T(1) + std::exp(-x)); };
    return unary<T>(
        a, [=](T x) { return x * sig(x); },
        [=](T x) {
            const T s = sig(x);
            return s * (T(1) + x * (T(1) - s));
        });
}

template <typename T>
Var<T> square(Var<T> a) {
    return unary<T>(a, [](T x) { return x * x; }, [](T x) { return T(2) * x; });
}

// ---------------------------------------------------------------------------
// row-wise normalizations (trailing axis)

template <typename T>
Var<T> softmax(Var<T> a) {
    const Tensor<T>& x = a.value();
    const std::size_t r = x.numel() / x.cols(), c = x.cols();
    Tensor<T> y(x.shape());
    for (std::size_t i = 0; i < r; ++i) {
        const T* xi = x.ptr() + i * c;
        T* yi = y.ptr() + i * c;
        const T m = *std::max_element(xi, xi + c);
        T s = 0;
        for (std::size_t j = 0; j < c; ++j) s += (yi[j] = std::exp(xi[j] - m));
        const T inv = T(1) / s;
        for (std::size_t j = 0; j < c; ++j) yi[j] *= inv;
    }
    Tensor<T> saved = y;
    return a.graph().record(std::move(y), {a},
                            [a, r, c, y = std::move(saved)](Graph<T>& g, const Tensor<T>& go) {
                                Tensor<T>* ga = g.grad_of(a);
                                if (!ga) return;
                                for (std::size_t i = 0; i < r; ++i) {
                                    const T* yi = y.ptr() + i * c;
                                    const T* gi = go.ptr() + i * c;
                                    T dot = 0;
                                    for (std::size_t j = 0; j < c; ++j) dot += gi[j] * yi[j];
                                    T* di = ga->ptr() + i * c;
                                    for (std::size_t j = 0; j < c; ++j) di[j] += yi[j] * (gi[j] - dot);
                                }
                            });
}

template <typename T>
Var<T> log_softmax(Var<T> a) {
    const Tensor<T>& x = a.value();
    const std::size_t r = x.numel() / x.cols(), c = x.cols();
    Tensor<T> y(x.shape());
    for (std::size_t i = 0; i < r; ++i) {
        const T* xi = x.ptr() + i * c;
        T* yi = y.ptr() + i * c;
        const T m = *std::max_element(xi, xi + c);
        T s = 0;
        for (std::size_t j = 0; j < c; ++j) s += std::exp(xi[j] - m);
        const T lse = m + std::log(s);
        for (std::size_t j = 0; j < c; ++j) yi[j] = xi[j] - lse;
    }
    Tensor<T> saved = y;
    return a.graph().record(std::move(y), {a},
                            [a, r, c, y = std::move(saved)](Graph<T>& g, const Tensor<T>& go) {
                                Tensor<T>* ga = g.grad_of(a);
                                if (!ga) return;
                                for (std::size_t i = 0; i < r; ++i) {
                                    const T* yi = y.ptr() + i * c;
                                    const T* gi = go.ptr() + i * c;
                                    T s = 0;
                                    for (std::size_t j = 0; j < c; ++j) s += gi[j];
                                    T* di = ga->ptr() + i * c;
                                    for (std::size_t j = 0; j < c; ++j) di[j] += gi[j] - std::exp(yi[j]) * s;
                                }
                            });
}

template <typename T>
Var<T> layernorm(Var<T> a, T eps) {
    const Tensor<T>& x = a.value();
    const std::size_t r = x.numel() / x.cols(), c = x.cols();
    Tensor<T> y(x.shape());
    std::vector<T> rstd(r);
    for (std::size_t i = 0; i < r; ++i) {
        const T* xi = x.ptr() + i * c;
        T mu = 0;
        for (std::size_t j = 0; j < c; ++j) mu += xi[j];
        mu /= T(c);
        T var = 0;
        for (std::size_t j = 0; j < c; ++j) var += (xi[j] - mu) * (xi[j] - mu);
        var /= T(c);
        rstd[i] = T(1) / std::sqrt(var + eps);
        T* yi = y.ptr() + i * c;
        for (std::size_t j = 0; j < c; ++j) yi[j] = (xi[j] - mu) * rstd[i];
    }
    Tensor<T> xhat = y;
    return a.graph().record(
        std::move(y), {a},
        [a, r, c, xhat = std::move(xhat), rstd = std::move(rstd)](Graph<T>& g, const Tensor<T>& go) {
            Tensor<T>* ga = g.grad_of(a);
            if (!ga) return;
            for (std::size_t i = 0; i < r; ++i) {
                const T* hi = xhat.ptr() + i * c;
                const T* gi = go.ptr() + i * c;
                T mg = 0, mgh = 0;
                for (std::size_t j = 0; j < c; ++j) {
                    mg += gi[j];
                    mgh += gi[j] * hi[j];
                }
                mg /= T(c);
                mgh /= T(c);
                T* di = ga->ptr() + i * c;
                for (std::size_t j = 0; j < c; ++j) di[j] += rstd[i] * (gi[j] - mg - hi[j] * mgh);
            }
        });
}

// ---------------------------------------------------------------------------
// linear algebra

template <typename T>
Var<T> matmul(Var<T> a, Var<T> b) {
    require_rank2(a, "matmul");
    require_rank2(b, "matmul");
    const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
    if (b.rows() != k) {
        throw DimensionError("matmul: inner extents differ, " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
    }
    Tensor<T> out(Shape{m, n});
    mmap(out, m, n).noalias() = cmap(a.value(), m, k) * cmap(b.value(), k, n);
    return a.graph().record(std::move(out), {a, b}, [a, b, m, k, n](Graph<T>& g, const Tensor<T>& go) {
        auto gmap = cmap(go, m, n);
        if (auto* ga = g.grad_of(a)) mmap(*ga, m, k).noalias() += gmap * cmap(g.value(b), k, n).transpose();
        if (auto* gb = g.grad_of(b)) mmap(*gb, k, n).noalias() += cmap(g.value(a), m, k).transpose() * gmap;
    });
}

template <typename T>
Var<T> matmul_nt(Var<T> a, Var<T> b) {
    require_rank2(a, "matmul_nt");
    require_rank2(b, "matmul_nt");
    const std::size_t m = a.rows(), k = a.cols(), n = b.rows();
    if (b.cols() != k) {
        throw DimensionError("matmul_nt: inner extents differ, " + shape_str(a.shape()) + " x " +
                             shape_str(b.shape()) + "^T");
    }
    Tensor<T> out(Shape{m, n});
    mmap(out, m, n).noalias() = cmap(a.value(), m, k) * cmap(b.value(), n, k).transpose();
    return a.graph().record(std::move(out), {a, b}, [a, b, m, k, n](Graph<T>& g, const Tensor<T>& go) {
        auto gmap = cmap(go, m, n);
        if (auto* ga = g.grad_of(a)) mmap(*ga, m, k).noalias() += gmap * cmap(g.value(b), n, k);
        if (auto* gb = g.grad_of(b)) mmap(*gb, n, k).noalias() += gmap.transpose() * cmap(g.value(a), m, k);
    });
}

template <typename T>
Var<T> transpose(Var<T> a) {
    require_rank2(a, "transpose");
    const std::size_t m = a.rows(), n = a.cols();
    Tensor<T> out(Shape{n, m});
    mmap(out, n, m) = cmap(a.value(), m, n).transpose();
    return a.graph().record(std::move(out), {a}, [a, m, n](Graph<T>& g, const Tensor<T>& go) {
        if (auto* ga = g.grad_of(a)) mmap(*ga, m, n) += cmap(go, n, m).transpose();
    });
}

template <typename T>
Var<T> reshape(Var<T> a, Shape shape) {
    Tensor<T> out = a.value().reshaped(std::move(shape));
    return a.graph().record(std::move(out), {a}, [a](Graph<T>& g, const Tensor<T>& go) {
        if (auto* ga = g.grad_of(a)) accumulate(*ga, go);
    });
}

// ---------------------------------------------------------------------------
// structural

template <typename T>
Var<T> slice_rows(Var<T> a, std::size_t begin, std::size_t end) {
    require_rank2(a, "slice_rows");
    Tensor<T> out = rows_slice(a.value(), begin, end);
    const std::size_t c = a.cols();
    return a.graph().record(std::move(out), {a}, [a, begin, c](Graph<T>& g, const Tensor<T>& go) {
        Tensor<T>* ga = g.grad_of(a);
        if (!ga) return;
        T* d = ga->ptr() + begin * c;
        for (std::size_t i = 0; i < go.numel(); ++i) d[i] += go[i];
    });
}

template <typename T>
Var<T> slice_cols(Var<T> a, std::size_t begin, std::size_t end) {
    require_rank2(a, "slice_cols");
    const std::size_t r = a.rows(), c = a.cols();
    if (begin >= end || end > c) {
        throw DimensionError("slice_cols: invalid range [" + std::to_string(begin) + "," + std::to_string(end) +
                             ") of " + shape_str(a.shape()));
    }
    const std::size_t w = end - begin;
    Tensor<T> out(Shape{r, w});
    const Tensor<T>& x = a.value();
    for (std::size_t i = 0; i < r; ++i) std::copy_n(x.ptr() + i * c + begin, w, out.ptr() + i * w);
    return a.graph().record(std::move(out), {a}, [a, r, c, w, begin](Graph<T>& g, const Tensor<T>& go) {
        Tensor<T>* ga = g.grad_of(a);
        if (!ga) return;
        for (std::size_t i = 0; i < r; ++i) {
            T* d = ga->ptr() + i * c + begin;
            const T* s = go.ptr() + i * w;
            for (std::size_t j = 0; j < w; ++j) d[j] += s[j];
        }
    });
}

template <typename T>
Var<T> concat_rows(std::span<const Var<T>> parts) {
    if (parts.empty()) throw DimensionError("concat_rows: no inputs");
    std::vector<const Tensor<T>*> vals;
    for (const auto& p : parts) {
        require_rank2(p, "concat_rows");
        vals.push_back(&p.value());
    }
    Tensor<T> out = rows_concat(vals);
    std::vector<Var<T>> ins(parts.begin(), parts.end());
    return parts.front().graph().record(std::move(out), parts, [ins](Graph<T>& g, const Tensor<T>& go) {
        std::size_t offset = 0;
        for (const auto& p : ins) {
            const std::size_t n = g.value(p).numel();
            if (auto* gp = g.grad_of(p)) {
                for (std::size_t i = 0; i < n; ++i) (*gp)[i] += go[offset + i];
            }
            offset += n;
        }
    });
}

template <typename T>
Var<T> concat_cols(std::span<const Var<T>> parts) {
    if (parts.empty()) throw DimensionError("concat_cols: no inputs");
    const std::size_t r = parts.front().rows();
    std::size_t total = 0;
    for (const auto& p : parts) {
        require_rank2(p, "concat_cols");
        if (p.rows() != r) {
            throw DimensionError("concat_cols: row mismatch " + shape_str(parts.front().shape()) + " vs " +
                                 shape_str(p.shape()));
        }
        total += p.cols();
    }
    Tensor<T> out(Shape{r, total});
    std::size_t off = 0;
    for (const auto& p : parts) {
        const std::size_t w = p.cols();
        const Tensor<T>& x = p.value();
        for (std::size_t i = 0; i < r; ++i) std::copy_n(x.ptr() + i * w, w, out.ptr() + i * total + off);
        off += w;
    }
    std::vector<Var<T>> ins(parts.begin(), parts.end());
    return parts.front().graph().record(std::move(out), parts, [ins, r, total](Graph<T>& g, const Tensor<T>& go) {
        std::size_t o = 0;
        for (const auto& p : ins) {
            const std::size_t w = g.value(p).cols();
            if (auto* gp = g.grad_of(p)) {
                for (std::size_t i = 0; i < r; ++i) {
                    const T* s = go.ptr() + i * total + o;
                    T* d = gp->ptr() + i * w;
                    for (std::size_t j = 0; j < w; ++j) d[j] += s[j];
                }
            }
            o += w;
        }
    });
}

template <typename T>
Var<T> pad_rows(Var<T> a, std::size_t before, std::size_t after) {
    require_rank2(a, "pad_rows");
    const std::size_t r = a.rows(), c = a.cols();
    Tensor<T> out(Shape{before + r + after, c});
    std::copy(a.value().data().begin(), a.value().data().end(), out.ptr() + before * c);
    return a.graph().record(std::move(out), {a}, [a, before, r, c](Graph<T>& g, const Tensor<T>& go) {
        Tensor<T>* ga = g.grad_of(a);
        if (!ga) return;
        const T* s = go.ptr() + before * c;
        for (std::size_t i = 0; i < r * c; ++i) (*ga)[i] += s[i];
    });
}

template <typename T>
Var<T> repeat_rows(Var<T> a, std::size_t n) {
    const std::size_t c = a.cols();
    if (a.value().numel() != c) throw DimensionError("repeat_rows: expected a single row, got " + shape_str(a.shape()));
    if (n == 0) throw DimensionError("repeat_rows: count must be positive");
    Tensor<T> out(Shape{n, c});
    for (std::size_t i = 0; i < n; ++i) std::copy_n(a.value().ptr(), c, out.ptr() + i * c);
    return a.graph().record(std::move(out), {a}, [a, c](Graph<T>& g, const Tensor<T>& go) {
        if (auto* ga = g.grad_of(a)) accumulate_reduced(*ga, go, c);
    });
}

template <typename T>
Var<T> row_scale(Var<T> a, std::span<const T> weights) {
    require_rank2(a, "row_scale");
    const std::size_t r = a.rows(), c = a.cols();
    if (weights.size() != r) {
        throw DimensionError("row_scale: " + std::to_string(weights.size()) + " weights for " + shape_str(a.shape()));
    }
    std::vector<T> w(weights.begin(), weights.end());
    Tensor<T> out(a.shape());
    const Tensor<T>& x = a.value();
    for (std::size_t i = 0; i < r; ++i) {
        for (std::size_t j = 0; j < c; ++j) out[i * c + j] = w[i] * x[i * c + j];
    }
    return a.graph().record(std::move(out), {a}, [a, r, c, w = std::move(w)](Graph<T>& g, const Tensor<T>& go) {
        Tensor<T>* ga = g.grad_of(a);
        if (!ga) return;
        for (std::size_t i = 0; i < r; ++i) {
            for (std::size_t j = 0; j < c; ++j) (*ga)[i * c + j] += w[i] * go[i * c + j];
        }
    });
}

template <typename T>
Var<T> embedding(Var<T> table, std::span<const int> ids) {
    require_rank2(table, "embedding");
    const std::size_t v = table.rows(), d = table.cols();
    if (ids.empty()) throw DimensionError("embedding: empty id sequence");
    for (int id : ids) {
        if (id < 0 || static_cast<std::size_t>(id) >= v) {
            throw InputError("embedding: id " + std::to_string(id) + " outside table of " + std::to_string(v) + " rows");
        }
    }
    std::vector<int> idv(ids.begin(), ids.end());
    Tensor<T> out(Shape{idv.size(), d});
    for (std::size_t i = 0; i < idv.size(); ++i) {
        std::copy_n(table.value().ptr() + static_cast<std::size_t>(idv[i]) * d, d, out.ptr() + i * d);
    }
    return table.graph().record(std::move(out), {table}, [table, d, idv = std::move(idv)](Graph<T>& g, const Tensor<T>& go) {
        Tensor<T>* gt = g.grad_of(table);
        if (!gt) return;
        for (std::size_t i = 0; i < idv.size(); ++i) {
            T* dst = gt->ptr() + static_cast<std::size_t>(idv[i]) * d;
            const T* src = go.ptr() + i * d;
            for (std::size_t j = 0; j < d; ++j) dst[j] += src[j];
        }
    });
}

// ---------------------------------------------------------------------------
// convolutions

template <typename T>
Var<T> conv1d(Var<T> x, Var<T> w, Var<T> bias, std::size_t stride, std::size_t padding) {
    require_rank2(x, "conv1d");
    if (w.value().rank() != 3 || w.value().dim(1) != x.cols()) {
        throw DimensionError("conv1d: kernel " + shape_str(w.shape()) + " incompatible with input " +
                             shape_str(x.shape()));
    }
    if (stride == 0) throw DimensionError("conv1d: stride must be positive");
    const std::size_t len = x.rows(), cin = x.cols(), k = w.value().dim(0), cout = w.value().dim(2);
    const long span = static_cast<long>(len + 2 * padding) - static_cast<long>(k);
    if (span < 0) throw DimensionError("conv1d: output length < 1 for input " + shape_str(x.shape()));
    const std::size_t out_len = static_cast<std::size_t>(span) / stride + 1;
    if (bias.valid() && bias.value().numel() != cout) throw DimensionError("conv1d: bias size mismatch");

    // im2col: [out_len x (k * cin)]
    Tensor<T> cols(Shape{out_len, k * cin});
    const Tensor<T>& xv = x.value();
    for (std::size_t t = 0; t < out_len; ++t) {
        for (std::size_t j = 0; j < k; ++j) {
            const long src = static_cast<long>(t * stride + j) - static_cast<long>(padding);
            if (src < 0 || src >= static_cast<long>(len)) continue;
            std::copy_n(xv.ptr() + static_cast<std::size_t>(src) * cin, cin, cols.ptr() + t * k * cin + j * cin);
        }
    }
    Tensor<T> out(Shape{out_len, cout});
    mmap(out, out_len, cout).noalias() = cmap(cols, out_len, k * cin) * cmap(w.value(), k * cin, cout);
    if (bias.valid()) {
        for (std::size_t t = 0; t < out_len; ++t) {
            for (std::size_t o = 0; o < cout; ++o) out[t * cout + o] += bias.value()[o];
        }
    }
    std::vector<Var<T>> ins{x, w};
    if (bias.valid()) ins.push_back(bias);
    return x.graph().record(
        std::move(out), std::span<const Var<T>>(ins),
        [x, w, bias, len, cin, k, cout, out_len, stride, padding, cols = std::move(cols)](Graph<T>& g,
                                                                                          const Tensor<T>& go) {
            auto gmap = cmap(go, out_len, cout);
            if (auto* gw = g.grad_of(w)) mmap(*gw, k * cin, cout).noalias() += cmap(cols, out_len, k * cin).transpose() * gmap;
            if (bias.valid()) {
                if (auto* gb = g.grad_of(bias)) accumulate_reduced(*gb, go, cout);
            }
            if (auto* gx = g.grad_of(x)) {
                Tensor<T> dcols(Shape{out_len, k * cin});
                mmap(dcols, out_len, k * cin).noalias() = gmap * cmap(g.value(w), k * cin, cout).transpose();
                for (std::size_t t = 0; t < out_len; ++t) {
                    for (std::size_t j = 0; j < k; ++j) {
                        const long src = static_cast<long>(t * stride + j) - static_cast<long>(padding);
                        if (src < 0 || src >= static_cast<long>(len)) continue;
                        T* d = gx->ptr() + static_cast<std::size_t>(src) * cin;
                        const T* s = dcols.ptr() + t * k * cin + j * cin;
                        for (std::size_t c = 0; c < cin; ++c) d[c] += s[c];
                    }
                }
            }
        });
}

template <typename T>
Var<T> depthwise_conv1d(Var<T> x, Var<T> w, Var<T> bias, std::size_t padding) {
    require_rank2(x, "depthwise_conv1d");
    require_rank2(w, "depthwise_conv1d");
    const std::size_t len = x.rows(), c = x.cols(), k = w.rows();
    if (w.cols() != c) {
        throw DimensionError("depthwise_conv1d: kernel " + shape_str(w.shape()) + " incompatible with input " +
                             shape_str(x.shape()));
    }
    const long span = static_cast<long>(len + 2 * padding) - static_cast<long>(k);
    if (span < 0) throw DimensionError("depthwise_conv1d: output length < 1");
    const std::size_t out_len = static_cast<std::size_t>(span) + 1;
    if (bias.valid() && bias.value().numel() != c) throw DimensionError("depthwise_conv1d: bias size mismatch");
    Tensor<T> out(Shape{out_len, c});
    const Tensor<T>& xv = x.value();
    const Tensor<T>& wv = w.value();
    for (std::size_t t = 0; t < out_len; ++t) {
        T* o = out.ptr() + t * c;
        if (bias.valid()) std::copy_n(bias.value().ptr(), c, o);
        for (std::size_t j = 0; j < k; ++j) {
            const long src = static_cast<long>(t + j) - static_cast<long>(padding);
            if (src < 0 || src >= static_cast<long>(len)) continue;
            const T* xi = xv.ptr() + static_cast<std::size_t>(src) * c;
            const T* wj = wv.ptr() + j * c;
            for (std::size_t ch = 0; ch < c; ++ch) o[ch] += xi[ch] * wj[ch];
        }
    }
    std::vector<Var<T>> ins{x, w};
    if (bias.valid()) ins.push_back(bias);
    return x.graph().record(std::move(out), std::span<const Var<T>>(ins),
                            [x, w, bias, len, c, k, out_len, padding](Graph<T>& g, const Tensor<T>& go) {
                                Tensor<T>* gx = g.grad_of(x);
                                Tensor<T>* gw = g.grad_of(w);
                                const Tensor<T>& xv = g.value(x);
                                const Tensor<T>& wv = g.value(w);
                                if (bias.valid()) {
                                    if (auto* gb = g.grad_of(bias)) accumulate_reduced(*gb, go, c);
                                }
                                for (std::size_t t = 0; t < out_len; ++t) {
                                    const T* gi = go.ptr() + t * c;
                                    for (std::size_t j = 0; j < k; ++j) {
                                        const long src = static_cast<long>(t + j) - static_cast<long>(padding);
                                        if (src < 0 || src >= static_cast<long>(len)) continue;
                                        const std::size_t s = static_cast<std::size_t>(src);
                                        if (gx) {
                                            T* d = gx->ptr() + s * c;
                                            const T* wj = wv.ptr() + j * c;
                                            for (std::size_t ch = 0; ch < c; ++ch) d[ch] += gi[ch] * wj[ch];
                                        }
                                        if (gw) {
                                            T* d = gw->ptr() + j * c;
                                            const T* xi = xv.ptr() + s * c;
                                            for (std::size_t ch = 0; ch < c; ++ch) d[ch] += gi[ch] * xi[ch];
                                        }
                                    }
                                }
                            });
}

template <typename T>
Var<T> transposed_conv1d(Var<T> x, Var<T> w, Var<T> bias, std::size_t stride, std::size_t padding) {
    require_rank2(x, "transposed_conv1d");
    if (w.value().rank() != 3 || w.value().dim(1) != x.cols()) {
        throw DimensionError("transposed_conv1d: kernel " + shape_str(w.shape()) + " incompatible with input " +
                             shape_str(x.shape()));
    }
    if (stride == 0) throw DimensionError("transposed_conv1d: stride must be positive");
    const std::size_t len = x.rows(), cin = x.cols(), k = w.value().dim(0), cout = w.value().dim(2);
    const long out_long = static_cast<long>((len - 1) * stride + k) - 2 * static_cast<long>(padding);
    if (out_long < 1) throw DimensionError("transposed_conv1d: output length < 1");
    const std::size_t out_len = static_cast<std::size_t>(out_long);
    if (bias.valid() && bias.value().numel() != cout) throw DimensionError("transposed_conv1d: bias size mismatch");

    Tensor<T> out(Shape{out_len, cout});
    if (bias.valid()) {
        for (std::size_t t = 0; t < out_len; ++t) std::copy_n(bias.value().ptr(), cout, out.ptr() + t * cout);
    }
    // Per kernel tap j: Y_j = X · W_j, scattered to rows t*stride - padding + j.
    Tensor<T> yj(Shape{len, cout});
    for (std::size_t j = 0; j < k; ++j) {
        mmap(yj, len, cout).noalias() =
            cmap(x.value(), len, cin) * ConstMatMap<T>(w.value().ptr() + j * cin * cout, static_cast<Eigen::Index>(cin),
                                                        static_cast<Eigen::Index>(cout));
        for (std::size_t t = 0; t < len; ++t) {
            const long dst = static_cast<long>(t * stride + j) - static_cast<long>(padding);
            if (dst < 0 || dst >= out_long) continue;
            T* o = out.ptr() + static_cast<std::size_t>(dst) * cout;
            const T* s = yj.ptr() + t * cout;
            for (std::size_t c = 0; c < cout; ++c) o[c] += s[c];
        }
    }
    std::vector<Var<T>> ins{x, w};
    if (bias.valid()) ins.push_back(bias);
    return x.graph().record(
        std::move(out), std::span<const Var<T>>(ins),
        [x, w, bias, len, cin, k, cout, stride, padding, out_long](Graph<T>& g, const Tensor<T>& go) {
            if (bias.valid()) {
                if (auto* gb = g.grad_of(bias)) accumulate_reduced(*gb, go, cout);
            }
            Tensor<T>* gx = g.grad_of(x);
            Tensor<T>* gw = g.grad_of(w);
            if (!gx && !gw) return;
            Tensor<T> gy(Shape{len, cout});
            for (std::size_t j = 0; j < k; ++j) {
                gy.fill(T(0));
                for (std::size_t t = 0; t < len; ++t) {
                    const long dst = static_cast<long>(t * stride + j) - static_cast<long>(padding);
                    if (dst < 0 || dst >= out_long) continue;
                    std::copy_n(go.ptr() + static_cast<std::size_t>(dst) * cout, cout, gy.ptr() + t * cout);
                }
                ConstMatMap<T> wj(g.value(w).ptr() + j * cin * cout, static_cast<Eigen::Index>(cin),
                                  static_cast<Eigen::Index>(cout));
                if (gx) mmap(*gx, len, cin).noalias() += cmap(gy, len, cout) * wj.transpose();
                if (gw) {
                    MatMap<T> gwj(gw->ptr() + j * cin * cout, static_cast<Eigen::Index>(cin),
                                  static_cast<Eigen::Index>(cout));
                    gwj.noalias() += cmap(g.value(x), len, cin).transpose() * cmap(gy, len, cout);
                }
            }
        });
}

// ---------------------------------------------------------------------------
// reductions

template <typename T>
Var<T> sum(Var<T> a) {
    T s = 0;
    for (T v : a.value().data()) s += v;
    return a.graph().record(Tensor<T>::scalar(s), {a}, [a](Graph<T>& g, const Tensor<T>& go) {
        Tensor<T>* ga = g.grad_of(a);
        if (!ga) return;
        for (auto& v : ga->data()) v += go[0];
    });
}

template <typename T>
Var<T> mean(Var<T> a) {
    const T n = T(a.value().numel());
    return scale(sum(a), T(1) / n);
}

#define AVDIT_INSTANTIATE_OPS(T)                                                                   \
    template Var<T> add(Var<T>, Var<T>);                                                           \
    template Var<T> sub(Var<T>, Var<T>);                                                           \
    template Var<T> mul(Var<T>, Var<T>);                                                           \
    template Var<T> scale(Var<T>, T);                                                              \
    template Var<T> add_scalar(Var<T>, T);                                                         \
    template Var<T> exp(Var<T>);                                                                   \
    template Var<T> log(Var<T>);                                                                   \
    template Var<T> gelu(Var<T>);                                                                  \
    template Var<T> silu(Var<T>);                                                                  \
    template Var<T> sigmoid(Var<T>);                                                               \
    template Var<T> square(Var<T>);                                                                \
    template Var<T> softmax(Var<T>);                                                               \
    template Var<T> log_softmax(Var<T>);                                                           \
    template Var<T> layernorm(Var<T>, T);                                                          \
    template Var<T> matmul(Var<T>, Var<T>);                                                        \
    template Var<T> matmul_nt(Var<T>, Var<T>);                                                     \
    template Var<T> transpose(Var<T>);                                                             \
    template Var<T> reshape(Var<T>, Shape);                                                        \
    template Var<T> slice_rows(Var<T>, std::size_t, std::size_t);                                  \
    template Var<T> slice_cols(Var<T>, std::size_t, std::size_t);                                  \
    template Var<T> concat_rows(std::span<const Var<T>>);                                          \
    template Var<T> concat_cols(std::span<const Var<T>>);                                          \
    template Var<T> pad_rows(Var<T>, std::size_t, std::size_t);                                    \
    template Var<T> repeat_rows(Var<T>, std::size_t);                                              \
    template Var<T> row_scale(Var<T>, std::span<const T>);                                         \
    template Var<T> embedding(Var<T>, std::span<const int>);                                       \
    template Var<T> conv1d(Var<T>, Var<T>, Var<T>, std::size_t, std::size_t);                      \
    template Var<T> depthwise_conv1d(Var<T>, Var<T>, Var<T>, std::size_t);                         \
    template Var<T> transposed_conv1d(Var<T>, Var<T>, Var<T>, std::size_t, std::size_t);           \
    template Var<T> sum(Var<T>);                                                                   \
    template Var<T> mean(Var<T>);

AVDIT_INSTANTIATE_OPS(float)
AVDIT_INSTANTIATE_OPS(double)

}  // namespace avdit
