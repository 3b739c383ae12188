#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include "avdit/errors.hpp"

namespace avdit {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

/// Dense row-major array. Every extent is positive and
/// `numel() == data().size()` always holds.
template <typename T>
class Tensor {
   public:
    using value_type = T;

    Tensor() = default;
    explicit Tensor(Shape shape, T fill = T(0));
    Tensor(Shape shape, std::vector<T> data);

    static Tensor scalar(T value) { return Tensor(Shape{1}, std::vector<T>{value}); }
    static Tensor from_rows(const std::vector<std::vector<T>>& rows);

    const Shape& shape() const noexcept { return shape_; }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
    std::size_t numel() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    /// Leading extent; for rank-1 tensors this is 1 (a single row).
    std::size_t rows() const noexcept { return shape_.size() <= 1 ? 1 : shape_.front(); }
    /// Extent of the trailing axis.
    std::size_t cols() const noexcept { return shape_.empty() ? 0 : shape_.back(); }

    std::span<T> data() noexcept { return data_; }
    std::span<const T> data() const noexcept { return data_; }
    T* ptr() noexcept { return data_.data(); }
    const T* ptr() const noexcept { return data_.data(); }
    std::vector<T>& storage() noexcept { return data_; }
    const std::vector<T>& storage() const noexcept { return data_; }

    T& operator[](std::size_t i) { return data_[i]; }
    const T& operator[](std::size_t i) const { return data_[i]; }

    /// 2-D element access (row, col) on the [rows x cols] view.
    T& operator()(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
    const T& operator()(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }

    std::span<T> row(std::size_t r) { return std::span<T>(data_).subspan(r * cols(), cols()); }
    std::span<const T> row(std::size_t r) const {
        return std::span<const T>(data_).subspan(r * cols(), cols());
    }

    Tensor reshaped(Shape shape) const;
    void fill(T value);

    /// True when shapes and every element compare equal (bitwise for finite values).
    bool operator==(const Tensor& other) const = default;

    template <typename U>
    Tensor<U> cast() const {
        std::vector<U> out(data_.begin(), data_.end());
        return Tensor<U>(shape_, std::move(out));
    }

   private:
    Shape shape_;
    std::vector<T> data_;
};

/// Throws DimensionError unless a and b have identical shapes.
void require_same_shape(const Shape& a, const Shape& b, const char* op);

/// Contiguous rows [begin, end) of a rank-2 tensor.
template <typename T>
Tensor<T> rows_slice(const Tensor<T>& t, std::size_t begin, std::size_t end);

/// Stacks rank-2 tensors with equal column counts along the first axis.
template <typename T>
Tensor<T> rows_concat(const std::vector<const Tensor<T>*>& parts);

template <typename T>
bool all_finite(const Tensor<T>& t);

extern template class Tensor<float>;
extern template class Tensor<double>;

}  // namespace avdit
