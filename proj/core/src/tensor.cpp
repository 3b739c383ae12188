#include "avdit/tensor.hpp"

#include <cmath>
#include <sstream>

namespace avdit {

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << 'x';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

std::size_t shape_numel(const Shape& shape) {
    std::size_t n = 1;
    for (auto e : shape) n *= e;
    return n;
}

static void check_extents(const Shape& shape) {
    if (shape.empty()) throw DimensionError("tensor shape must have rank >= 1");
    for (auto e : shape) {
        if (e == 0) throw DimensionError("tensor extents must be positive, got " + shape_str(shape));
    }
}

template <typename T>
Tensor<T>::Tensor(Shape shape, T fill) : shape_(std::move(shape)) {
    check_extents(shape_);
    data_.assign(shape_numel(shape_), fill);
}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
    check_extents(shape_);
    if (shape_numel(shape_) != data_.size()) {
        throw DimensionError("data length " + std::to_string(data_.size()) + " does not match shape " +
                             shape_str(shape_));
    }
}

template <typename T>
Tensor<T> Tensor<T>::from_rows(const std::vector<std::vector<T>>& rows) {
    if (rows.empty() || rows.front().empty()) throw DimensionError("from_rows: empty input");
    const std::size_t c = rows.front().size();
    std::vector<T> data;
    data.reserve(rows.size() * c);
    for (const auto& r : rows) {
        if (r.size() != c) throw DimensionError("from_rows: ragged rows");
        data.insert(data.end(), r.begin(), r.end());
    }
    return Tensor(Shape{rows.size(), c}, std::move(data));
}

template <typename T>
Tensor<T> Tensor<T>::reshaped(Shape shape) const {
    if (shape_numel(shape) != numel()) {
        throw DimensionError("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
    }
    return Tensor(std::move(shape), data_);
}

template <typename T>
void Tensor<T>::fill(T value) {
    std::fill(data_.begin(), data_.end(), value);
}

void require_same_shape(const Shape& a, const Shape& b, const char* op) {
    if (a != b) {
        throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
    }
}

template <typename T>
Tensor<T> rows_slice(const Tensor<T>& t, std::size_t begin, std::size_t end) {
    if (t.rank() != 2 || begin >= end || end > t.rows()) {
        throw DimensionError("rows_slice: invalid range [" + std::to_string(begin) + "," + std::to_string(end) +
                             ") of " + shape_str(t.shape()));
    }
    const std::size_t c = t.cols();
    std::vector<T> out(t.data().begin() + static_cast<std::ptrdiff_t>(begin * c),
                       t.data().begin() + static_cast<std::ptrdiff_t>(end * c));
    return Tensor<T>(Shape{end - begin, c}, std::move(out));
}

template <typename T>
Tensor<T> rows_concat(const std::vector<const Tensor<T>*>& parts) {
    if (parts.empty()) throw DimensionError("rows_concat: no inputs");
    const std::size_t c = parts.front()->cols();
    std::size_t r = 0;
    for (const auto* p : parts) {
        if (p->rank() != 2 || p->cols() != c) throw DimensionError("rows_concat: column mismatch");
        r += p->rows();
    }
    std::vector<T> out;
    out.reserve(r * c);
    for (const auto* p : parts) out.insert(out.end(), p->data().begin(), p->data().end());
    return Tensor<T>(Shape{r, c}, std::move(out));
}

template <typename T>
bool all_finite(const Tensor<T>& t) {
    for (T v : t.data()) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

template class Tensor<float>;
template class Tensor<double>;
template Tensor<float> rows_slice(const Tensor<float>&, std::size_t, std::size_t);
template Tensor<double> rows_slice(const Tensor<double>&, std::size_t, std::size_t);
template Tensor<float> rows_concat(const std::vector<const Tensor<float>*>&);
template Tensor<double> rows_concat(const std::vector<const Tensor<double>*>&);
template bool all_finite(const Tensor<float>&);
template bool all_finite(const Tensor<double>&);

}  // namespace avdit
