#pragma once

#include <cmath>
#include <cstddef>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace gross {

// Dense multi-way tensor, up to 4 modes.
//
// Canonical storage order: contiguous, last mode fastest-varying (row-major).
// A shape {d0, d1, d2, d3} stores element (i0, i1, i2, i3) at flat index
// ((i0*d1 + i1)*d2 + i2)*d3 + i3. Mode indices are 0-based throughout; the
// tensor literature's mode-1..mode-N products map to modes 0..N-1 here.
template <typename T>
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(std::vector<int> shape) : shape_(std::move(shape)) {
        validate_shape();
        values_.assign(element_count(), T(0));
    }

    Tensor(std::vector<int> shape, std::vector<T> values)
        : shape_(std::move(shape)), values_(std::move(values)) {
        validate_shape();
        if (values_.size() != element_count()) {
            throw std::invalid_argument(
                "Tensor: shape requires " + std::to_string(element_count()) +
                " values, got " + std::to_string(values_.size()));
        }
    }

    int rank() const { return static_cast<int>(shape_.size()); }
    const std::vector<int>& shape() const { return shape_; }

    int extent(int mode) const {
        check_mode(mode);
        return shape_[static_cast<std::size_t>(mode)];
    }

    std::size_t size() const { return values_.size(); }
    bool empty() const { return values_.empty(); }

    T* data() { return values_.data(); }
    const T* data() const { return values_.data(); }
    std::vector<T>& values() { return values_; }
    const std::vector<T>& values() const { return values_; }

    T& operator[](std::size_t i) { return values_[i]; }
    const T& operator[](std::size_t i) const { return values_[i]; }

    T& operator()(int i0) { return values_[static_cast<std::size_t>(i0)]; }
    const T& operator()(int i0) const { return values_[static_cast<std::size_t>(i0)]; }

    T& operator()(int i0, int i1) {
        return values_[static_cast<std::size_t>(i0) * shape_[1] + i1];
    }
    const T& operator()(int i0, int i1) const {
        return values_[static_cast<std::size_t>(i0) * shape_[1] + i1];
    }

    T& operator()(int i0, int i1, int i2) {
        return values_[(static_cast<std::size_t>(i0) * shape_[1] + i1) * shape_[2] + i2];
    }
    const T& operator()(int i0, int i1, int i2) const {
        return values_[(static_cast<std::size_t>(i0) * shape_[1] + i1) * shape_[2] + i2];
    }

    T& operator()(int i0, int i1, int i2, int i3) {
        return values_[((static_cast<std::size_t>(i0) * shape_[1] + i1) * shape_[2] + i2) *
                           shape_[3] +
                       i3];
    }
    const T& operator()(int i0, int i1, int i2, int i3) const {
        return values_[((static_cast<std::size_t>(i0) * shape_[1] + i1) * shape_[2] + i2) *
                           shape_[3] +
                       i3];
    }

    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

    // Number of elements in modes before `mode` (the slowest block count).
    std::size_t outer_size(int mode) const {
        check_mode(mode);
        std::size_t n = 1;
        for (int k = 0; k < mode; ++k) n *= static_cast<std::size_t>(shape_[k]);
        return n;
    }

    // Number of elements in modes after `mode` (the contiguous stride of that mode).
    std::size_t inner_size(int mode) const {
        check_mode(mode);
        std::size_t n = 1;
        for (int k = mode + 1; k < rank(); ++k) n *= static_cast<std::size_t>(shape_[k]);
        return n;
    }

private:
    void validate_shape() const {
        if (shape_.empty() || shape_.size() > 4) {
            throw std::invalid_argument("Tensor: rank must be 1..4, got " +
                                        std::to_string(shape_.size()));
        }
        for (std::size_t k = 0; k < shape_.size(); ++k) {
            if (shape_[k] < 1) {
                throw std::invalid_argument("Tensor: extent of mode " + std::to_string(k) +
                                            " must be positive, got " +
                                            std::to_string(shape_[k]));
            }
        }
    }

    std::size_t element_count() const {
        std::size_t n = 1;
        for (int d : shape_) n *= static_cast<std::size_t>(d);
        return n;
    }

    void check_mode(int mode) const {
        if (mode < 0 || mode >= rank()) {
            throw std::invalid_argument("Tensor: invalid mode " + std::to_string(mode) +
                                        " for rank " + std::to_string(rank()));
        }
    }

    std::vector<int> shape_;
    std::vector<T> values_;
};

using DTensor = Tensor<double>;

template <typename T>
bool all_finite(const Tensor<T>& t) {
    for (std::size_t i = 0; i < t.size(); ++i) {
        if (!std::isfinite(static_cast<double>(t[i]))) return false;
    }
    return true;
}

// Mode-n product T x_n M. M is d_n x d'_n where d'_n is T's current extent of
// `mode`; the result replaces that extent with d_n. Entries are contractions
// of T's mode-n fibers with M's rows.
template <typename T>
Tensor<T> mode_n_product(const Tensor<T>& t, const Tensor<T>& m, int mode) {
    if (m.rank() != 2) {
        throw std::invalid_argument("mode_n_product: factor must be a matrix (rank 2), got rank " +
                                    std::to_string(m.rank()));
    }
    if (mode < 0 || mode >= t.rank()) {
        throw std::invalid_argument("mode_n_product: invalid mode " + std::to_string(mode) +
                                    " for rank " + std::to_string(t.rank()));
    }
    const int d_old = t.extent(mode);
    const int d_new = m.extent(0);
    if (m.extent(1) != d_old) {
        throw std::invalid_argument("mode_n_product: mode " + std::to_string(mode) + " extent " +
                                    std::to_string(d_old) + " does not match factor columns " +
                                    std::to_string(m.extent(1)));
    }

    std::vector<int> out_shape = t.shape();
    out_shape[static_cast<std::size_t>(mode)] = d_new;
    Tensor<T> out(out_shape);

    const std::size_t outer = t.outer_size(mode);
    const std::size_t inner = t.inner_size(mode);
    const T* src = t.data();
    T* dst = out.data();
    for (std::size_t o = 0; o < outer; ++o) {
        for (int a = 0; a < d_new; ++a) {
            T* dst_fiber = dst + (o * d_new + a) * inner;
            for (int k = 0; k < d_old; ++k) {
                const T w = m(a, k);
                const T* src_fiber = src + (o * d_old + k) * inner;
                for (std::size_t i = 0; i < inner; ++i) dst_fiber[i] += w * src_fiber[i];
            }
        }
    }
    if (!all_finite(out)) {
        throw std::runtime_error("mode_n_product: non-finite values in result (mode " +
                                 std::to_string(mode) + ")");
    }
    return out;
}

// Mode-n unfolding: a d_n x (product of remaining extents) matrix. Columns
// enumerate the remaining modes in their original order, last fastest, so
// fold(unfold(T, n), shape(T), n) is an exact round trip.
template <typename T>
Tensor<T> unfold(const Tensor<T>& t, int mode) {
    if (mode < 0 || mode >= t.rank()) {
        throw std::invalid_argument("unfold: invalid mode " + std::to_string(mode) +
                                    " for rank " + std::to_string(t.rank()));
    }
    const int d = t.extent(mode);
    const std::size_t outer = t.outer_size(mode);
    const std::size_t inner = t.inner_size(mode);
    Tensor<T> m({d, static_cast<int>(outer * inner)});
    const T* src = t.data();
    T* dst = m.data();
    for (std::size_t o = 0; o < outer; ++o) {
        for (int i = 0; i < d; ++i) {
            const T* row = src + (o * d + i) * inner;
            T* col = dst + static_cast<std::size_t>(i) * (outer * inner) + o * inner;
            for (std::size_t k = 0; k < inner; ++k) col[k] = row[k];
        }
    }
    return m;
}

template <typename T>
Tensor<T> fold(const Tensor<T>& m, const std::vector<int>& shape, int mode) {
    if (m.rank() != 2) {
        throw std::invalid_argument("fold: input must be a matrix (rank 2)");
    }
    Tensor<T> t(shape);
    if (mode < 0 || mode >= t.rank()) {
        throw std::invalid_argument("fold: invalid mode " + std::to_string(mode) + " for rank " +
                                    std::to_string(t.rank()));
    }
    const int d = t.extent(mode);
    const std::size_t outer = t.outer_size(mode);
    const std::size_t inner = t.inner_size(mode);
    if (m.extent(0) != d || static_cast<std::size_t>(m.extent(1)) != outer * inner) {
        throw std::invalid_argument("fold: matrix " + std::to_string(m.extent(0)) + "x" +
                                    std::to_string(m.extent(1)) + " does not match shape on mode " +
                                    std::to_string(mode));
    }
    const T* src = m.data();
    T* dst = t.data();
    for (std::size_t o = 0; o < outer; ++o) {
        for (int i = 0; i < d; ++i) {
            const T* col = src + static_cast<std::size_t>(i) * (outer * inner) + o * inner;
            T* row = dst + (o * d + i) * inner;
            for (std::size_t k = 0; k < inner; ++k) row[k] = col[k];
        }
    }
    return t;
}

template <typename T>
double frobenius_norm(const Tensor<T>& t) {
    double sum = 0.0;
    for (std::size_t i = 0; i < t.size(); ++i) {
        const double v = static_cast<double>(t[i]);
        sum += v * v;
    }
    return std::sqrt(sum);
}

// ||X - Xhat||_F / ||X||_F
template <typename T>
double relative_approx_error(const Tensor<T>& x, const Tensor<T>& xhat) {
    if (!x.same_shape(xhat)) {
        throw std::invalid_argument("relative_approx_error: shape mismatch");
    }
    const double nx = frobenius_norm(x);
    if (nx == 0.0) {
        throw std::domain_error("relative_approx_error: reference tensor has zero norm");
    }
    double sum = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double d = static_cast<double>(x[i]) - static_cast<double>(xhat[i]);
        sum += d * d;
    }
    return std::sqrt(sum) / nx;
}

}  // namespace gross
