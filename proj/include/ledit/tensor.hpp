#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "ledit/error.hpp"

namespace ledit {

/// Dense multi-dimensional array of 64-bit reals, row-major.
/// The one value type shared by latents, embeddings, weights and caches.
/// Tensors are treated as immutable once handed to a pipeline; all the
/// numeric kernels return fresh tensors.
class Tensor {
  public:
    Tensor() = default;

    explicit Tensor(std::vector<std::size_t> shape)
        : shape_(std::move(shape)), data_(checked_numel(shape_), 0.0) {}

    Tensor(std::vector<std::size_t> shape, std::vector<double> data)
        : shape_(std::move(shape)), data_(std::move(data)) {
        if (data_.size() != checked_numel(shape_))
            throw ShapeError("tensor data length does not match shape");
    }

    static Tensor zeros(std::vector<std::size_t> shape) { return Tensor(std::move(shape)); }

    static Tensor full(std::vector<std::size_t> shape, double v) {
        Tensor t(std::move(shape));
        std::fill(t.data_.begin(), t.data_.end(), v);
        return t;
    }

    static Tensor scalar(double v) { return Tensor({1}, {v}); }

    const std::vector<std::size_t>& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t numel() const { return data_.size(); }
    std::size_t extent(std::size_t axis) const { return shape_.at(axis); }

    // rank-2 convenience
    std::size_t rows() const { return shape_.at(0); }
    std::size_t cols() const { return shape_.at(1); }

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }
    double& at2(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
    double at2(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

    bool all_finite() const {
        for (double v : data_)
            if (!std::isfinite(v)) return false;
        return true;
    }

    /// Reinterpret as a different shape with the same element count.
    Tensor reshaped(std::vector<std::size_t> shape) const {
        Tensor t(std::move(shape), data_);
        return t;
    }

  private:
    static std::size_t checked_numel(const std::vector<std::size_t>& shape) {
        std::size_t n = 1;
        for (std::size_t e : shape) {
            if (e == 0) throw ShapeError("tensor extents must be positive");
            n *= e;
        }
        return n;
    }

    std::vector<std::size_t> shape_;
    std::vector<double> data_;
};

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
    if (!a.same_shape(b)) throw ShapeError(std::string(what) + ": shape mismatch");
}

inline Tensor add(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "add");
    Tensor out = a;
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] += b[i];
    return out;
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "sub");
    Tensor out = a;
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] -= b[i];
    return out;
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "mul");
    Tensor out = a;
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= b[i];
    return out;
}

inline Tensor scale(const Tensor& a, double c) {
    Tensor out = a;
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= c;
    return out;
}

/// ca*a + cb*b, elementwise.
inline Tensor affine(const Tensor& a, double ca, const Tensor& b, double cb) {
    require_same_shape(a, b, "affine");
    Tensor out(a.shape());
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = ca * a[i] + cb * b[i];
    return out;
}

inline double sum(const Tensor& a) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) s += a[i];
    return s;
}

inline double squared_norm(const Tensor& a) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) s += a[i] * a[i];
    return s;
}

inline double l2_norm(const Tensor& a) { return std::sqrt(squared_norm(a)); }

inline double l2_distance(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "l2_distance");
    double s = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) {
        const double d = a[i] - b[i];
        s += d * d;
    }
    return std::sqrt(s);
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "max_abs_diff");
    double m = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::fabs(a[i] - b[i]));
    return m;
}

// ---------------------------------------------------------------------------
// TDUMP v1: the project's plain-text tensor format.
//   line 1:  TDUMP v1 <rank> <extent...>
//   then whitespace-separated decimals in row-major order, 9 significant
//   digits.
// ---------------------------------------------------------------------------

inline void tdump_write(std::ostream& os, const Tensor& t) {
    os << "TDUMP v1 " << t.rank();
    for (std::size_t a = 0; a < t.rank(); ++a) os << ' ' << t.extent(a);
    os << '\n';
    char buf[40];
    for (std::size_t i = 0; i < t.numel(); ++i) {
        std::snprintf(buf, sizeof(buf), "%.9g", t[i]);
        os << buf << (((i + 1) % 8 == 0) ? '\n' : ' ');
    }
    if (t.numel() % 8 != 0) os << '\n';
}

inline void tdump_save(const std::string& path, const Tensor& t) {
    std::ofstream f(path);
    if (!f) throw IoError("cannot open for writing: " + path);
    tdump_write(f, t);
    if (!f) throw IoError("write failed: " + path);
}

inline Tensor tdump_read(std::istream& is) {
    std::string magic, version;
    std::size_t rank = 0;
    if (!(is >> magic >> version >> rank) || magic != "TDUMP" || version != "v1")
        throw IoError("not a TDUMP v1 stream");
    std::vector<std::size_t> shape(rank);
    for (auto& e : shape)
        if (!(is >> e)) throw IoError("TDUMP: truncated header");
    Tensor t(shape);
    for (std::size_t i = 0; i < t.numel(); ++i)
        if (!(is >> t[i])) throw IoError("TDUMP: truncated data");
    return t;
}

inline Tensor tdump_load(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open: " + path);
    return tdump_read(f);
}

} // namespace ledit
