#pragma once

#include <cmath>
#include <utility>

#include "ledit/tensor.hpp"

namespace ledit {

/// a (n x k) times b (k x m). ikj loop order so the inner loop streams
/// contiguous rows of b and out.
inline Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2) throw ShapeError("matmul: rank-2 operands required");
    const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
    if (b.rows() != k) throw ShapeError("matmul: inner dimensions disagree");
    Tensor out({n, m});
    const double* pa = a.data();
    const double* pb = b.data();
    double* po = out.data();
    for (std::size_t i = 0; i < n; ++i) {
        double* orow = po + i * m;
        for (std::size_t kk = 0; kk < k; ++kk) {
            const double av = pa[i * k + kk];
            const double* brow = pb + kk * m;
            for (std::size_t j = 0; j < m; ++j) orow[j] += av * brow[j];
        }
    }
    return out;
}

inline Tensor transpose(const Tensor& a) {
    if (a.rank() != 2) throw ShapeError("transpose: rank-2 operand required");
    const std::size_t n = a.rows(), m = a.cols();
    Tensor out({m, n});
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) out[j * n + i] = a[i * m + j];
    return out;
}

/// Row-wise softmax with max subtraction. Rows sum to 1 within 1e-12; with
/// extreme spreads the smallest entries may underflow to exactly 0.
inline Tensor softmax_rows(const Tensor& m) {
    if (m.rank() != 2) throw ShapeError("softmax_rows: rank-2 operand required");
    if (!m.all_finite()) throw InputError("softmax_rows: non-finite input");
    const std::size_t n = m.rows(), c = m.cols();
    Tensor out({n, c});
    for (std::size_t i = 0; i < n; ++i) {
        const double* row = m.data() + i * c;
        double* orow = out.data() + i * c;
        double mx = row[0];
        for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, row[j]);
        double s = 0.0;
        for (std::size_t j = 0; j < c; ++j) {
            orow[j] = std::exp(row[j] - mx);
            s += orow[j];
        }
        const double inv = 1.0 / s;
        for (std::size_t j = 0; j < c; ++j) orow[j] *= inv;
    }
    return out;
}

struct AttentionOut {
    Tensor out; // N x d'
    Tensor map; // N x M, rows sum to 1
};

/// Scaled dot-product attention: map = softmax(q k^T / sqrt(d)), out = map v.
/// q: N x d, k: M x d, v: M x d'.
inline AttentionOut attention(const Tensor& q, const Tensor& k, const Tensor& v) {
    if (q.rank() != 2 || k.rank() != 2 || v.rank() != 2)
        throw ShapeError("attention: rank-2 operands required");
    if (q.cols() != k.cols()) throw ShapeError("attention: q/k embedding dims disagree");
    if (k.rows() != v.rows()) throw ShapeError("attention: k/v row counts disagree");
    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(q.cols()));
    Tensor logits = scale(matmul(q, transpose(k)), inv_sqrt_d);
    Tensor map = softmax_rows(logits);
    Tensor out = matmul(map, v);
    return {std::move(out), std::move(map)};
}

/// Add the single row r (1 x c) to every row of a (n x c).
inline Tensor row_broadcast_add(const Tensor& a, const Tensor& r) {
    if (a.rank() != 2 || r.rank() != 2 || r.rows() != 1 || r.cols() != a.cols())
        throw ShapeError("row_broadcast_add: expected (n x c) + (1 x c)");
    Tensor out = a;
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < a.cols(); ++j) out[i * a.cols() + j] += r[j];
    return out;
}

inline Tensor tanh_elem(const Tensor& a) {
    Tensor out = a;
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = std::tanh(out[i]);
    return out;
}

/// 2x2 average pooling over an h x w grid stored as (h*w) x c rows.
inline Tensor avg_pool_2x2(const Tensor& a, std::size_t h, std::size_t w) {
    if (a.rank() != 2 || a.rows() != h * w) throw ShapeError("avg_pool_2x2: grid size mismatch");
    if (h % 2 != 0 || w % 2 != 0) throw ShapeError("avg_pool_2x2: odd grid");
    const std::size_t c = a.cols(), oh = h / 2, ow = w / 2;
    Tensor out({oh * ow, c});
    for (std::size_t y = 0; y < oh; ++y)
        for (std::size_t x = 0; x < ow; ++x) {
            double* orow = out.data() + (y * ow + x) * c;
            for (std::size_t dy = 0; dy < 2; ++dy)
                for (std::size_t dx = 0; dx < 2; ++dx) {
                    const double* row = a.data() + ((2 * y + dy) * w + (2 * x + dx)) * c;
                    for (std::size_t j = 0; j < c; ++j) orow[j] += 0.25 * row[j];
                }
        }
    return out;
}

/// Nearest-neighbour 2x upsampling of an h x w grid stored as (h*w) x c rows.
inline Tensor upsample_2x2(const Tensor& a, std::size_t h, std::size_t w) {
    if (a.rank() != 2 || a.rows() != h * w) throw ShapeError("upsample_2x2: grid size mismatch");
    const std::size_t c = a.cols(), oh = h * 2, ow = w * 2;
    Tensor out({oh * ow, c});
    for (std::size_t y = 0; y < oh; ++y)
        for (std::size_t x = 0; x < ow; ++x) {
            const double* row = a.data() + ((y / 2) * w + (x / 2)) * c;
            double* orow = out.data() + (y * ow + x) * c;
            for (std::size_t j = 0; j < c; ++j) orow[j] = row[j];
        }
    return out;
}

} // namespace ledit
