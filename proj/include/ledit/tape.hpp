#pragma once

#include <functional>
#include <utility>
#include <vector>

#include "ledit/ops.hpp"
#include "ledit/tensor.hpp"

namespace ledit {

/// Handle into a GradientTape. Values are computed eagerly; the tape keeps
/// enough state to replay the graph backwards.
struct Var {
    int id = -1;
    bool valid() const { return id >= 0; }
};

/// Reverse-mode tape over Tensor operations.
///
/// Usage: wrap inputs with input()/constant(), build the computation with the
/// member ops, then backward() on a scalar output. Gradients are accumulated
/// only along paths that reach a flagged input, so recording a pure inference
/// pass costs little beyond the forward arithmetic.
///
/// A tape is confined to one execution context; it is not shared across
/// threads.
class GradientTape {
  public:
    Var input(Tensor value, bool differentiable) {
        nodes_.push_back(Node{std::move(value), Tensor(), differentiable, nullptr});
        if (differentiable) flagged_.push_back(static_cast<int>(nodes_.size()) - 1);
        return Var{static_cast<int>(nodes_.size()) - 1};
    }

    Var constant(Tensor value) { return input(std::move(value), false); }

    const Tensor& value(Var v) const { return nodes_.at(v.id).value; }

    std::size_t size() const { return nodes_.size(); }

    // ---- recorded operations -------------------------------------------

    Var add(Var a, Var b) {
        Tensor out = ledit::add(value(a), value(b));
        return record(std::move(out), needs(a) || needs(b), [this, a, b](const Tensor& g) {
            accumulate(a, g);
            accumulate(b, g);
        });
    }

    Var sub(Var a, Var b) {
        Tensor out = ledit::sub(value(a), value(b));
        return record(std::move(out), needs(a) || needs(b), [this, a, b](const Tensor& g) {
            accumulate(a, g);
            accumulate(b, ledit::scale(g, -1.0));
        });
    }

    Var mul(Var a, Var b) {
        Tensor out = ledit::mul(value(a), value(b));
        return record(std::move(out), needs(a) || needs(b), [this, a, b](const Tensor& g) {
            accumulate(a, ledit::mul(g, value(b)));
            accumulate(b, ledit::mul(g, value(a)));
        });
    }

    Var scale(Var a, double c) {
        Tensor out = ledit::scale(value(a), c);
        return record(std::move(out), needs(a),
                      [this, a, c](const Tensor& g) { accumulate(a, ledit::scale(g, c)); });
    }

    /// ca*a + cb*b with constant coefficients.
    Var affine(Var a, double ca, Var b, double cb) {
        Tensor out = ledit::affine(value(a), ca, value(b), cb);
        return record(std::move(out), needs(a) || needs(b), [this, a, ca, b, cb](const Tensor& g) {
            accumulate(a, ledit::scale(g, ca));
            accumulate(b, ledit::scale(g, cb));
        });
    }

    Var matmul(Var a, Var b) {
        Tensor out = ledit::matmul(value(a), value(b));
        return record(std::move(out), needs(a) || needs(b), [this, a, b](const Tensor& g) {
            if (needs(a)) accumulate(a, ledit::matmul(g, ledit::transpose(value(b))));
            if (needs(b)) accumulate(b, ledit::matmul(ledit::transpose(value(a)), g));
        });
    }

    Var transpose(Var a) {
        Tensor out = ledit::transpose(value(a));
        return record(std::move(out), needs(a),
                      [this, a](const Tensor& g) { accumulate(a, ledit::transpose(g)); });
    }

    Var softmax_rows(Var a) {
        Tensor out = ledit::softmax_rows(value(a));
        Var r = record(Tensor(out), needs(a), nullptr);
        if (needs(a)) nodes_[r.id].backward = [this, a, r](const Tensor& g) {
            // dz_ij = p_ij * (g_ij - sum_k g_ik p_ik)
            const Tensor& p = value(r);
            Tensor dz(p.shape());
            const std::size_t n = p.rows(), c = p.cols();
            for (std::size_t i = 0; i < n; ++i) {
                double dot = 0.0;
                for (std::size_t j = 0; j < c; ++j) dot += g[i * c + j] * p[i * c + j];
                for (std::size_t j = 0; j < c; ++j)
                    dz[i * c + j] = p[i * c + j] * (g[i * c + j] - dot);
            }
            accumulate(a, dz);
        };
        return r;
    }

    Var tanh(Var a) {
        Tensor out = tanh_elem(value(a));
        Var r = record(Tensor(out), needs(a), nullptr);
        if (needs(a)) nodes_[r.id].backward = [this, a, r](const Tensor& g) {
            const Tensor& y = value(r);
            Tensor dz(y.shape());
            for (std::size_t i = 0; i < y.numel(); ++i) dz[i] = g[i] * (1.0 - y[i] * y[i]);
            accumulate(a, dz);
        };
        return r;
    }

    Var sum(Var a) {
        Tensor out = Tensor::scalar(ledit::sum(value(a)));
        return record(std::move(out), needs(a), [this, a](const Tensor& g) {
            accumulate(a, Tensor::full(value(a).shape(), g[0]));
        });
    }

    /// (n x c) + broadcast row (1 x c).
    Var row_broadcast_add(Var a, Var r) {
        Tensor out = ledit::row_broadcast_add(value(a), value(r));
        return record(std::move(out), needs(a) || needs(r), [this, a, r](const Tensor& g) {
            accumulate(a, g);
            if (needs(r)) {
                const std::size_t n = g.rows(), c = g.cols();
                Tensor col({1, c});
                for (std::size_t i = 0; i < n; ++i)
                    for (std::size_t j = 0; j < c; ++j) col[j] += g[i * c + j];
                accumulate(r, col);
            }
        });
    }

    /// Extract row idx of a rank-2 table as a 1 x c tensor.
    Var select_row(Var table, std::size_t idx) {
        const Tensor& t = value(table);
        if (t.rank() != 2 || idx >= t.rows()) throw ShapeError("select_row: bad index");
        const std::size_t c = t.cols();
        Tensor out({1, c});
        for (std::size_t j = 0; j < c; ++j) out[j] = t[idx * c + j];
        return record(std::move(out), needs(table), [this, table, idx, c](const Tensor& g) {
            const Tensor& t2 = value(table);
            Tensor dz(t2.shape());
            for (std::size_t j = 0; j < c; ++j) dz[idx * c + j] = g[j];
            accumulate(table, dz);
        });
    }

    Var avg_pool_2x2(Var a, std::size_t h, std::size_t w) {
        Tensor out = ledit::avg_pool_2x2(value(a), h, w);
        return record(std::move(out), needs(a), [this, a, h, w](const Tensor& g) {
            const std::size_t c = g.cols(), ow = w / 2;
            Tensor dz({h * w, c});
            for (std::size_t y = 0; y < h; ++y)
                for (std::size_t x = 0; x < w; ++x) {
                    const double* grow = g.data() + ((y / 2) * ow + (x / 2)) * c;
                    double* drow = dz.data() + (y * w + x) * c;
                    for (std::size_t j = 0; j < c; ++j) drow[j] = 0.25 * grow[j];
                }
            accumulate(a, dz);
        });
    }

    Var upsample_2x2(Var a, std::size_t h, std::size_t w) {
        Tensor out = ledit::upsample_2x2(value(a), h, w);
        return record(std::move(out), needs(a), [this, a, h, w](const Tensor& g) {
            const std::size_t c = g.cols(), ow = w * 2;
            Tensor dz({h * w, c});
            for (std::size_t y = 0; y < 2 * h; ++y)
                for (std::size_t x = 0; x < 2 * w; ++x) {
                    const double* grow = g.data() + (y * ow + x) * c;
                    double* drow = dz.data() + ((y / 2) * w + (x / 2)) * c;
                    for (std::size_t j = 0; j < c; ++j) drow[j] += grow[j];
                }
            accumulate(a, dz);
        });
    }

    /// map = softmax(q k^T / sqrt(d)); out = map v. Composed from recorded
    /// primitives so the backward pass needs no dedicated rule.
    std::pair<Var, Var> attention(Var q, Var k, Var v) {
        const Tensor& qv = value(q);
        const Tensor& kv = value(k);
        if (qv.rank() != 2 || kv.rank() != 2) throw ShapeError("attention: rank-2 operands required");
        if (qv.cols() != kv.cols()) throw ShapeError("attention: q/k embedding dims disagree");
        const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(qv.cols()));
        Var logits = scale(matmul(q, transpose(k)), inv_sqrt_d);
        Var map = softmax_rows(logits);
        Var out = matmul(map, v);
        return {out, map};
    }

    // ---- reverse pass ---------------------------------------------------

    /// Seed d(out)/d(out) = 1 and replay the tape backwards. The output must
    /// be scalar (one element).
    void backward(Var out) {
        if (value(out).numel() != 1) throw ContractError("backward: output is not scalar");
        for (auto& n : nodes_) n.grad = Tensor();
        nodes_[out.id].grad = Tensor::full(value(out).shape(), 1.0);
        for (int i = out.id; i >= 0; --i) {
            Node& n = nodes_[i];
            if (n.backward && n.grad.numel() > 0) n.backward(n.grad);
        }
    }

    /// Gradient w.r.t. a flagged input (zeros if the output never touched it).
    Tensor grad(Var v) const {
        const Node& n = nodes_.at(v.id);
        if (!n.needs_grad) throw ContractError("grad: input was not flagged differentiable");
        if (n.grad.numel() == 0) return Tensor(n.value.shape());
        return n.grad;
    }

    /// Gradients for every flagged input, in flagging order.
    std::vector<Tensor> gradients() const {
        std::vector<Tensor> out;
        out.reserve(flagged_.size());
        for (int id : flagged_) out.push_back(grad(Var{id}));
        return out;
    }

  private:
    struct Node {
        Tensor value;
        Tensor grad; // empty until backward touches it
        bool needs_grad = false;
        std::function<void(const Tensor&)> backward;
    };

    bool needs(Var v) const { return nodes_.at(v.id).needs_grad; }

    Var record(Tensor value, bool needs_grad, std::function<void(const Tensor&)> back) {
        nodes_.push_back(Node{std::move(value), Tensor(), needs_grad,
                              needs_grad ? std::move(back) : nullptr});
        return Var{static_cast<int>(nodes_.size()) - 1};
    }

    void accumulate(Var v, const Tensor& g) {
        Node& n = nodes_[v.id];
        if (!n.needs_grad) return;
        if (n.grad.numel() == 0)
            n.grad = g;
        else
            n.grad = ledit::add(n.grad, g);
    }

    std::vector<Node> nodes_;
    std::vector<int> flagged_;
};

/// Run the reverse pass and collect one gradient per flagged input.
inline std::vector<Tensor> grad(GradientTape& tape, Var scalar_out) {
    tape.backward(scalar_out);
    return tape.gradients();
}

} // namespace ledit
