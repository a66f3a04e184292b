#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <tuple>
#include <utility>
#include <vector>

#include "posebridge/common.hpp"
#include "posebridge/tensor.hpp"

namespace posebridge {

// Reverse-mode tape over a fixed primitive set. Construction order is a
// topological order, so backward() is a single reverse sweep. Node values are
// immutable once produced.
struct Var {
    int id = -1;
    bool valid() const { return id >= 0; }
};

class Tape {
public:
    struct Node {
        Tensor value;
        Tensor grad;              // allocated lazily
        bool grad_ready = false;
        std::function<void(Tape&)> backward;
    };

    explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}

    bool grad_enabled() const { return grad_enabled_; }

    Var emplace(Tensor value) {
        value.check_finite("tape primitive output");
        Node n;
        n.value = std::move(value);
        nodes_.push_back(std::move(n));
        return Var{static_cast<int>(nodes_.size()) - 1};
    }

    void set_backward(Var v, std::function<void(Tape&)> bw) {
        if (grad_enabled_) nodes_[v.id].backward = std::move(bw);
    }

    Var leaf(const Tensor& value) { return emplace(value); }
    Var leaf_scalar(double v) { return emplace(Tensor({1}, {v})); }

    const Tensor& value(Var v) const { return nodes_.at(v.id).value; }

    double scalar(Var v) const {
        const Tensor& t = value(v);
        require(t.numel() == 1, "expected scalar node");
        return t.data[0];
    }

    // Gradient from the last backward(); zeros if the node did not
    // participate.
    Tensor grad(Var v) const {
        const Node& n = nodes_.at(v.id);
        if (n.grad_ready) return n.grad;
        return Tensor::zeros(n.value.shape);
    }

    bool has_grad(Var v) const { return nodes_.at(v.id).grad_ready; }

    Tensor& grad_acc(Var v) {
        Node& n = nodes_[v.id];
        if (!n.grad_ready) {
            n.grad = Tensor::zeros(n.value.shape);
            n.grad_ready = true;
        }
        return n.grad;
    }

    void backward(Var loss) {
        require(grad_enabled_, "backward on a no-grad tape");
        require(value(loss).numel() == 1, "backward target must be scalar");
        for (Node& n : nodes_) n.grad_ready = false;
        grad_acc(loss).data[0] = 1.0;
        for (int i = loss.id; i >= 0; --i) {
            Node& n = nodes_[i];
            if (n.grad_ready && n.backward) n.backward(*this);
        }
    }

    size_t size() const { return nodes_.size(); }

    // Drop nodes recorded after a watermark, e.g. to reuse one tape across
    // mini-batches. Vars taken before the mark stay valid.
    void truncate(size_t mark) { nodes_.resize(mark); }

private:
    bool grad_enabled_;
    std::vector<Node> nodes_;
};

// ---------------------------------------------------------------------------
// Primitives. Each computes forward, then records a closure capturing the
// operand ids and the output id.
// ---------------------------------------------------------------------------
namespace ops {

inline void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (!a.same_shape(b))
        fail(std::string(op) + ": shape mismatch " + a.shape_str() + " vs " +
             b.shape_str());
}

inline Var add(Tape& t, Var a, Var b) {
    const Tensor &va = t.value(a), &vb = t.value(b);
    check_same_shape(va, vb, "add");
    Tensor out = va;
    for (size_t i = 0; i < out.numel(); ++i) out.data[i] += vb.data[i];
    Var o = t.emplace(std::move(out));
    t.set_backward(o, [a, b, o](Tape& tp) {
        const Tensor& g = tp.grad(o);
        Tensor &ga = tp.grad_acc(a), &gb = tp.grad_acc(b);
        for (size_t i = 0; i < g.numel(); ++i) {
            ga.data[i] += g.data[i];
            gb.data[i] += g.data[i];
        }
    });
    return o;
}

inline Var sub(Tape& t, Var a, Var b) {
    const Tensor &va = t.value(a), &vb = t.value(b);
    check_same_shape(va, vb, "sub");
    Tensor out = va;
    for (size_t i = 0; i < out.numel(); ++i) out.data[i] -= vb.data[i];
    Var o = t.emplace(std::move(out));
    t.set_backward(o, [a, b, o](Tape& tp) {
        const Tensor& g = tp.grad(o);
        Tensor &ga = tp.grad_acc(a), &gb = tp.grad_acc(b);
        for (size_t i = 0; i < g.numel(); ++i) {
            ga.data[i] += g.data[i];
            gb.data[i] -= g.data[i];
        }
    });
    return o;
}

inline Var mul(Tape& t, Var a, Var b) {
    const Tensor &va = t.value(a), &vb = t.value(b);
    check_same_shape(va, vb, "mul");
    Tensor out = va;
    for (size_t i = 0; i < out.numel(); ++i) out.data[i] *= vb.data[i];
    Var o = t.emplace(std::move(out));
    t.set_backward(o, [a, b, o](Tape& tp) {
        const Tensor& g = tp.grad(o);
        const Tensor &va2 = tp.value(a), &vb2 = tp.value(b);
        Tensor &ga = tp.grad_acc(a), &gb = tp.grad_acc(b);
        for (size_t i = 0; i < g.numel(); ++i) {
            ga.data[i] += g.data[i] * vb2.data[i];
            gb.data[i] += g.data[i] * va2.data[i];
        }
    });
    return o;
}

inline Var scale(Tape& t, Var a, double c) {
    Tensor out = t.value(a);
    for (double& v : out.data) v *= c;
    Var o = t.emplace(std::move(out));
    t.set_backward(o, [a, c, o](Tape& tp) {
        const Tensor& g = tp.grad(o);
        Tensor& ga = tp.grad_acc(a);
        for (size_t i = 0; i < g.numel(); ++i) ga.data[i] += c * g.data[i];
    });
    return o;
}

inline Var reshape(Tape& t, Var a, std::vector<size_t> shape) {
    const Tensor& va = t.value(a);
    require(Tensor::numel_of(shape) == va.numel(), "reshape: numel mismatch");
    Tensor out(std::move(shape), va.data);
    Var o = t.emplace(std::move(out));
    t.set_backward(o, [a, o](Tape& tp) {
        const Tensor& g = tp.grad(o);
        Tensor& ga = tp.grad_acc(a);
        for (size_t i = 0; i < g.numel(); ++i) ga.data[i] += g.data[i];
    });
    return o;
}

// C = A (m x k) @ B (k x n)
inline Var matmul(Tape& t, Var a, Var b) {
    const Tensor &A = t.value(a), &B = t.value(b);
    require(A.rank() == 2 && B.rank() == 2 && A.shape[1] == B.shape[0],
            "matmul: incompatible shapes " + A.shape_str() + " @ " +
                B.shape_str());
    size_t m = A.shape[0], k = A.shape[1], n = B.shape[1];
    Tensor C({m, n});
    for (size_t i = 0; i < m; ++i)
        for (size_t p = 0; p < k; ++p) {
            double av = A.at2(i, p);
            if (av == 0.0) continue;
            for (size_t j = 0; j < n; ++j) C.at2(i, j) += av * B.at2(p, j);
        }
    Var o = t.emplace(std::move(C));
    t.set_backward(o, [a, b, o, m, k, n](Tape& tp) {
        const Tensor& g = tp.grad(o);
        const Tensor &A2 = tp.value(a), &B2 = tp.value(b);
        Tensor &ga = tp.grad_acc(a), &gb = tp.grad_acc(b);
        // dA = g @ B^T ; dB = A^T @ g
        for (size_t i = 0; i < m; ++i)
            for (size_t j = 0; j < n; ++j) {
                double gv = g.at2(i, j);
                if (gv == 0.0) continue;
                for (size_t p = 0; p < k; ++p) {
                    ga.at2(i, p) += gv * B2.at2(p, j);
                    gb.at2(p, j) += gv * A2.at2(i, p);
                }
            }
    });
    return o;
}

// C = A (m x k) @ B^T (n x k) -> (m x n)
inline Var matmul_nt(Tape& t, Var a, Var b) {
    const Tensor &A = t.value(a), &B = t.value(b);
    require(A.rank() == 2 && B.rank() == 2 && A.shape[1] == B.shape[1],
            "matmul_nt: incompatible shapes " + A.shape_str() + " vs " +
                B.shape_str());
    size_t m = A.shape[0], k = A.shape[1], n = B.shape[0];
    Tensor C({m, n});
    for (size_t i = 0; i < m; ++i)
        for (size_t j = 0; j < n; ++j) {
            double s = 0.0;
            for (size_t p = 0; p < k; ++p) s += A.at2(i, p) * B.at2(j, p);
            C.at2(i, j) = s;
        }
    Var o = t.emplace(std::move(C));
    t.set_backward(o, [a, b, o, m, k, n](Tape& tp) {
        const Tensor& g = tp.grad(o);
        const Tensor &A2 = tp.value(a), &B2 = tp.value(b);
        Tensor &ga = tp.grad_acc(a), &gb = tp.grad_acc(b);
        for (size_t i = 0; i < m; ++i)
            for (size_t j = 0; j < n; ++j) {
                double gv = g.at2(i, j);
                if (gv == 0.0) continue;
                for (size_t p = 0; p < k; ++p) {
                    ga.at2(i, p) += gv * B2.at2(j, p);
                    gb.at2(j, p) += gv * A2.at2(i, p);
                }
            }
    });
    return o;
}

// Y = X (m x k) @ W (k x n) + b (n), b broadcast over rows.
inline Var linear(Tape& t, Var x, Var w, Var b) {
    const Tensor &X = t.value(x), &W = t.value(w), &B = t.value(b);
    require(X.rank() == 2 && W.rank() == 2 && X.shape[1] == W.shape[0],
            "linear: incompatible shapes " + X.shape_str() + " @ " +
                W.shape_str());
    require(B.rank() == 1 && B.shape[0] == W.shape[1],
            "linear: bias shape mismatch");
    size_t m = X.shape[0], k = X.shape[1], n = W.shape[1];
    Tensor Y({m, n});
    for (size_t i = 0; i < m; ++i) {
        for (size_t j = 0; j < n; ++j) Y.at2(i, j) = B.data[j];
        for (size_t p = 0; p < k; ++p) {
            double xv = X.at2(i, p);
            if (xv == 0.0) continue;
            for (size_t j = 0; j < n; ++j) Y.at2(i, j) += xv * W.at2(p, j);
        }
    }
    Var o = t.emplace(std::move(Y));
    t.set_backward(o, [x, w, b, o, m, k, n](Tape& tp) {
        const Tensor& g = tp.grad(o);
        const Tensor &X2 = tp.value(x), &W2 = tp.value(w);
        Tensor &gx = tp.grad_acc(x), &gw = tp.grad_acc(w),
               &gb = tp.grad_acc(b);
        for (size_t i = 0; i < m; ++i)
            for (size_t j = 0; j < n; ++j) {
                double gv = g.at2(i, j);
                if (gv == 0.0) continue;
                gb.data[j] += gv;
                for (size_t p = 0; p < k; ++p) {
                    gx.at2(i, p) += gv * W2.at2(p, j);
                    gw.at2(p, j) += gv * X2.at2(i, p);
                }
            }
    });
    return o;
}

inline Var sum(Tape& t, Var a) {
    const Tensor& va = t.value(a);
    double s = 0.0;
    for (double v : va.data) s += v;
    Var o = t.emplace(Tensor({1}, {s}));
    t.set_backward(o, [a, o](Tape& tp) {
        double g = tp.grad(o).data[0];
        Tensor& ga = tp.grad_acc(a);
        for (double& v : ga.data) v += g;
    });
    return o;
}

inline Var mean(Tape& t, Var a) {
    const Tensor& va = t.value(a);
    require(va.numel() > 0, "mean of empty tensor");
    double s = 0.0;
    for (double v : va.data) s += v;
    double inv = 1.0 / static_cast<double>(va.numel());
    Var o = t.emplace(Tensor({1}, {s * inv}));
    t.set_backward(o, [a, o, inv](Tape& tp) {
        double g = tp.grad(o).data[0] * inv;
        Tensor& ga = tp.grad_acc(a);
        for (double& v : ga.data) v += g;
    });
    return o;
}

inline Var dot(Tape& t, Var a, Var b) {
    const Tensor &va = t.value(a), &vb = t.value(b);
    check_same_shape(va, vb, "dot");
    double s = 0.0;
    for (size_t i = 0; i < va.numel(); ++i) s += va.data[i] * vb.data[i];
    Var o = t.emplace(Tensor({1}, {s}));
    t.set_backward(o, [a, b, o](Tape& tp) {
        double g = tp.grad(o).data[0];
        const Tensor &va2 = tp.value(a), &vb2 = tp.value(b);
        Tensor &ga = tp.grad_acc(a), &gb = tp.grad_acc(b);
        for (size_t i = 0; i < va2.numel(); ++i) {
            ga.data[i] += g * vb2.data[i];
            gb.data[i] += g * va2.data[i];
        }
    });
    return o;
}

// Scalar product with a constant tensor (no gradient into the constant).
inline Var dot_const(Tape& t, Var a, Tensor c) {
    const Tensor& va = t.value(a);
    check_same_shape(va, c, "dot_const");
    double s = 0.0;
    for (size_t i = 0; i < va.numel(); ++i) s += va.data[i] * c.data[i];
    Var o = t.emplace(Tensor({1}, {s}));
    t.set_backward(o, [a, o, c = std::move(c)](Tape& tp) {
        double g = tp.grad(o).data[0];
        Tensor& ga = tp.grad_acc(a);
        for (size_t i = 0; i < ga.numel(); ++i) ga.data[i] += g * c.data[i];
    });
    return o;
}

inline Var slice_cols(Tape& t, Var a, size_t c0, size_t c1) {
    const Tensor& A = t.value(a);
    require(A.rank() == 2 && c0 < c1 && c1 <= A.shape[1],
            "slice_cols: bad range");
    size_t m = A.shape[0], w = c1 - c0;
    Tensor out({m, w});
    for (size_t i = 0; i < m; ++i)
        for (size_t j = 0; j < w; ++j) out.at2(i, j) = A.at2(i, c0 + j);
    Var o = t.emplace(std::move(out));
    t.set_backward(o, [a, o, c0, m, w](Tape& tp) {
        const Tensor& g = tp.grad(o);
        Tensor& ga = tp.grad_acc(a);
        for (size_t i = 0; i < m; ++i)
            for (size_t j = 0; j < w; ++j) ga.at2(i, c0 + j) += g.at2(i, j);
    });
    return o;
}

inline Var concat_cols(Tape& t, const std::vector<Var>& parts) {
    require(!parts.empty(), "concat_cols: empty");
    size_t m = t.value(parts[0]).shape[0], total = 0;
    for (Var p : parts) {
        const Tensor& v = t.value(p);
        require(v.rank() == 2 && v.shape[0] == m, "concat_cols: row mismatch");
        total += v.shape[1];
    }
    Tensor out({m, total});
    size_t off = 0;
    for (Var p : parts) {
        const Tensor& v = t.value(p);
        for (size_t i = 0; i < m; ++i)
            for (size_t j = 0; j < v.shape[1]; ++j)
                out.at2(i, off + j) = v.at2(i, j);
        off += v.shape[1];
    }
    Var o = t.emplace(std::move(out));
    t.set_backward(o, [parts, o, m](Tape& tp) {
        const Tensor& g = tp.grad(o);
        size_t off2 = 0;
        for (Var p : parts) {
            Tensor& gp = tp.grad_acc(p);
            size_t w = gp.shape[1];
            for (size_t i = 0; i < m; ++i)
                for (size_t j = 0; j < w; ++j)
                    gp.at2(i, j) += g.at2(i, off2 + j);
            off2 += w;
        }
    });
    return o;
}

// Row-stack vectors of equal length into a matrix.
inline Var stack_rows(Tape& t, const std::vector<Var>& rows) {
    require(!rows.empty(), "stack_rows: empty");
    size_t d = t.value(rows[0]).numel();
    Tensor out({rows.size(), d});
    for (size_t r = 0; r < rows.size(); ++r) {
        const Tensor& v = t.value(rows[r]);
        require(v.numel() == d, "stack_rows: length mismatch");
        for (size_t j = 0; j < d; ++j) out.at2(r, j) = v.data[j];
    }
    Var o = t.emplace(std::move(out));
    t.set_backward(o, [rows, o, d](Tape& tp) {
        const Tensor& g = tp.grad(o);
        for (size_t r = 0; r < rows.size(); ++r) {
            Tensor& gr = tp.grad_acc(rows[r]);
            for (size_t j = 0; j < d; ++j) gr.data[j] += g.at2(r, j);
        }
    });
    return o;
}

inline Var row(Tape& t, Var a, size_t r) {
    const Tensor& A = t.value(a);
    require(A.rank() == 2 && r < A.shape[0], "row: out of range");
    size_t d = A.shape[1];
    Tensor out({d});
    for (size_t j = 0; j < d; ++j) out.data[j] = A.at2(r, j);
    Var o = t.emplace(std::move(out));
    t.set_backward(o, [a, o, r, d](Tape& tp) {
        const Tensor& g = tp.grad(o);
        Tensor& ga = tp.grad_acc(a);
        for (size_t j = 0; j < d; ++j) ga.at2(r, j) += g.data[j];
    });
    return o;
}

inline Var mean_rows(Tape& t, Var a) {
    const Tensor& A = t.value(a);
    require(A.rank() == 2 && A.shape[0] > 0, "mean_rows: need rows");
    size_t m = A.shape[0], d = A.shape[1];
    Tensor out({d});
    for (size_t i = 0; i < m; ++i)
        for (size_t j = 0; j < d; ++j) out.data[j] += A.at2(i, j);
    double inv = 1.0 / static_cast<double>(m);
    for (double& v : out.data) v *= inv;
    Var o = t.emplace(std::move(out));
    t.set_backward(o, [a, o, m, d, inv](Tape& tp) {
        const Tensor& g = tp.grad(o);
        Tensor& ga = tp.grad_acc(a);
        for (size_t i = 0; i < m; ++i)
            for (size_t j = 0; j < d; ++j) ga.at2(i, j) += inv * g.data[j];
    });
    return o;
}

// Stable softmax along the last axis of a vector or matrix (per row).
inline Var softmax_rows(Tape& t, Var a) {
    const Tensor& A = t.value(a);
    require(A.rank() == 1 || A.rank() == 2, "softmax: rank must be 1 or 2");
    size_t m = A.rank() == 2 ? A.shape[0] : 1;
    size_t n = A.rank() == 2 ? A.shape[1] : A.shape[0];
    require(n >= 1, "softmax: empty axis");
    Tensor out = A;
    for (size_t i = 0; i < m; ++i) {
        double mx = out.data[i * n];
        for (size_t j = 1; j < n; ++j) mx = std::max(mx, out.data[i * n + j]);
        double s = 0.0;
        for (size_t j = 0; j < n; ++j) {
            double e = std::exp(out.data[i * n + j] - mx);
            out.data[i * n + j] = e;
            s += e;
        }
        for (size_t j = 0; j < n; ++j) out.data[i * n + j] /= s;
    }
    Var o = t.emplace(std::move(out));
    t.set_backward(o, [a, o, m, n](Tape& tp) {
        const Tensor &g = tp.grad(o), &y = tp.value(o);
        Tensor& ga = tp.grad_acc(a);
        for (size_t i = 0; i < m; ++i) {
            double gy = 0.0;
            for (size_t j = 0; j < n; ++j)
                gy += g.data[i * n + j] * y.data[i * n + j];
            for (size_t j = 0; j < n; ++j)
                ga.data[i * n + j] +=
                    y.data[i * n + j] * (g.data[i * n + j] - gy);
        }
    });
    return o;
}

inline Var log_softmax_rows(Tape& t, Var a) {
    const Tensor& A = t.value(a);
    require(A.rank() == 1 || A.rank() == 2, "log_softmax: rank must be 1 or 2");
    size_t m = A.rank() == 2 ? A.shape[0] : 1;
    size_t n = A.rank() == 2 ? A.shape[1] : A.shape[0];
    Tensor out = A;
    for (size_t i = 0; i < m; ++i) {
        double mx = out.data[i * n];
        for (size_t j = 1; j < n; ++j) mx = std::max(mx, out.data[i * n + j]);
        double s = 0.0;
        for (size_t j = 0; j < n; ++j) s += std::exp(out.data[i * n + j] - mx);
        double lse = mx + std::log(s);
        for (size_t j = 0; j < n; ++j) out.data[i * n + j] -= lse;
    }
    Var o = t.emplace(std::move(out));
    t.set_backward(o, [a, o, m, n](Tape& tp) {
        const Tensor &g = tp.grad(o), &ly = tp.value(o);
        Tensor& ga = tp.grad_acc(a);
        for (size_t i = 0; i < m; ++i) {
            double gs = 0.0;
            for (size_t j = 0; j < n; ++j) gs += g.data[i * n + j];
            for (size_t j = 0; j < n; ++j)
                ga.data[i * n + j] +=
                    g.data[i * n + j] - std::exp(ly.data[i * n + j]) * gs;
        }
    });
    return o;
}

// Smooth tanh-form activation; kink-free so finite differences stay valid.
inline double gelu_fwd(double x) {
    constexpr double k = 0.7978845608028654;  // sqrt(2/pi)
    double u = k * (x + 0.044715 * x * x * x);
    return 0.5 * x * (1.0 + std::tanh(u));
}

inline double gelu_bwd(double x) {
    constexpr double k = 0.7978845608028654;
    double u = k * (x + 0.044715 * x * x * x);
    double th = std::tanh(u);
    double du = k * (1.0 + 3.0 * 0.044715 * x * x);
    return 0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * du;
}

inline Var gelu(Tape& t, Var a) {
    Tensor out = t.value(a);
    for (double& v : out.data) v = gelu_fwd(v);
    Var o = t.emplace(std::move(out));
    t.set_backward(o, [a, o](Tape& tp) {
        const Tensor &g = tp.grad(o), &x = tp.value(a);
        Tensor& ga = tp.grad_acc(a);
        for (size_t i = 0; i < g.numel(); ++i)
            ga.data[i] += g.data[i] * gelu_bwd(x.data[i]);
    });
    return o;
}

inline Var sigmoid(Tape& t, Var a) {
    Tensor out = t.value(a);
    for (double& v : out.data) v = 1.0 / (1.0 + std::exp(-v));
    Var o = t.emplace(std::move(out));
    t.set_backward(o, [a, o](Tape& tp) {
        const Tensor &g = tp.grad(o), &y = tp.value(o);
        Tensor& ga = tp.grad_acc(a);
        for (size_t i = 0; i < g.numel(); ++i)
            ga.data[i] += g.data[i] * y.data[i] * (1.0 - y.data[i]);
    });
    return o;
}

inline Var l2_normalize(Tape& t, Var a, double eps = 1e-12) {
    const Tensor& x = t.value(a);
    double n = x.norm2();
    if (n <= eps) fail("l2_normalize: degenerate input (norm <= eps)");
    Tensor out = x;
    for (double& v : out.data) v /= n;
    Var o = t.emplace(std::move(out));
    t.set_backward(o, [a, o, n](Tape& tp) {
        const Tensor &g = tp.grad(o), &y = tp.value(o);
        Tensor& ga = tp.grad_acc(a);
        double gy = 0.0;
        for (size_t i = 0; i < g.numel(); ++i) gy += g.data[i] * y.data[i];
        for (size_t i = 0; i < g.numel(); ++i)
            ga.data[i] += (g.data[i] - y.data[i] * gy) / n;
    });
    return o;
}

// Per-vector layer normalization: (x - mean)/sqrt(var + eps) * gamma + beta.
inline Var layer_norm(Tape& t, Var a, Var gamma, Var beta, double eps = 1e-5) {
    const Tensor& x = t.value(a);
    size_t n = x.numel();
    require(n >= 2, "layer_norm: input length must be >= 2");
    check_same_shape(x, t.value(gamma), "layer_norm(gamma)");
    check_same_shape(x, t.value(beta), "layer_norm(beta)");
    double mu = 0.0;
    for (double v : x.data) mu += v;
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (double v : x.data) var += (v - mu) * (v - mu);
    var /= static_cast<double>(n);
    double inv_std = 1.0 / std::sqrt(var + eps);
    Tensor out = x;
    const Tensor &gm = t.value(gamma), &bt = t.value(beta);
    for (size_t i = 0; i < n; ++i)
        out.data[i] = (x.data[i] - mu) * inv_std * gm.data[i] + bt.data[i];
    Var o = t.emplace(std::move(out));
    t.set_backward(o, [a, gamma, beta, o, mu, inv_std, n](Tape& tp) {
        const Tensor &g = tp.grad(o), &x2 = tp.value(a),
                     &gm2 = tp.value(gamma);
        Tensor &ga = tp.grad_acc(a), &gg = tp.grad_acc(gamma),
               &gb = tp.grad_acc(beta);
        double inv_n = 1.0 / static_cast<double>(n);
        double s1 = 0.0, s2 = 0.0;
        std::vector<double> xhat(n), dxh(n);
        for (size_t i = 0; i < n; ++i) {
            xhat[i] = (x2.data[i] - mu) * inv_std;
            dxh[i] = g.data[i] * gm2.data[i];
            gg.data[i] += g.data[i] * xhat[i];
            gb.data[i] += g.data[i];
            s1 += dxh[i];
            s2 += dxh[i] * xhat[i];
        }
        for (size_t i = 0; i < n; ++i)
            ga.data[i] +=
                inv_std * (dxh[i] - inv_n * s1 - xhat[i] * inv_n * s2);
    });
    return o;
}

// Mean cross-entropy over rows of a logit matrix against integer labels.
inline Var cross_entropy_mean(Tape& t, Var logits,
                              const std::vector<size_t>& labels) {
    const Tensor& L = t.value(logits);
    require(L.rank() == 2 && L.shape[0] == labels.size(),
            "cross_entropy: batch size mismatch");
    size_t m = L.shape[0], n = L.shape[1];
    double loss = 0.0;
    Tensor probs({m, n});
    for (size_t i = 0; i < m; ++i) {
        require(labels[i] < n, "cross_entropy: label out of range");
        double mx = L.at2(i, 0);
        for (size_t j = 1; j < n; ++j) mx = std::max(mx, L.at2(i, j));
        double s = 0.0;
        for (size_t j = 0; j < n; ++j) {
            double e = std::exp(L.at2(i, j) - mx);
            probs.at2(i, j) = e;
            s += e;
        }
        for (size_t j = 0; j < n; ++j) probs.at2(i, j) /= s;
        loss -= std::log(std::max(probs.at2(i, labels[i]), 1e-300));
    }
    loss /= static_cast<double>(m);
    Var o = t.emplace(Tensor({1}, {loss}));
    t.set_backward(o, [logits, o, labels, probs = std::move(probs), m,
                       n](Tape& tp) {
        double g = tp.grad(o).data[0] / static_cast<double>(m);
        Tensor& gl = tp.grad_acc(logits);
        for (size_t i = 0; i < m; ++i)
            for (size_t j = 0; j < n; ++j) {
                double p = probs.at2(i, j);
                gl.at2(i, j) += g * (p - (j == labels[i] ? 1.0 : 0.0));
            }
    });
    return o;
}

inline Var mse_const(Tape& t, Var a, Tensor target) {
    const Tensor& x = t.value(a);
    check_same_shape(x, target, "mse");
    double s = 0.0;
    for (size_t i = 0; i < x.numel(); ++i) {
        double d = x.data[i] - target.data[i];
        s += d * d;
    }
    double inv = 1.0 / static_cast<double>(x.numel());
    Var o = t.emplace(Tensor({1}, {s * inv}));
    t.set_backward(o, [a, o, target = std::move(target), inv](Tape& tp) {
        double g = tp.grad(o).data[0];
        const Tensor& x2 = tp.value(a);
        Tensor& ga = tp.grad_acc(a);
        for (size_t i = 0; i < x2.numel(); ++i)
            ga.data[i] += g * 2.0 * inv * (x2.data[i] - target.data[i]);
    });
    return o;
}

// Value passes through, gradient does not.
inline Var stop_grad(Tape& t, Var a) { return t.leaf(t.value(a)); }

// ---------------------------------------------------------------------------
// Spatial ops on (C, H, W) maps.
// ---------------------------------------------------------------------------

// 1x1 convolution: per-pixel channel projection, W (Cout x Cin), bias (Cout).
inline Var conv1x1(Tape& t, Var map, Var w, Var b) {
    const Tensor &X = t.value(map), &W = t.value(w), &B = t.value(b);
    require(X.rank() == 3, "conv1x1: map must be (C,H,W)");
    require(W.rank() == 2 && W.shape[1] == X.shape[0],
            "conv1x1: weight in-channels mismatch");
    require(B.rank() == 1 && B.shape[0] == W.shape[0],
            "conv1x1: bias mismatch");
    size_t ci = X.shape[0], h = X.shape[1], wd = X.shape[2], co = W.shape[0];
    Tensor Y({co, h, wd});
    for (size_t oc = 0; oc < co; ++oc)
        for (size_t p = 0; p < h * wd; ++p) {
            double s = B.data[oc];
            for (size_t ic = 0; ic < ci; ++ic)
                s += W.at2(oc, ic) * X.data[ic * h * wd + p];
            Y.data[oc * h * wd + p] = s;
        }
    Var o = t.emplace(std::move(Y));
    t.set_backward(o, [map, w, b, o, ci, co, h, wd](Tape& tp) {
        const Tensor &g = tp.grad(o), &X2 = tp.value(map), &W2 = tp.value(w);
        Tensor &gx = tp.grad_acc(map), &gw = tp.grad_acc(w),
               &gb = tp.grad_acc(b);
        for (size_t oc = 0; oc < co; ++oc)
            for (size_t p = 0; p < h * wd; ++p) {
                double gv = g.data[oc * h * wd + p];
                if (gv == 0.0) continue;
                gb.data[oc] += gv;
                for (size_t ic = 0; ic < ci; ++ic) {
                    gx.data[ic * h * wd + p] += gv * W2.at2(oc, ic);
                    gw.at2(oc, ic) += gv * X2.data[ic * h * wd + p];
                }
            }
    });
    return o;
}

// 3x3 same-padding convolution, W (Cout, Cin, 3, 3), bias (Cout).
inline Var conv3x3(Tape& t, Var map, Var w, Var b) {
    const Tensor &X = t.value(map), &W = t.value(w), &B = t.value(b);
    require(X.rank() == 3, "conv3x3: map must be (C,H,W)");
    require(W.rank() == 4 && W.shape[1] == X.shape[0] && W.shape[2] == 3 &&
                W.shape[3] == 3,
            "conv3x3: weight shape mismatch");
    require(B.rank() == 1 && B.shape[0] == W.shape[0],
            "conv3x3: bias mismatch");
    size_t ci = X.shape[0], h = X.shape[1], wd = X.shape[2], co = W.shape[0];
    Tensor Y({co, h, wd});
    auto widx = [ci](size_t oc, size_t ic, size_t kh, size_t kw) {
        return ((oc * ci + ic) * 3 + kh) * 3 + kw;
    };
    for (size_t oc = 0; oc < co; ++oc)
        for (size_t y = 0; y < h; ++y)
            for (size_t x = 0; x < wd; ++x) {
                double s = B.data[oc];
                for (size_t ic = 0; ic < ci; ++ic)
                    for (int kh = -1; kh <= 1; ++kh)
                        for (int kw = -1; kw <= 1; ++kw) {
                            int yy = static_cast<int>(y) + kh;
                            int xx = static_cast<int>(x) + kw;
                            if (yy < 0 || yy >= static_cast<int>(h) ||
                                xx < 0 || xx >= static_cast<int>(wd))
                                continue;
                            s += W.data[widx(oc, ic, kh + 1, kw + 1)] *
                                 X.data[(ic * h + yy) * wd + xx];
                        }
                Y.data[(oc * h + y) * wd + x] = s;
            }
    Var o = t.emplace(std::move(Y));
    t.set_backward(o, [map, w, b, o, ci, co, h, wd](Tape& tp) {
        const Tensor &g = tp.grad(o), &X2 = tp.value(map), &W2 = tp.value(w);
        Tensor &gx = tp.grad_acc(map), &gw = tp.grad_acc(w),
               &gb = tp.grad_acc(b);
        auto widx = [ci](size_t oc, size_t ic, size_t kh, size_t kw) {
            return ((oc * ci + ic) * 3 + kh) * 3 + kw;
        };
        for (size_t oc = 0; oc < co; ++oc)
            for (size_t y = 0; y < h; ++y)
                for (size_t x = 0; x < wd; ++x) {
                    double gv = g.data[(oc * h + y) * wd + x];
                    if (gv == 0.0) continue;
                    gb.data[oc] += gv;
                    for (size_t ic = 0; ic < ci; ++ic)
                        for (int kh = -1; kh <= 1; ++kh)
                            for (int kw = -1; kw <= 1; ++kw) {
                                int yy = static_cast<int>(y) + kh;
                                int xx = static_cast<int>(x) + kw;
                                if (yy < 0 || yy >= static_cast<int>(h) ||
                                    xx < 0 || xx >= static_cast<int>(wd))
                                    continue;
                                size_t xi = (ic * h + yy) * wd + xx;
                                gx.data[xi] +=
                                    gv * W2.data[widx(oc, ic, kh + 1, kw + 1)];
                                gw.data[widx(oc, ic, kh + 1, kw + 1)] +=
                                    gv * X2.data[xi];
                            }
                }
    });
    return o;
}

// Bilinear resize of (C, H, W) to (C, Hout, Wout), align_corners off.
inline Var bilinear_resize(Tape& t, Var map, size_t hout, size_t wout) {
    const Tensor& X = t.value(map);
    require(X.rank() == 3, "bilinear_resize: map must be (C,H,W)");
    require(hout >= 1 && wout >= 1, "bilinear_resize: bad target size");
    size_t c = X.shape[0], hin = X.shape[1], win = X.shape[2];
    struct Tap {
        size_t src;
        double wgt;
    };
    // Precompute up to 4 source taps per output pixel; shared with backward.
    auto axis_taps = [](size_t in, size_t out, size_t i) {
        double scale = static_cast<double>(in) / static_cast<double>(out);
        double s = (static_cast<double>(i) + 0.5) * scale - 0.5;
        double fl = std::floor(s);
        long i0 = static_cast<long>(fl);
        double fr = s - fl;
        long lim = static_cast<long>(in) - 1;
        size_t a = static_cast<size_t>(std::clamp(i0, 0l, lim));
        size_t b = static_cast<size_t>(std::clamp(i0 + 1, 0l, lim));
        return std::tuple<size_t, size_t, double>(a, b, fr);
    };
    std::vector<std::vector<Tap>> taps(hout * wout);
    for (size_t y = 0; y < hout; ++y) {
        auto [y0, y1, fy] = axis_taps(hin, hout, y);
        for (size_t x = 0; x < wout; ++x) {
            auto [x0, x1, fx] = axis_taps(win, wout, x);
            auto& tv = taps[y * wout + x];
            tv.push_back({y0 * win + x0, (1 - fy) * (1 - fx)});
            tv.push_back({y0 * win + x1, (1 - fy) * fx});
            tv.push_back({y1 * win + x0, fy * (1 - fx)});
            tv.push_back({y1 * win + x1, fy * fx});
        }
    }
    Tensor Y({c, hout, wout});
    for (size_t ch = 0; ch < c; ++ch)
        for (size_t p = 0; p < hout * wout; ++p) {
            double s = 0.0;
            for (const Tap& tp : taps[p])
                s += tp.wgt * X.data[ch * hin * win + tp.src];
            Y.data[ch * hout * wout + p] = s;
        }
    Var o = t.emplace(std::move(Y));
    t.set_backward(o, [map, o, c, hin, win, hout, wout,
                       taps = std::move(taps)](Tape& tp) {
        const Tensor& g = tp.grad(o);
        Tensor& gx = tp.grad_acc(map);
        for (size_t ch = 0; ch < c; ++ch)
            for (size_t p = 0; p < hout * wout; ++p) {
                double gv = g.data[ch * hout * wout + p];
                if (gv == 0.0) continue;
                for (const Tap& tv : taps[p])
                    gx.data[ch * hin * win + tv.src] += gv * tv.wgt;
            }
    });
    return o;
}

// Attention-weighted spatial pooling: out[c] = sum_hw A(hw) X(c,hw) /
// (sum_hw A(hw) + eps). The attention map is a constant (built from
// heatmaps, not learned).
inline Var pool_weighted(Tape& t, Var map, const Tensor& attn, double eps) {
    const Tensor& X = t.value(map);
    require(X.rank() == 3, "pool_weighted: map must be (C,H,W)");
    require(attn.rank() == 2 && attn.shape[0] == X.shape[1] &&
                attn.shape[1] == X.shape[2],
            "pool_weighted: attention resolution mismatch " + attn.shape_str() +
                " vs map " + X.shape_str());
    size_t c = X.shape[0], hw = X.shape[1] * X.shape[2];
    double asum = 0.0;
    for (double v : attn.data) asum += v;
    double denom = asum + eps;
    Tensor out({c});
    for (size_t ch = 0; ch < c; ++ch) {
        double s = 0.0;
        for (size_t p = 0; p < hw; ++p) s += attn.data[p] * X.data[ch * hw + p];
        out.data[ch] = s / denom;
    }
    Var o = t.emplace(std::move(out));
    t.set_backward(o, [map, o, attn, denom, c, hw](Tape& tp) {
        const Tensor& g = tp.grad(o);
        Tensor& gx = tp.grad_acc(map);
        for (size_t ch = 0; ch < c; ++ch) {
            double gv = g.data[ch] / denom;
            for (size_t p = 0; p < hw; ++p)
                gx.data[ch * hw + p] += gv * attn.data[p];
        }
    });
    return o;
}

}  // namespace ops
}  // namespace posebridge
