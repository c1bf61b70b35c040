#pragma once

#include <cmath>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "vdistill/matrix.hpp"

namespace vdistill {

// A named parameter block. Gradients accumulate only while `trainable`.
template <typename T>
struct Param {
    std::string name;
    Mat<T> value;
    Mat<T> grad;
    bool trainable = false;

    Param() = default;
    Param(std::string n, Mat<T> v) : name(std::move(n)), value(std::move(v)) {
        grad = Mat<T>(value.rows, value.cols);
    }
    void zero_grad() { grad.zero(); }
};

// Reverse-mode tape over matrix-valued nodes. Nodes only reference earlier
// nodes, so reverse creation order is a valid topological order.
template <typename T>
class Graph {
public:
    int size() const { return static_cast<int>(nodes_.size()); }
    Mat<T>& val(int i) { return nodes_[i].val; }
    const Mat<T>& val(int i) const { return nodes_[i].val; }
    Mat<T>& grad(int i) { return nodes_[i].grad; }

    int constant(Mat<T> v) { return make(std::move(v), nullptr); }

    int param(Param<T>& p) {
        Param<T>* pp = &p;
        return make(p.value, [pp](Graph& g, int self) {
            if (pp->trainable) add_inplace(pp->grad, g.grad(self));
        });
    }

    // Token embedding lookup over the partitioned table, plus learned
    // absolute position rows. Ids >= orig.rows read the extension block.
    int lookup(Param<T>& orig, Param<T>& ext, Param<T>& pos, const std::vector<int32_t>& ids) {
        const int L = static_cast<int>(ids.size());
        const int d = orig.value.cols;
        const int split = orig.value.rows;
        if (L > pos.value.rows) throw std::runtime_error("sequence too long");
        Mat<T> out(L, d);
        for (int t = 0; t < L; ++t) {
            int32_t id = ids[t];
            const T* row;
            if (id < 0 || id >= split + ext.value.rows) throw std::runtime_error("id out of range");
            row = (id < split) ? orig.value.row_ptr(id) : ext.value.row_ptr(id - split);
            const T* pr = pos.value.row_ptr(t);
            for (int c = 0; c < d; ++c) out(t, c) = row[c] + pr[c];
        }
        Param<T>* po = &orig;
        Param<T>* pe = &ext;
        Param<T>* pp = &pos;
        return make(std::move(out), [po, pe, pp, ids, split](Graph& g, int self) {
            const Mat<T>& gy = g.grad(self);
            for (int t = 0; t < gy.rows; ++t) {
                int32_t id = ids[t];
                if (id < split) {
                    if (po->trainable) {
                        for (int c = 0; c < gy.cols; ++c) po->grad(id, c) += gy(t, c);
                    }
                } else if (pe->trainable) {
                    for (int c = 0; c < gy.cols; ++c) pe->grad(id - split, c) += gy(t, c);
                }
                if (pp->trainable) {
                    for (int c = 0; c < gy.cols; ++c) pp->grad(t, c) += gy(t, c);
                }
            }
        });
    }

    int add(int a, int b) {
        if (!val(a).same_shape(val(b))) throw std::runtime_error("add: shape mismatch");
        Mat<T> out = val(a);
        add_inplace(out, val(b));
        return make(std::move(out), [a, b](Graph& g, int self) {
            add_inplace(g.grad(a), g.grad(self));
            add_inplace(g.grad(b), g.grad(self));
        });
    }

    // A * B^T
    int matmul_nt(int a, int b) {
        Mat<T> out;
        vdistill::matmul_nt(val(a), val(b), out);
        return make(std::move(out), [a, b](Graph& g, int self) {
            // dA += G * B ; dB += G^T * A
            vdistill::matmul_nn(g.grad(self), g.val(b), g.grad(a), true);
            vdistill::matmul_tn(g.grad(self), g.val(a), g.grad(b), true);
        });
    }

    // A * B
    int matmul_nn(int a, int b) {
        Mat<T> out;
        vdistill::matmul_nn(val(a), val(b), out);
        return make(std::move(out), [a, b](Graph& g, int self) {
            // dA += G * B^T ; dB += A^T * G
            vdistill::matmul_nt(g.grad(self), g.val(b), g.grad(a), true);
            vdistill::matmul_tn(g.val(a), g.grad(self), g.grad(b), true);
        });
    }

    // Row-wise layer norm with gain/bias broadcast over rows.
    int layer_norm(int x, int gain, int bias, T eps = T(1e-5)) {
        const Mat<T>& xv = val(x);
        const int n = xv.cols;
        Mat<T> xhat(xv.rows, n);
        std::vector<T> inv_std(xv.rows);
        for (int r = 0; r < xv.rows; ++r) {
            const T* p = xv.row_ptr(r);
            T mean = 0;
            for (int c = 0; c < n; ++c) mean += p[c];
            mean /= n;
            T var = 0;
            for (int c = 0; c < n; ++c) var += (p[c] - mean) * (p[c] - mean);
            var /= n;
            T is = T(1) / std::sqrt(var + eps);
            inv_std[r] = is;
            for (int c = 0; c < n; ++c) xhat(r, c) = (p[c] - mean) * is;
        }
        Mat<T> out(xv.rows, n);
        const T* g = val(gain).row_ptr(0);
        const T* b = val(bias).row_ptr(0);
        for (int r = 0; r < xv.rows; ++r) {
            for (int c = 0; c < n; ++c) out(r, c) = xhat(r, c) * g[c] + b[c];
        }
        return make(std::move(out),
                    [x, gain, bias, xhat = std::move(xhat), inv_std = std::move(inv_std)](Graph& g_, int self) {
                        const Mat<T>& gy = g_.grad(self);
                        const int n = gy.cols;
                        const T* gn = g_.val(gain).row_ptr(0);
                        Mat<T>& dx = g_.grad(x);
                        Mat<T>& dg = g_.grad(gain);
                        Mat<T>& db = g_.grad(bias);
                        for (int r = 0; r < gy.rows; ++r) {
                            T sum_dxhat = 0, sum_dxhat_xhat = 0;
                            for (int c = 0; c < n; ++c) {
                                T dxhat = gy(r, c) * gn[c];
                                sum_dxhat += dxhat;
                                sum_dxhat_xhat += dxhat * xhat(r, c);
                                dg(0, c) += gy(r, c) * xhat(r, c);
                                db(0, c) += gy(r, c);
                            }
                            for (int c = 0; c < n; ++c) {
                                T dxhat = gy(r, c) * gn[c];
                                dx(r, c) += inv_std[r] *
                                            (dxhat - sum_dxhat / n - xhat(r, c) * sum_dxhat_xhat / n);
                            }
                        }
                    });
    }

    int gelu(int x) {
        const Mat<T>& xv = val(x);
        Mat<T> out(xv.rows, xv.cols);
        for (size_t i = 0; i < xv.size(); ++i) {
            T v = xv.data[i];
            out.data[i] = T(0.5) * v * (T(1) + std::erf(v / std::sqrt(T(2))));
        }
        return make(std::move(out), [x](Graph& g, int self) {
            const Mat<T>& xv = g.val(x);
            Mat<T>& dx = g.grad(x);
            const Mat<T>& gy = g.grad(self);
            const T inv_sqrt2 = T(1) / std::sqrt(T(2));
            const T inv_sqrt2pi = T(0.39894228040143267794);  // 1/sqrt(2*pi)
            for (size_t i = 0; i < xv.size(); ++i) {
                T v = xv.data[i];
                T cdf = T(0.5) * (T(1) + std::erf(v * inv_sqrt2));
                T pdf = inv_sqrt2pi * std::exp(-T(0.5) * v * v);
                dx.data[i] += gy.data[i] * (cdf + v * pdf);
            }
        });
    }

    // Causal multi-head attention over q, k, v (each L x d_model).
    int attention(int q, int k, int v, int n_heads) {
        const Mat<T>& qv = val(q);
        const int L = qv.rows;
        const int d = qv.cols;
        if (d % n_heads != 0) throw std::runtime_error("attention: d_model not divisible by heads");
        const int dh = d / n_heads;
        const T scale = T(1) / std::sqrt(static_cast<T>(dh));

        // probs[h] is the L x L masked softmax for head h, kept for backward.
        auto probs = std::make_shared<std::vector<Mat<T>>>();
        probs->reserve(n_heads);
        Mat<T> out(L, d);
        const Mat<T>& kv = val(k);
        const Mat<T>& vv = val(v);
        for (int h = 0; h < n_heads; ++h) {
            const int off = h * dh;
            Mat<T> s(L, L);
            for (int i = 0; i < L; ++i) {
                for (int j = 0; j <= i; ++j) {
                    T acc = 0;
                    for (int c = 0; c < dh; ++c) acc += qv(i, off + c) * kv(j, off + c);
                    s(i, j) = acc * scale;
                }
                // masked softmax over j <= i
                T mx = s(i, 0);
                for (int j = 1; j <= i; ++j) mx = std::max(mx, s(i, j));
                T sum = 0;
                for (int j = 0; j <= i; ++j) {
                    s(i, j) = std::exp(s(i, j) - mx);
                    sum += s(i, j);
                }
                for (int j = 0; j <= i; ++j) s(i, j) /= sum;
                for (int j = i + 1; j < L; ++j) s(i, j) = 0;
            }
            for (int i = 0; i < L; ++i) {
                for (int c = 0; c < dh; ++c) {
                    T acc = 0;
                    for (int j = 0; j <= i; ++j) acc += s(i, j) * vv(j, off + c);
                    out(i, off + c) = acc;
                }
            }
            probs->push_back(std::move(s));
        }
        return make(std::move(out), [q, k, v, n_heads, dh, scale, probs](Graph& g, int self) {
            const Mat<T>& gy = g.grad(self);
            const Mat<T>& qv = g.val(q);
            const Mat<T>& kv = g.val(k);
            const Mat<T>& vv = g.val(v);
            Mat<T>& dq = g.grad(q);
            Mat<T>& dk = g.grad(k);
            Mat<T>& dv = g.grad(v);
            const int L = gy.rows;
            for (int h = 0; h < n_heads; ++h) {
                const int off = h * dh;
                const Mat<T>& p = (*probs)[h];
                Mat<T> ds(L, L);
                for (int i = 0; i < L; ++i) {
                    // dP = dO * Vh^T ; dV += P^T * dO
                    T dot = 0;
                    std::vector<T> dp(i + 1);
                    for (int j = 0; j <= i; ++j) {
                        T acc = 0;
                        for (int c = 0; c < dh; ++c) acc += gy(i, off + c) * vv(j, off + c);
                        dp[j] = acc;
                        dot += acc * p(i, j);
                    }
                    for (int j = 0; j <= i; ++j) {
                        ds(i, j) = p(i, j) * (dp[j] - dot);
                        for (int c = 0; c < dh; ++c) dv(j, off + c) += p(i, j) * gy(i, off + c);
                    }
                }
                for (int i = 0; i < L; ++i) {
                    for (int j = 0; j <= i; ++j) {
                        T dsij = ds(i, j) * scale;
                        for (int c = 0; c < dh; ++c) {
                            dq(i, off + c) += dsij * kv(j, off + c);
                            dk(j, off + c) += dsij * qv(i, off + c);
                        }
                    }
                }
            }
        });
    }

    int concat_cols(int a, int b) {
        const Mat<T>& av = val(a);
        const Mat<T>& bv = val(b);
        if (av.rows != bv.rows) throw std::runtime_error("concat_cols: row mismatch");
        Mat<T> out(av.rows, av.cols + bv.cols);
        for (int r = 0; r < av.rows; ++r) {
            std::copy(av.row_ptr(r), av.row_ptr(r) + av.cols, out.row_ptr(r));
            std::copy(bv.row_ptr(r), bv.row_ptr(r) + bv.cols, out.row_ptr(r) + av.cols);
        }
        const int ac = av.cols;
        return make(std::move(out), [a, b, ac](Graph& g, int self) {
            const Mat<T>& gy = g.grad(self);
            Mat<T>& da = g.grad(a);
            Mat<T>& db = g.grad(b);
            for (int r = 0; r < gy.rows; ++r) {
                for (int c = 0; c < da.cols; ++c) da(r, c) += gy(r, c);
                for (int c = 0; c < db.cols; ++c) db(r, c) += gy(r, ac + c);
            }
        });
    }

    int slice_cols(int x, int c0, int c1) {
        const Mat<T>& xv = val(x);
        if (c0 < 0 || c1 > xv.cols || c0 >= c1) throw std::runtime_error("slice_cols: bad range");
        Mat<T> out(xv.rows, c1 - c0);
        for (int r = 0; r < xv.rows; ++r) {
            std::copy(xv.row_ptr(r) + c0, xv.row_ptr(r) + c1, out.row_ptr(r));
        }
        return make(std::move(out), [x, c0](Graph& g, int self) {
            const Mat<T>& gy = g.grad(self);
            Mat<T>& dx = g.grad(x);
            for (int r = 0; r < gy.rows; ++r) {
                for (int c = 0; c < gy.cols; ++c) dx(r, c0 + c) += gy(r, c);
            }
        });
    }

    int gather_rows(int x, std::vector<int> rows) {
        const Mat<T>& xv = val(x);
        Mat<T> out(static_cast<int>(rows.size()), xv.cols);
        for (size_t r = 0; r < rows.size(); ++r) {
            if (rows[r] < 0 || rows[r] >= xv.rows) throw std::runtime_error("gather_rows: out of range");
            std::copy(xv.row_ptr(rows[r]), xv.row_ptr(rows[r]) + xv.cols, out.row_ptr(static_cast<int>(r)));
        }
        return make(std::move(out), [x, rows = std::move(rows)](Graph& g, int self) {
            const Mat<T>& gy = g.grad(self);
            Mat<T>& dx = g.grad(x);
            for (size_t r = 0; r < rows.size(); ++r) {
                for (int c = 0; c < gy.cols; ++c) dx(rows[r], c) += gy(static_cast<int>(r), c);
            }
        });
    }

    // Mean over rows of KL(P_row || softmax(logits_row)). P is constant.
    int kl_vs_target(int logits, Mat<T> target_probs) {
        const Mat<T>& lv = val(logits);
        if (!lv.same_shape(target_probs)) throw std::runtime_error("kl_vs_target: shape mismatch");
        Mat<T> q = softmax_rows(lv);
        const T clamp = T(1e-12);
        T loss = 0;
        for (int r = 0; r < lv.rows; ++r) {
            for (int c = 0; c < lv.cols; ++c) {
                T p = target_probs(r, c);
                if (p <= T(0)) continue;
                loss += p * std::log(p / std::max(q(r, c), clamp));
            }
        }
        loss /= lv.rows;
        Mat<T> out(1, 1);
        out(0, 0) = loss;
        const int n = lv.rows;
        return make(std::move(out),
                    [logits, q = std::move(q), p = std::move(target_probs), n](Graph& g, int self) {
                        T scale = g.grad(self)(0, 0) / n;
                        Mat<T>& dx = g.grad(logits);
                        for (size_t i = 0; i < q.size(); ++i) {
                            dx.data[i] += scale * (q.data[i] - p.data[i]);
                        }
                    });
    }

    // Mean over rows of -log softmax(logits_row)[target].
    int ce_vs_targets(int logits, std::vector<int> targets) {
        const Mat<T>& lv = val(logits);
        if (static_cast<int>(targets.size()) != lv.rows) {
            throw std::runtime_error("ce_vs_targets: target count mismatch");
        }
        Mat<T> q = softmax_rows(lv);
        const T clamp = T(1e-12);
        T loss = 0;
        for (int r = 0; r < lv.rows; ++r) {
            if (targets[r] < 0 || targets[r] >= lv.cols) throw std::runtime_error("target index out of range");
            loss -= std::log(std::max(q(r, targets[r]), clamp));
        }
        loss /= lv.rows;
        Mat<T> out(1, 1);
        out(0, 0) = loss;
        const int n = lv.rows;
        return make(std::move(out),
                    [logits, q = std::move(q), targets = std::move(targets), n](Graph& g, int self) {
                        T scale = g.grad(self)(0, 0) / n;
                        Mat<T>& dx = g.grad(logits);
                        for (int r = 0; r < q.rows; ++r) {
                            for (int c = 0; c < q.cols; ++c) {
                                T delta = q(r, c) - (c == targets[r] ? T(1) : T(0));
                                dx(r, c) += scale * delta;
                            }
                        }
                    });
    }

    void backward(int loss_node) {
        if (nodes_.empty()) throw std::runtime_error("backward without forward");
        if (val(loss_node).rows != 1 || val(loss_node).cols != 1) {
            throw std::runtime_error("backward: loss must be scalar");
        }
        grad(loss_node)(0, 0) = T(1);
        for (int i = loss_node; i >= 0; --i) {
            if (nodes_[i].back) nodes_[i].back(*this, i);
        }
    }

private:
    using BackFn = std::function<void(Graph&, int)>;
    struct Node {
        Mat<T> val;
        Mat<T> grad;
        BackFn back;
    };
    std::vector<Node> nodes_;

    int make(Mat<T> v, BackFn b) {
        Node n;
        n.grad = Mat<T>(v.rows, v.cols);
        n.val = std::move(v);
        n.back = std::move(b);
        nodes_.push_back(std::move(n));
        return static_cast<int>(nodes_.size()) - 1;
    }
};

}  // namespace vdistill
