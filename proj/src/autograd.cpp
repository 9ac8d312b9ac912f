#include "simcis/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

namespace simcis {

namespace {

std::shared_ptr<Node> make_node(Tensor value, std::vector<std::shared_ptr<Node>> inputs,
                                std::function<void(Node&)> backward_fn) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    n->inputs = std::move(inputs);
    n->requires_grad = false;
    for (const auto& in : n->inputs)
        if (in->requires_grad) n->requires_grad = true;
    if (n->requires_grad) n->backward_fn = std::move(backward_fn);
    return n;
}

inline void accum(Node& dst, const Tensor& g) {
    Tensor& t = dst.ensure_grad();
    const double* src = g.ptr();
    double* d = t.ptr();
    const int64_t n = t.numel();
    for (int64_t i = 0; i < n; ++i) d[i] += src[i];
}

}  // namespace

void backward(const Var& root) {
    if (!root.defined()) throw std::invalid_argument("backward: undefined root");
    if (root.numel() != 1) throw std::invalid_argument("backward: root must be scalar");
    auto r = root.node();
    if (!r->requires_grad) return;

    // iterative post-order DFS -> topological order
    std::vector<Node*> topo;
    std::unordered_set<Node*> visited;
    std::vector<std::pair<Node*, size_t>> stack;
    stack.push_back({r.get(), 0});
    visited.insert(r.get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->inputs.size()) {
            Node* child = node->inputs[next++].get();
            if (child->requires_grad && !visited.count(child)) {
                visited.insert(child);
                stack.push_back({child, 0});
            }
        } else {
            topo.push_back(node);
            stack.pop_back();
        }
    }

    for (Node* n : topo) n->ensure_grad();
    r->grad.fill(0.0);
    r->grad[0] = 1.0;
    for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
        Node* n = *it;
        if (n->backward_fn) n->backward_fn(*n);
    }
}

// ---------------------------------------------------------------------------
// elementwise
// ---------------------------------------------------------------------------

Var add(const Var& a, const Var& b) {
    check_same_shape(a.value(), b.value(), "add");
    Tensor out = a.value();
    const double* pb = b.value().ptr();
    for (int64_t i = 0; i < out.numel(); ++i) out[i] += pb[i];
    return Var(make_node(std::move(out), {a.node(), b.node()}, [](Node& n) {
        if (n.inputs[0]->requires_grad) accum(*n.inputs[0], n.grad);
        if (n.inputs[1]->requires_grad) accum(*n.inputs[1], n.grad);
    }));
}

Var sub(const Var& a, const Var& b) {
    check_same_shape(a.value(), b.value(), "sub");
    Tensor out = a.value();
    const double* pb = b.value().ptr();
    for (int64_t i = 0; i < out.numel(); ++i) out[i] -= pb[i];
    return Var(make_node(std::move(out), {a.node(), b.node()}, [](Node& n) {
        if (n.inputs[0]->requires_grad) accum(*n.inputs[0], n.grad);
        if (n.inputs[1]->requires_grad) {
            Tensor& g = n.inputs[1]->ensure_grad();
            for (int64_t i = 0; i < g.numel(); ++i) g[i] -= n.grad[i];
        }
    }));
}

Var mul(const Var& a, const Var& b) {
    check_same_shape(a.value(), b.value(), "mul");
    Tensor out = a.value();
    const double* pb = b.value().ptr();
    for (int64_t i = 0; i < out.numel(); ++i) out[i] *= pb[i];
    return Var(make_node(std::move(out), {a.node(), b.node()}, [](Node& n) {
        const Tensor& av = n.inputs[0]->value;
        const Tensor& bv = n.inputs[1]->value;
        if (n.inputs[0]->requires_grad) {
            Tensor& g = n.inputs[0]->ensure_grad();
            for (int64_t i = 0; i < g.numel(); ++i) g[i] += n.grad[i] * bv[i];
        }
        if (n.inputs[1]->requires_grad) {
            Tensor& g = n.inputs[1]->ensure_grad();
            for (int64_t i = 0; i < g.numel(); ++i) g[i] += n.grad[i] * av[i];
        }
    }));
}

Var scale(const Var& a, double s) {
    Tensor out = a.value();
    for (auto& v : out.data) v *= s;
    return Var(make_node(std::move(out), {a.node()}, [s](Node& n) {
        if (!n.inputs[0]->requires_grad) return;
        Tensor& g = n.inputs[0]->ensure_grad();
        for (int64_t i = 0; i < g.numel(); ++i) g[i] += s * n.grad[i];
    }));
}

Var add_rowvec(const Var& x, const Var& v) {
    const Tensor& xv = x.value();
    const Tensor& vv = v.value();
    if (xv.ndim() != 2 || vv.numel() != xv.dim(1))
        throw std::invalid_argument("add_rowvec: want [n,d] and [d]");
    Tensor out = xv;
    const int64_t n = xv.dim(0), d = xv.dim(1);
    for (int64_t r = 0; r < n; ++r)
        for (int64_t c = 0; c < d; ++c) out[r * d + c] += vv[c];
    return Var(make_node(std::move(out), {x.node(), v.node()}, [n, d](Node& nd) {
        if (nd.inputs[0]->requires_grad) accum(*nd.inputs[0], nd.grad);
        if (nd.inputs[1]->requires_grad) {
            Tensor& g = nd.inputs[1]->ensure_grad();
            for (int64_t r = 0; r < n; ++r)
                for (int64_t c = 0; c < d; ++c) g[c] += nd.grad[r * d + c];
        }
    }));
}

// ---------------------------------------------------------------------------
// matmul
// ---------------------------------------------------------------------------

namespace {

// C += A*B with A [n,k] row-major, B [k,m] row-major. ikj order vectorizes.
void gemm_acc(const double* A, const double* B, double* C, int64_t n, int64_t k, int64_t m) {
    for (int64_t i = 0; i < n; ++i) {
        const double* a = A + i * k;
        double* c = C + i * m;
        for (int64_t p = 0; p < k; ++p) {
            const double av = a[p];
            if (av == 0.0) continue;
            const double* b = B + p * m;
            for (int64_t j = 0; j < m; ++j) c[j] += av * b[j];
        }
    }
}

// C += A*B^T with A [n,k], B [m,k]
void gemm_bt_acc(const double* A, const double* B, double* C, int64_t n, int64_t k, int64_t m) {
    for (int64_t i = 0; i < n; ++i) {
        const double* a = A + i * k;
        double* c = C + i * m;
        for (int64_t j = 0; j < m; ++j) {
            const double* b = B + j * k;
            double acc = 0.0;
            for (int64_t p = 0; p < k; ++p) acc += a[p] * b[p];
            c[j] += acc;
        }
    }
}

// C += A^T*B with A [k,n], B [k,m]
void gemm_at_acc(const double* A, const double* B, double* C, int64_t n, int64_t k, int64_t m) {
    for (int64_t p = 0; p < k; ++p) {
        const double* a = A + p * n;
        const double* b = B + p * m;
        for (int64_t i = 0; i < n; ++i) {
            const double av = a[i];
            if (av == 0.0) continue;
            double* c = C + i * m;
            for (int64_t j = 0; j < m; ++j) c[j] += av * b[j];
        }
    }
}

}  // namespace

Var matmul(const Var& a, const Var& b) {
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    if (av.ndim() != 2 || bv.ndim() != 2 || av.dim(1) != bv.dim(0))
        throw std::invalid_argument("matmul: bad shapes " + av.shape_str() + " x " + bv.shape_str());
    const int64_t n = av.dim(0), k = av.dim(1), m = bv.dim(1);
    Tensor out({n, m});
    gemm_acc(av.ptr(), bv.ptr(), out.ptr(), n, k, m);
    return Var(make_node(std::move(out), {a.node(), b.node()}, [n, k, m](Node& nd) {
        const Tensor& A = nd.inputs[0]->value;
        const Tensor& B = nd.inputs[1]->value;
        if (nd.inputs[0]->requires_grad) {
            // dA = dC * B^T
            gemm_bt_acc(nd.grad.ptr(), B.ptr(), nd.inputs[0]->ensure_grad().ptr(), n, m, k);
        }
        if (nd.inputs[1]->requires_grad) {
            // dB = A^T * dC
            gemm_at_acc(A.ptr(), nd.grad.ptr(), nd.inputs[1]->ensure_grad().ptr(), k, n, m);
        }
    }));
}

Var matmul_bt(const Var& a, const Var& b) {
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    if (av.ndim() != 2 || bv.ndim() != 2 || av.dim(1) != bv.dim(1))
        throw std::invalid_argument("matmul_bt: bad shapes " + av.shape_str() + " x " + bv.shape_str() + "^T");
    const int64_t n = av.dim(0), k = av.dim(1), m = bv.dim(0);
    Tensor out({n, m});
    gemm_bt_acc(av.ptr(), bv.ptr(), out.ptr(), n, k, m);
    return Var(make_node(std::move(out), {a.node(), b.node()}, [n, k, m](Node& nd) {
        const Tensor& A = nd.inputs[0]->value;
        const Tensor& B = nd.inputs[1]->value;
        if (nd.inputs[0]->requires_grad) {
            // dA = dC * B   (dC [n,m], B [m,k])
            gemm_acc(nd.grad.ptr(), B.ptr(), nd.inputs[0]->ensure_grad().ptr(), n, m, k);
        }
        if (nd.inputs[1]->requires_grad) {
            // dB = dC^T * A  (dC [n,m] -> [m,n], A [n,k])
            gemm_at_acc(nd.grad.ptr(), A.ptr(), nd.inputs[1]->ensure_grad().ptr(), m, n, k);
        }
    }));
}

// ---------------------------------------------------------------------------
// nonlinearities
// ---------------------------------------------------------------------------

Var relu(const Var& x) {
    Tensor out = x.value();
    for (auto& v : out.data) v = v > 0.0 ? v : 0.0;
    return Var(make_node(std::move(out), {x.node()}, [](Node& n) {
        if (!n.inputs[0]->requires_grad) return;
        const Tensor& xv = n.inputs[0]->value;
        Tensor& g = n.inputs[0]->ensure_grad();
        for (int64_t i = 0; i < g.numel(); ++i)
            if (xv[i] > 0.0) g[i] += n.grad[i];
    }));
}

Var sigmoid(const Var& x) {
    Tensor out = x.value();
    for (auto& v : out.data) v = 1.0 / (1.0 + std::exp(-v));
    return Var(make_node(std::move(out), {x.node()}, [](Node& n) {
        if (!n.inputs[0]->requires_grad) return;
        Tensor& g = n.inputs[0]->ensure_grad();
        for (int64_t i = 0; i < g.numel(); ++i) {
            const double s = n.value[i];
            g[i] += n.grad[i] * s * (1.0 - s);
        }
    }));
}

void softmax_rows_inplace(Tensor& x) {
    const int64_t n = x.dim(0), m = x.dim(1);
    for (int64_t r = 0; r < n; ++r) {
        double* p = x.ptr() + r * m;
        double mx = p[0];
        for (int64_t j = 1; j < m; ++j) mx = std::max(mx, p[j]);
        double s = 0.0;
        for (int64_t j = 0; j < m; ++j) {
            p[j] = std::exp(p[j] - mx);
            s += p[j];
        }
        for (int64_t j = 0; j < m; ++j) p[j] /= s;
    }
}

Tensor sigmoid_tensor(const Tensor& x) {
    Tensor out = x;
    for (auto& v : out.data) v = 1.0 / (1.0 + std::exp(-v));
    return out;
}

Var softmax_rows(const Var& x) {
    Tensor out = x.value();
    softmax_rows_inplace(out);
    const int64_t m = out.dim(1);
    return Var(make_node(std::move(out), {x.node()}, [m](Node& n) {
        if (!n.inputs[0]->requires_grad) return;
        const int64_t rows = n.value.dim(0);
        Tensor& g = n.inputs[0]->ensure_grad();
        for (int64_t r = 0; r < rows; ++r) {
            const double* y = n.value.ptr() + r * m;
            const double* dy = n.grad.ptr() + r * m;
            double dot = 0.0;
            for (int64_t j = 0; j < m; ++j) dot += y[j] * dy[j];
            double* gp = g.ptr() + r * m;
            for (int64_t j = 0; j < m; ++j) gp[j] += y[j] * (dy[j] - dot);
        }
    }));
}

Var masked_softmax_rows(const Var& x, const std::vector<uint8_t>& allowed) {
    const Tensor& xv = x.value();
    if (xv.ndim() != 2) throw std::invalid_argument("masked_softmax_rows: want 2-d");
    const int64_t n = xv.dim(0), m = xv.dim(1);
    if (static_cast<int64_t>(allowed.size()) != n * m)
        throw std::invalid_argument("masked_softmax_rows: mask size mismatch");

    // Rows with nothing allowed fall back to attending everywhere.
    std::vector<uint8_t> eff = allowed;
    for (int64_t r = 0; r < n; ++r) {
        bool any = false;
        for (int64_t j = 0; j < m; ++j)
            if (eff[r * m + j]) { any = true; break; }
        if (!any)
            for (int64_t j = 0; j < m; ++j) eff[r * m + j] = 1;
    }

    Tensor out({n, m});
    for (int64_t r = 0; r < n; ++r) {
        const double* p = xv.ptr() + r * m;
        const uint8_t* a = eff.data() + r * m;
        double mx = -HUGE_VAL;
        for (int64_t j = 0; j < m; ++j)
            if (a[j]) mx = std::max(mx, p[j]);
        double s = 0.0;
        double* o = out.ptr() + r * m;
        for (int64_t j = 0; j < m; ++j) {
            o[j] = a[j] ? std::exp(p[j] - mx) : 0.0;
            s += o[j];
        }
        for (int64_t j = 0; j < m; ++j) o[j] /= s;
    }
    return Var(make_node(std::move(out), {x.node()}, [m](Node& n2) {
        if (!n2.inputs[0]->requires_grad) return;
        const int64_t rows = n2.value.dim(0);
        Tensor& g = n2.inputs[0]->ensure_grad();
        for (int64_t r = 0; r < rows; ++r) {
            const double* y = n2.value.ptr() + r * m;
            const double* dy = n2.grad.ptr() + r * m;
            double dot = 0.0;
            for (int64_t j = 0; j < m; ++j) dot += y[j] * dy[j];
            double* gp = g.ptr() + r * m;
            for (int64_t j = 0; j < m; ++j) gp[j] += y[j] * (dy[j] - dot);  // y==0 where masked
        }
    }));
}

Var layer_norm_rows(const Var& x, const Var& gamma, const Var& beta, double eps) {
    const Tensor& xv = x.value();
    if (xv.ndim() != 2) throw std::invalid_argument("layer_norm_rows: want 2-d");
    const int64_t n = xv.dim(0), d = xv.dim(1);
    if (gamma.numel() != d || beta.numel() != d)
        throw std::invalid_argument("layer_norm_rows: gamma/beta size");

    Tensor out({n, d});
    Tensor xhat({n, d});
    Tensor inv_std({n});
    for (int64_t r = 0; r < n; ++r) {
        const double* p = xv.ptr() + r * d;
        double mean = 0.0;
        for (int64_t j = 0; j < d; ++j) mean += p[j];
        mean /= static_cast<double>(d);
        double var = 0.0;
        for (int64_t j = 0; j < d; ++j) {
            const double c = p[j] - mean;
            var += c * c;
        }
        var /= static_cast<double>(d);
        const double is = 1.0 / std::sqrt(var + eps);
        inv_std[r] = is;
        double* xh = xhat.ptr() + r * d;
        double* o = out.ptr() + r * d;
        const double* gm = gamma.value().ptr();
        const double* bt = beta.value().ptr();
        for (int64_t j = 0; j < d; ++j) {
            xh[j] = (p[j] - mean) * is;
            o[j] = xh[j] * gm[j] + bt[j];
        }
    }
    auto xh_keep = std::make_shared<Tensor>(std::move(xhat));
    auto is_keep = std::make_shared<Tensor>(std::move(inv_std));
    return Var(make_node(std::move(out), {x.node(), gamma.node(), beta.node()},
                         [d, xh_keep, is_keep](Node& nd) {
        const int64_t rows = nd.value.dim(0);
        const Tensor& xh = *xh_keep;
        const double* gm = nd.inputs[1]->value.ptr();
        if (nd.inputs[1]->requires_grad) {
            Tensor& gg = nd.inputs[1]->ensure_grad();
            for (int64_t r = 0; r < rows; ++r)
                for (int64_t j = 0; j < d; ++j) gg[j] += nd.grad[r * d + j] * xh[r * d + j];
        }
        if (nd.inputs[2]->requires_grad) {
            Tensor& gb = nd.inputs[2]->ensure_grad();
            for (int64_t r = 0; r < rows; ++r)
                for (int64_t j = 0; j < d; ++j) gb[j] += nd.grad[r * d + j];
        }
        if (nd.inputs[0]->requires_grad) {
            Tensor& gx = nd.inputs[0]->ensure_grad();
            for (int64_t r = 0; r < rows; ++r) {
                const double is = (*is_keep)[r];
                const double* dy = nd.grad.ptr() + r * d;
                const double* xhr = xh.ptr() + r * d;
                double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
                for (int64_t j = 0; j < d; ++j) {
                    const double dxh = dy[j] * gm[j];
                    sum_dxhat += dxh;
                    sum_dxhat_xhat += dxh * xhr[j];
                }
                const double inv_d = 1.0 / static_cast<double>(d);
                double* gp = gx.ptr() + r * d;
                for (int64_t j = 0; j < d; ++j) {
                    const double dxh = dy[j] * gm[j];
                    gp[j] += is * (dxh - inv_d * sum_dxhat - xhr[j] * inv_d * sum_dxhat_xhat);
                }
            }
        }
    }));
}

// ---------------------------------------------------------------------------
// shape ops
// ---------------------------------------------------------------------------

Var concat_rows(const std::vector<Var>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_rows: empty");
    const int64_t d = parts[0].value().dim(1);
    int64_t n = 0;
    for (const auto& p : parts) {
        if (p.value().ndim() != 2 || p.value().dim(1) != d)
            throw std::invalid_argument("concat_rows: column mismatch");
        n += p.value().dim(0);
    }
    Tensor out({n, d});
    std::vector<std::shared_ptr<Node>> ins;
    int64_t row = 0;
    for (const auto& p : parts) {
        const Tensor& pv = p.value();
        std::copy(pv.data.begin(), pv.data.end(), out.data.begin() + row * d);
        row += pv.dim(0);
        ins.push_back(p.node());
    }
    return Var(make_node(std::move(out), std::move(ins), [d](Node& nd) {
        int64_t row = 0;
        for (auto& in : nd.inputs) {
            const int64_t r = in->value.dim(0);
            if (in->requires_grad) {
                Tensor& g = in->ensure_grad();
                for (int64_t i = 0; i < r * d; ++i) g[i] += nd.grad[row * d + i];
            }
            row += r;
        }
    }));
}

Var slice_rows(const Var& x, int64_t r0, int64_t r1) {
    const Tensor& xv = x.value();
    if (xv.ndim() != 2 || r0 < 0 || r1 > xv.dim(0) || r0 > r1)
        throw std::invalid_argument("slice_rows: bad range");
    const int64_t d = xv.dim(1);
    Tensor out({r1 - r0, d});
    std::copy(xv.data.begin() + r0 * d, xv.data.begin() + r1 * d, out.data.begin());
    return Var(make_node(std::move(out), {x.node()}, [r0, d](Node& nd) {
        if (!nd.inputs[0]->requires_grad) return;
        Tensor& g = nd.inputs[0]->ensure_grad();
        const int64_t n = nd.value.dim(0);
        for (int64_t i = 0; i < n * d; ++i) g[r0 * d + i] += nd.grad[i];
    }));
}

Var slice_cols(const Var& x, int64_t c0, int64_t c1) {
    const Tensor& xv = x.value();
    if (xv.ndim() != 2 || c0 < 0 || c1 > xv.dim(1) || c0 > c1)
        throw std::invalid_argument("slice_cols: bad range");
    const int64_t n = xv.dim(0), d = xv.dim(1), w = c1 - c0;
    Tensor out({n, w});
    for (int64_t r = 0; r < n; ++r)
        for (int64_t j = 0; j < w; ++j) out[r * w + j] = xv[r * d + c0 + j];
    return Var(make_node(std::move(out), {x.node()}, [c0, d, w](Node& nd) {
        if (!nd.inputs[0]->requires_grad) return;
        Tensor& g = nd.inputs[0]->ensure_grad();
        const int64_t n = nd.value.dim(0);
        for (int64_t r = 0; r < n; ++r)
            for (int64_t j = 0; j < w; ++j) g[r * d + c0 + j] += nd.grad[r * w + j];
    }));
}

Var concat_cols(const std::vector<Var>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_cols: empty");
    const int64_t n = parts[0].value().dim(0);
    int64_t d = 0;
    for (const auto& p : parts) {
        if (p.value().ndim() != 2 || p.value().dim(0) != n)
            throw std::invalid_argument("concat_cols: row mismatch");
        d += p.value().dim(1);
    }
    Tensor out({n, d});
    std::vector<std::shared_ptr<Node>> ins;
    int64_t col = 0;
    for (const auto& p : parts) {
        const Tensor& pv = p.value();
        const int64_t w = pv.dim(1);
        for (int64_t r = 0; r < n; ++r)
            for (int64_t j = 0; j < w; ++j) out[r * d + col + j] = pv[r * w + j];
        col += w;
        ins.push_back(p.node());
    }
    return Var(make_node(std::move(out), std::move(ins), [n, d](Node& nd) {
        int64_t col = 0;
        for (auto& in : nd.inputs) {
            const int64_t w = in->value.dim(1);
            if (in->requires_grad) {
                Tensor& g = in->ensure_grad();
                for (int64_t r = 0; r < n; ++r)
                    for (int64_t j = 0; j < w; ++j) g[r * w + j] += nd.grad[r * d + col + j];
            }
            col += w;
        }
    }));
}

Var gather_rows(const Var& x, const std::vector<int64_t>& idx) {
    const Tensor& xv = x.value();
    if (xv.ndim() != 2) throw std::invalid_argument("gather_rows: want 2-d");
    const int64_t d = xv.dim(1);
    Tensor out({static_cast<int64_t>(idx.size()), d});
    for (size_t i = 0; i < idx.size(); ++i) {
        if (idx[i] < 0 || idx[i] >= xv.dim(0)) throw std::out_of_range("gather_rows: index");
        std::copy(xv.data.begin() + idx[i] * d, xv.data.begin() + (idx[i] + 1) * d,
                  out.data.begin() + static_cast<int64_t>(i) * d);
    }
    auto keep = std::make_shared<std::vector<int64_t>>(idx);
    return Var(make_node(std::move(out), {x.node()}, [d, keep](Node& nd) {
        if (!nd.inputs[0]->requires_grad) return;
        Tensor& g = nd.inputs[0]->ensure_grad();
        for (size_t i = 0; i < keep->size(); ++i) {
            const int64_t r = (*keep)[i];
            for (int64_t j = 0; j < d; ++j) g[r * d + j] += nd.grad[static_cast<int64_t>(i) * d + j];
        }
    }));
}

Var flatten_chw_to_rows(const Var& x) {
    const Tensor& xv = x.value();
    if (xv.ndim() != 3) throw std::invalid_argument("flatten_chw_to_rows: want [C,H,W]");
    const int64_t C = xv.dim(0), H = xv.dim(1), W = xv.dim(2);
    Tensor out({H * W, C});
    for (int64_t c = 0; c < C; ++c)
        for (int64_t p = 0; p < H * W; ++p) out[p * C + c] = xv[c * H * W + p];
    return Var(make_node(std::move(out), {x.node()}, [C, H, W](Node& nd) {
        if (!nd.inputs[0]->requires_grad) return;
        Tensor& g = nd.inputs[0]->ensure_grad();
        for (int64_t c = 0; c < C; ++c)
            for (int64_t p = 0; p < H * W; ++p) g[c * H * W + p] += nd.grad[p * C + c];
    }));
}

Var reshape(const Var& x, std::vector<int64_t> shape) {
    if (Tensor::numel_of(shape) != x.numel()) throw std::invalid_argument("reshape: numel mismatch");
    Tensor out(std::move(shape), x.value().data);
    return Var(make_node(std::move(out), {x.node()}, [](Node& nd) {
        if (!nd.inputs[0]->requires_grad) return;
        accum(*nd.inputs[0], nd.grad);
    }));
}

// ---------------------------------------------------------------------------
// conv / spatial
// ---------------------------------------------------------------------------

Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int pad) {
    const Tensor& xv = x.value();
    const Tensor& wv = w.value();
    if (xv.ndim() != 3 || wv.ndim() != 4 || wv.dim(1) != xv.dim(0))
        throw std::invalid_argument("conv2d: bad shapes");
    const int64_t Cin = xv.dim(0), H = xv.dim(1), W = xv.dim(2);
    const int64_t Cout = wv.dim(0), kh = wv.dim(2), kw = wv.dim(3);
    if (b.numel() != Cout) throw std::invalid_argument("conv2d: bias size");
    const int64_t Ho = (H + 2 * pad - kh) / stride + 1;
    const int64_t Wo = (W + 2 * pad - kw) / stride + 1;

    Tensor out({Cout, Ho, Wo});
    for (int64_t oc = 0; oc < Cout; ++oc) {
        const double bias = b.value()[oc];
        for (int64_t oh = 0; oh < Ho; ++oh) {
            for (int64_t ow = 0; ow < Wo; ++ow) {
                double acc = bias;
                const int64_t ih0 = oh * stride - pad;
                const int64_t iw0 = ow * stride - pad;
                for (int64_t ic = 0; ic < Cin; ++ic) {
                    for (int64_t r = 0; r < kh; ++r) {
                        const int64_t ih = ih0 + r;
                        if (ih < 0 || ih >= H) continue;
                        for (int64_t c = 0; c < kw; ++c) {
                            const int64_t iw = iw0 + c;
                            if (iw < 0 || iw >= W) continue;
                            acc += xv.at(ic, ih, iw) * wv[((oc * Cin + ic) * kh + r) * kw + c];
                        }
                    }
                }
                out.at(oc, oh, ow) = acc;
            }
        }
    }
    return Var(make_node(std::move(out), {x.node(), w.node(), b.node()},
                         [stride, pad, Cin, H, W, Cout, kh, kw, Ho, Wo](Node& nd) {
        const Tensor& xv2 = nd.inputs[0]->value;
        const Tensor& wv2 = nd.inputs[1]->value;
        const bool gx = nd.inputs[0]->requires_grad;
        const bool gw = nd.inputs[1]->requires_grad;
        const bool gb = nd.inputs[2]->requires_grad;
        Tensor* gxp = gx ? &nd.inputs[0]->ensure_grad() : nullptr;
        Tensor* gwp = gw ? &nd.inputs[1]->ensure_grad() : nullptr;
        Tensor* gbp = gb ? &nd.inputs[2]->ensure_grad() : nullptr;
        for (int64_t oc = 0; oc < Cout; ++oc) {
            for (int64_t oh = 0; oh < Ho; ++oh) {
                for (int64_t ow = 0; ow < Wo; ++ow) {
                    const double go = nd.grad[(oc * Ho + oh) * Wo + ow];
                    if (go == 0.0) continue;
                    if (gbp) (*gbp)[oc] += go;
                    const int64_t ih0 = oh * stride - pad;
                    const int64_t iw0 = ow * stride - pad;
                    for (int64_t ic = 0; ic < Cin; ++ic) {
                        for (int64_t r = 0; r < kh; ++r) {
                            const int64_t ih = ih0 + r;
                            if (ih < 0 || ih >= H) continue;
                            for (int64_t c = 0; c < kw; ++c) {
                                const int64_t iw = iw0 + c;
                                if (iw < 0 || iw >= W) continue;
                                const int64_t wi = ((oc * Cin + ic) * kh + r) * kw + c;
                                if (gwp) (*gwp)[wi] += go * xv2.at(ic, ih, iw);
                                if (gxp) (*gxp)[(ic * H + ih) * W + iw] += go * wv2[wi];
                            }
                        }
                    }
                }
            }
        }
    }));
}

Var upsample_nearest2(const Var& x) {
    const Tensor& xv = x.value();
    if (xv.ndim() != 3) throw std::invalid_argument("upsample_nearest2: want [C,H,W]");
    const int64_t C = xv.dim(0), H = xv.dim(1), W = xv.dim(2);
    Tensor out({C, 2 * H, 2 * W});
    for (int64_t c = 0; c < C; ++c)
        for (int64_t h = 0; h < 2 * H; ++h)
            for (int64_t w = 0; w < 2 * W; ++w) out.at(c, h, w) = xv.at(c, h / 2, w / 2);
    return Var(make_node(std::move(out), {x.node()}, [C, H, W](Node& nd) {
        if (!nd.inputs[0]->requires_grad) return;
        Tensor& g = nd.inputs[0]->ensure_grad();
        for (int64_t c = 0; c < C; ++c)
            for (int64_t h = 0; h < 2 * H; ++h)
                for (int64_t w = 0; w < 2 * W; ++w)
                    g[(c * H + h / 2) * W + w / 2] += nd.grad[(c * 2 * H + h) * 2 * W + w];
    }));
}

Var upsample_mask_rows(const Var& x, int64_t H, int64_t W, int factor) {
    const Tensor& xv = x.value();
    if (xv.ndim() != 2 || xv.dim(1) != H * W)
        throw std::invalid_argument("upsample_mask_rows: bad shapes");
    const int64_t n = xv.dim(0);
    const int64_t Ho = H * factor, Wo = W * factor;
    Tensor out({n, Ho * Wo});
    for (int64_t r = 0; r < n; ++r)
        for (int64_t h = 0; h < Ho; ++h)
            for (int64_t w = 0; w < Wo; ++w)
                out[r * Ho * Wo + h * Wo + w] = xv[r * H * W + (h / factor) * W + (w / factor)];
    return Var(make_node(std::move(out), {x.node()}, [H, W, factor](Node& nd) {
        if (!nd.inputs[0]->requires_grad) return;
        const int64_t n = nd.inputs[0]->value.dim(0);
        const int64_t Ho = H * factor, Wo = W * factor;
        Tensor& g = nd.inputs[0]->ensure_grad();
        for (int64_t r = 0; r < n; ++r)
            for (int64_t h = 0; h < Ho; ++h)
                for (int64_t w = 0; w < Wo; ++w)
                    g[r * H * W + (h / factor) * W + (w / factor)] += nd.grad[r * Ho * Wo + h * Wo + w];
    }));
}

// ---------------------------------------------------------------------------
// reductions / losses
// ---------------------------------------------------------------------------

Var sum_all(const Var& x) {
    Tensor out({1});
    for (double v : x.value().data) out[0] += v;
    return Var(make_node(std::move(out), {x.node()}, [](Node& nd) {
        if (!nd.inputs[0]->requires_grad) return;
        Tensor& g = nd.inputs[0]->ensure_grad();
        const double go = nd.grad[0];
        for (auto& v : g.data) v += go;
    }));
}

Var mean_all(const Var& x) {
    const double inv = 1.0 / static_cast<double>(x.numel());
    Tensor out({1});
    for (double v : x.value().data) out[0] += v;
    out[0] *= inv;
    return Var(make_node(std::move(out), {x.node()}, [inv](Node& nd) {
        if (!nd.inputs[0]->requires_grad) return;
        Tensor& g = nd.inputs[0]->ensure_grad();
        const double go = nd.grad[0] * inv;
        for (auto& v : g.data) v += go;
    }));
}

Var cross_entropy(const Var& logits, const std::vector<int64_t>& targets,
                  const std::vector<double>& class_weights) {
    const Tensor& lv = logits.value();
    if (lv.ndim() != 2) throw std::invalid_argument("cross_entropy: want 2-d logits");
    const int64_t n = lv.dim(0), C = lv.dim(1);
    if (static_cast<int64_t>(targets.size()) != n)
        throw std::invalid_argument("cross_entropy: target count");
    if (!class_weights.empty() && static_cast<int64_t>(class_weights.size()) != C)
        throw std::invalid_argument("cross_entropy: class weight count");
    for (int t : targets)
        if (t < 0 || t >= C) throw std::out_of_range("cross_entropy: target out of range");

    // cache softmax for the backward pass
    auto probs = std::make_shared<Tensor>(lv);
    softmax_rows_inplace(*probs);
    double wsum = 0.0, loss = 0.0;
    std::vector<double> wts(static_cast<size_t>(n));
    for (int64_t r = 0; r < n; ++r) {
        const double w = class_weights.empty() ? 1.0 : class_weights[static_cast<size_t>(targets[r])];
        wts[static_cast<size_t>(r)] = w;
        wsum += w;
        // stable log prob
        const double* p = lv.ptr() + r * C;
        double mx = p[0];
        for (int64_t j = 1; j < C; ++j) mx = std::max(mx, p[j]);
        double s = 0.0;
        for (int64_t j = 0; j < C; ++j) s += std::exp(p[j] - mx);
        const double logp = p[targets[r]] - mx - std::log(s);
        loss -= w * logp;
    }
    if (wsum <= 0.0) wsum = 1.0;
    Tensor out({1});
    out[0] = loss / wsum;
    auto tg = std::make_shared<std::vector<int64_t>>(targets);
    auto wk = std::make_shared<std::vector<double>>(std::move(wts));
    return Var(make_node(std::move(out), {logits.node()}, [probs, tg, wk, wsum, C](Node& nd) {
        if (!nd.inputs[0]->requires_grad) return;
        Tensor& g = nd.inputs[0]->ensure_grad();
        const int64_t n = nd.inputs[0]->value.dim(0);
        const double go = nd.grad[0] / wsum;
        for (int64_t r = 0; r < n; ++r) {
            const double w = (*wk)[static_cast<size_t>(r)];
            const double* p = probs->ptr() + r * C;
            double* gp = g.ptr() + r * C;
            const int t = (*tg)[static_cast<size_t>(r)];
            for (int64_t j = 0; j < C; ++j) gp[j] += go * w * (p[j] - (j == t ? 1.0 : 0.0));
        }
    }));
}

Var bce_with_logits_mean(const Var& logits, const Tensor& targets) {
    const Tensor& lv = logits.value();
    check_same_shape(lv, targets, "bce_with_logits_mean");
    const int64_t n = lv.numel();
    double loss = 0.0;
    for (int64_t i = 0; i < n; ++i) {
        const double x = lv[i], t = targets[i];
        // log(1+e^x) computed stably
        const double sp = x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
        loss += sp - t * x;
    }
    Tensor out({1});
    out[0] = loss / static_cast<double>(n);
    auto tk = std::make_shared<Tensor>(targets);
    return Var(make_node(std::move(out), {logits.node()}, [tk, n](Node& nd) {
        if (!nd.inputs[0]->requires_grad) return;
        Tensor& g = nd.inputs[0]->ensure_grad();
        const double go = nd.grad[0] / static_cast<double>(n);
        const Tensor& lv2 = nd.inputs[0]->value;
        for (int64_t i = 0; i < n; ++i) {
            const double s = 1.0 / (1.0 + std::exp(-lv2[i]));
            g[i] += go * (s - (*tk)[i]);
        }
    }));
}

Var dice_loss(const Var& logits, const Tensor& targets, double smooth) {
    const Tensor& lv = logits.value();
    check_same_shape(lv, targets, "dice_loss");
    const int64_t n = lv.numel();
    auto probs = std::make_shared<Tensor>(sigmoid_tensor(lv));
    double inter = 0.0, psum = 0.0, tsum = 0.0;
    for (int64_t i = 0; i < n; ++i) {
        inter += (*probs)[i] * targets[i];
        psum += (*probs)[i];
        tsum += targets[i];
    }
    const double num = 2.0 * inter + smooth;
    const double den = psum + tsum + smooth;
    Tensor out({1});
    out[0] = 1.0 - num / den;
    auto tk = std::make_shared<Tensor>(targets);
    return Var(make_node(std::move(out), {logits.node()}, [probs, tk, num, den, n](Node& nd) {
        if (!nd.inputs[0]->requires_grad) return;
        Tensor& g = nd.inputs[0]->ensure_grad();
        const double go = nd.grad[0];
        for (int64_t i = 0; i < n; ++i) {
            const double p = (*probs)[i];
            const double dnum = 2.0 * (*tk)[i];
            // d(1 - num/den)/dp = -(dnum*den - num)/den^2
            const double dp = -(dnum * den - num) / (den * den);
            g[i] += go * dp * p * (1.0 - p);
        }
    }));
}

Var kl_softmax_vs_const(const Tensor& teacher_logits, const Var& student_logits, double eps) {
    const Tensor& sv = student_logits.value();
    check_same_shape(teacher_logits, sv, "kl_softmax_vs_const");
    if (sv.ndim() != 2) throw std::invalid_argument("kl_softmax_vs_const: want 2-d");
    const int64_t n = sv.dim(0), C = sv.dim(1);

    auto tprob = std::make_shared<Tensor>(teacher_logits);
    softmax_rows_inplace(*tprob);
    auto sprob = std::make_shared<Tensor>(sv);
    softmax_rows_inplace(*sprob);

    double loss = 0.0;
    for (int64_t i = 0; i < n * C; ++i) {
        const double p = (*tprob)[i];
        loss += p * (std::log(p + eps) - std::log((*sprob)[i] + eps));
    }
    Tensor out({1});
    out[0] = loss / static_cast<double>(n);
    return Var(make_node(std::move(out), {student_logits.node()}, [tprob, sprob, n, C, eps](Node& nd) {
        if (!nd.inputs[0]->requires_grad) return;
        Tensor& g = nd.inputs[0]->ensure_grad();
        const double go = nd.grad[0] / static_cast<double>(n);
        // dL/ds_j = sum_k p_k * (-1/(q_k+eps)) * dq_k/ds_j, dq_k/ds_j = q_k(delta - q_j)
        for (int64_t r = 0; r < n; ++r) {
            const double* p = tprob->ptr() + r * C;
            const double* q = sprob->ptr() + r * C;
            double* gp = g.ptr() + r * C;
            double inner = 0.0;  // sum_k p_k q_k / (q_k+eps)
            for (int64_t k = 0; k < C; ++k) inner += p[k] * q[k] / (q[k] + eps);
            for (int64_t j = 0; j < C; ++j) {
                const double direct = p[j] * q[j] / (q[j] + eps);
                gp[j] += go * (q[j] * inner - direct);
            }
        }
    }));
}

Var detach(const Var& x) {
    return Var::constant(x.value());
}

}  // namespace simcis
