#include "simcis/nn.hpp"

#include <cmath>

namespace simcis {

Var MultiheadAttention::forward(const Var& query, const Var& key, const Var& value,
                                const std::vector<uint8_t>* allowed) const {
    const Var q = q_proj.forward(query);
    const Var k = k_proj.forward(key);
    const Var v = v_proj.forward(value);
    const int64_t dh = dim / heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

    std::vector<Var> head_outs;
    head_outs.reserve(heads);
    for (int h = 0; h < heads; ++h) {
        const Var qh = slice_cols(q, h * dh, (h + 1) * dh);
        const Var kh = slice_cols(k, h * dh, (h + 1) * dh);
        const Var vh = slice_cols(v, h * dh, (h + 1) * dh);
        const Var scores = simcis::scale(matmul_bt(qh, kh), scale);
        const Var attn = allowed ? masked_softmax_rows(scores, *allowed) : softmax_rows(scores);
        head_outs.push_back(matmul(attn, vh));
    }
    return out_proj.forward(concat_cols(head_outs));
}

void AdamW::step(ParamStore& ps) {
    for (auto& [name, p] : ps.items()) {
        Node* node = p.node().get();
        if (!node->requires_grad) continue;
        node->ensure_grad();
        auto& st = state_[node];
        if (st.t == 0) {
            st.m = Tensor(node->value.shape);
            st.v = Tensor(node->value.shape);
        }
        st.t += 1;
        const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(st.t));
        const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(st.t));
        double* w = node->value.ptr();
        const double* g = node->grad.ptr();
        double* m = st.m.ptr();
        double* v = st.v.ptr();
        const int64_t n = node->value.numel();
        for (int64_t i = 0; i < n; ++i) {
            m[i] = beta1_ * m[i] + (1.0 - beta1_) * g[i];
            v[i] = beta2_ * v[i] + (1.0 - beta2_) * g[i] * g[i];
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            w[i] -= lr_ * (mhat / (std::sqrt(vhat) + eps_) + wd_ * w[i]);
        }
    }
}

Tensor sinusoidal_position(double h_norm, double w_norm, int64_t d) {
    if (d % 2 != 0) throw std::invalid_argument("sinusoidal_position: dim must be even");
    Tensor out({d});
    const int64_t half = d / 2;
    const double two_pi = 6.283185307179586;
    const double th = h_norm * two_pi;
    const double tw = w_norm * two_pi;
    for (int64_t i = 0; i < half; ++i) {
        const double div = std::pow(10000.0, 2.0 * static_cast<double>(i / 2) / static_cast<double>(half));
        const double ah = th / div;
        const double aw = tw / div;
        out.data[i] = (i % 2 == 0) ? std::sin(ah) : std::cos(ah);
        out.data[half + i] = (i % 2 == 0) ? std::sin(aw) : std::cos(aw);
    }
    return out;
}

}  // namespace simcis
