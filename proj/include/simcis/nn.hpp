#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "simcis/autograd.hpp"
#include "simcis/tensor.hpp"

namespace simcis {

// Ordered, named parameter registry. Checkpointing walks it by name; the
// optimizer walks it by node. Re-registering a name replaces the parameter
// (used when the class head or prototype set grows between stages).
class ParamStore {
public:
    Var add(const std::string& name, Tensor init) {
        Var p = Var::param(std::move(init));
        auto it = index_.find(name);
        if (it != index_.end()) {
            items_[it->second].second = p;
        } else {
            index_[name] = items_.size();
            items_.emplace_back(name, p);
        }
        return p;
    }

    bool has(const std::string& name) const { return index_.count(name) > 0; }

    Var get(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) throw std::out_of_range("ParamStore: no param " + name);
        return items_[it->second].second;
    }

    const std::vector<std::pair<std::string, Var>>& items() const { return items_; }

    void zero_grad() {
        for (auto& [name, p] : items_) p.zero_grad();
    }

    int64_t total_params() const {
        int64_t n = 0;
        for (const auto& [name, p] : items_) n += p.numel();
        return n;
    }

private:
    std::vector<std::pair<std::string, Var>> items_;
    std::unordered_map<std::string, size_t> index_;
};

struct Linear {
    Var w;  // [in, out]
    Var b;  // [out]
    Linear() = default;
    Linear(ParamStore& ps, const std::string& name, int64_t in, int64_t out, Rng& rng) {
        w = ps.add(name + ".w", rng.randn({in, out}, 1.0 / std::sqrt(static_cast<double>(in))));
        b = ps.add(name + ".b", Tensor({out}));
    }
    Var forward(const Var& x) const { return add_rowvec(matmul(x, w), b); }
};

struct LayerNorm {
    Var gamma, beta;
    LayerNorm() = default;
    LayerNorm(ParamStore& ps, const std::string& name, int64_t d) {
        gamma = ps.add(name + ".g", Tensor({d}, 1.0));
        beta = ps.add(name + ".b", Tensor({d}));
    }
    Var forward(const Var& x) const { return layer_norm_rows(x, gamma, beta); }
};

struct Conv2dLayer {
    Var w;  // [out, in, k, k]
    Var b;  // [out]
    int stride = 1, pad = 1;
    Conv2dLayer() = default;
    Conv2dLayer(ParamStore& ps, const std::string& name, int64_t in, int64_t out, int64_t k,
                int stride_, int pad_, Rng& rng)
        : stride(stride_), pad(pad_) {
        const double s = 1.0 / std::sqrt(static_cast<double>(in * k * k));
        w = ps.add(name + ".w", rng.randn({out, in, k, k}, s));
        b = ps.add(name + ".b", Tensor({out}));
    }
    Var forward(const Var& x) const { return conv2d(x, w, b, stride, pad); }
};

// Multi-head scaled dot-product attention. `allowed`, when given, restricts
// each query row to a subset of keys; excluded keys get weight exactly 0.
struct MultiheadAttention {
    Linear q_proj, k_proj, v_proj, out_proj;
    int heads = 1;
    int64_t dim = 0;

    MultiheadAttention() = default;
    MultiheadAttention(ParamStore& ps, const std::string& name, int64_t d, int heads_, Rng& rng)
        : q_proj(ps, name + ".q", d, d, rng),
          k_proj(ps, name + ".k", d, d, rng),
          v_proj(ps, name + ".v", d, d, rng),
          out_proj(ps, name + ".o", d, d, rng),
          heads(heads_),
          dim(d) {
        if (d % heads_ != 0) throw std::invalid_argument("attention: dim % heads != 0");
    }

    Var forward(const Var& query, const Var& key, const Var& value,
                const std::vector<uint8_t>* allowed = nullptr) const;
};

// Decoupled-weight-decay Adam. State is keyed by parameter node, so grown
// (re-registered) parameters start with fresh moments.
class AdamW {
public:
    AdamW(double lr, double weight_decay, double beta1 = 0.9, double beta2 = 0.999,
          double eps = 1e-8)
        : lr_(lr), wd_(weight_decay), beta1_(beta1), beta2_(beta2), eps_(eps) {}

    void set_lr(double lr) { lr_ = lr; }
    double lr() const { return lr_; }

    void step(ParamStore& ps);

private:
    struct Moments {
        Tensor m, v;
        int64_t t = 0;
    };
    double lr_, wd_, beta1_, beta2_, eps_;
    std::unordered_map<Node*, Moments> state_;
};

// 2-d sinusoidal position code for a normalized (h,w) location; D must be even.
Tensor sinusoidal_position(double h_norm, double w_norm, int64_t d);

}  // namespace simcis
