#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "simcis/tensor.hpp"

namespace simcis {

// Reverse-mode autodiff over Tensor. Every op builds a Node holding the
// forward value and a closure that pushes the node's gradient into its
// inputs. backward() runs the closures in reverse topological order.
struct Node {
    Tensor value;
    Tensor grad;  // allocated lazily, same shape as value
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> inputs;
    std::function<void(Node&)> backward_fn;  // empty for leaves

    Tensor& ensure_grad() {
        if (grad.shape != value.shape) grad = Tensor(value.shape);
        return grad;
    }
};

class Var {
public:
    Var() = default;
    explicit Var(std::shared_ptr<Node> n) : node_(std::move(n)) {}

    static Var constant(Tensor t) {
        auto n = std::make_shared<Node>();
        n->value = std::move(t);
        n->requires_grad = false;
        return Var(n);
    }

    static Var param(Tensor t) {
        auto n = std::make_shared<Node>();
        n->value = std::move(t);
        n->requires_grad = true;
        return Var(n);
    }

    bool defined() const { return node_ != nullptr; }
    const Tensor& value() const { return node_->value; }
    Tensor& value() { return node_->value; }
    Tensor& grad() { return node_->ensure_grad(); }
    bool requires_grad() const { return node_ && node_->requires_grad; }
    std::shared_ptr<Node> node() const { return node_; }

    const std::vector<int64_t>& shape() const { return node_->value.shape; }
    int64_t dim(int i) const { return node_->value.dim(i); }
    int64_t numel() const { return node_->value.numel(); }
    double scalar() const { return node_->value[0]; }

    void zero_grad() {
        if (node_) node_->ensure_grad().fill(0.0);
    }

private:
    std::shared_ptr<Node> node_;
};

// Runs reverse-mode accumulation from a scalar root. Seeds d(root)/d(root)=1.
void backward(const Var& root);

// ---- elementwise / linear algebra ----
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var add_rowvec(const Var& x, const Var& v);     // x [n,d] + v [d]
Var matmul(const Var& a, const Var& b);         // [n,k]x[k,m]
Var matmul_bt(const Var& a, const Var& b);      // a [n,k] * b^T, b [m,k]
Var relu(const Var& x);
Var sigmoid(const Var& x);
Var softmax_rows(const Var& x);
// Softmax over each row restricted to allowed entries; disallowed entries get
// weight exactly 0. Rows with no allowed entry fall back to full softmax.
Var masked_softmax_rows(const Var& x, const std::vector<uint8_t>& allowed);
Var layer_norm_rows(const Var& x, const Var& gamma, const Var& beta, double eps = 1e-5);

// ---- shape ops ----
Var concat_rows(const std::vector<Var>& parts);
Var slice_rows(const Var& x, int64_t r0, int64_t r1);
Var slice_cols(const Var& x, int64_t c0, int64_t c1);
Var concat_cols(const std::vector<Var>& parts);
Var gather_rows(const Var& x, const std::vector<int64_t>& idx);
Var flatten_chw_to_rows(const Var& x);  // [C,H,W] -> [H*W, C]
Var reshape(const Var& x, std::vector<int64_t> shape);

// ---- conv / spatial ----
Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int pad);
Var upsample_nearest2(const Var& x);  // [C,H,W] -> [C,2H,2W]
// Nearest-neighbour upsample of per-row masks: x [n, H*W] -> [n, fH*fW].
Var upsample_mask_rows(const Var& x, int64_t H, int64_t W, int factor);

// ---- reductions / losses ----
Var sum_all(const Var& x);
Var mean_all(const Var& x);
// Weighted-mean cross entropy over rows of logits; class_weights may be empty
// (all ones). Matches sum_i w_ti * nll_i / sum_i w_ti.
Var cross_entropy(const Var& logits, const std::vector<int64_t>& targets,
                  const std::vector<double>& class_weights = {});
Var bce_with_logits_mean(const Var& logits, const Tensor& targets);
Var dice_loss(const Var& logits, const Tensor& targets, double smooth = 1.0);
// Mean over rows of KL(softmax(teacher) || softmax(student)); the teacher is
// a plain tensor so no gradient can reach it. eps guards log underflow.
Var kl_softmax_vs_const(const Tensor& teacher_logits, const Var& student_logits, double eps = 1e-8);
Var detach(const Var& x);

// Raw-tensor helpers shared with inference paths.
void softmax_rows_inplace(Tensor& x);
Tensor sigmoid_tensor(const Tensor& x);

}  // namespace simcis
