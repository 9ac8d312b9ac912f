#include <doctest.h>

#include <cmath>
#include <functional>
#include <vector>

#include "grad_check.hpp"
#include "simcis/autograd.hpp"

using namespace simcis;

namespace {

Var reduce(const Var& x) { return mean_all(x); }

}  // namespace

TEST_CASE("add/sub/mul/scale gradients") {
    Rng rng(7);
    Var a = Var::param(rng.randn({3, 4}));
    Var b = Var::param(rng.randn({3, 4}));
    check_grad({a, b}, [&] { return reduce(add(a, b)); });
    check_grad({a, b}, [&] { return reduce(sub(a, b)); });
    check_grad({a, b}, [&] { return reduce(mul(a, b)); });
    check_grad({a}, [&] { return reduce(scale(a, -2.5)); });
}

TEST_CASE("matmul and matmul_bt gradients") {
    Rng rng(11);
    Var a = Var::param(rng.randn({3, 5}));
    Var b = Var::param(rng.randn({5, 4}));
    check_grad({a, b}, [&] { return reduce(matmul(a, b)); });
    Var c = Var::param(rng.randn({6, 5}));
    check_grad({a, c}, [&] { return reduce(matmul_bt(a, c)); });
}

TEST_CASE("matmul forward value") {
    Var a = Var::constant(Tensor({2, 2}, {1, 2, 3, 4}));
    Var b = Var::constant(Tensor({2, 2}, {5, 6, 7, 8}));
    Tensor y = matmul(a, b).value();
    CHECK(y.at(0, 0) == doctest::Approx(19));
    CHECK(y.at(0, 1) == doctest::Approx(22));
    CHECK(y.at(1, 0) == doctest::Approx(43));
    CHECK(y.at(1, 1) == doctest::Approx(50));
}

TEST_CASE("add_rowvec broadcasts and backpropagates") {
    Rng rng(13);
    Var x = Var::param(rng.randn({4, 3}));
    Var b = Var::param(rng.randn({3}));
    check_grad({x, b}, [&] { return reduce(add_rowvec(x, b)); });
}

TEST_CASE("relu and sigmoid gradients") {
    Rng rng(17);
    Var x = Var::param(rng.randn({5, 5}));
    // keep away from the relu kink
    for (auto& v : x.value().data)
        if (std::abs(v) < 1e-3) v += 0.1;
    check_grad({x}, [&] { return reduce(relu(x)); });
    check_grad({x}, [&] { return reduce(sigmoid(x)); });
}

TEST_CASE("softmax_rows sums to one and matches fd") {
    Rng rng(19);
    Var x = Var::param(rng.randn({4, 6}));
    Tensor y = softmax_rows(x).value();
    for (int64_t r = 0; r < 4; ++r) {
        double s = 0;
        for (int64_t c = 0; c < 6; ++c) s += y.at(r, c);
        CHECK(s == doctest::Approx(1.0));
    }
    Var w = Var::constant(rng.randn({4, 6}));
    check_grad({x}, [&] { return reduce(mul(softmax_rows(x), w)); });
}

TEST_CASE("masked softmax zeroes excluded keys exactly") {
    Rng rng(23);
    Var x = Var::param(rng.randn({2, 5}));
    std::vector<uint8_t> allowed = {1, 0, 1, 0, 1,   // row 0
                                    0, 0, 0, 0, 0};  // row 1: fully masked -> full softmax
    Tensor y = masked_softmax_rows(x, allowed).value();
    CHECK(y.at(0, 1) == 0.0);
    CHECK(y.at(0, 3) == 0.0);
    double s0 = 0, s1 = 0;
    for (int64_t c = 0; c < 5; ++c) {
        s0 += y.at(0, c);
        s1 += y.at(1, c);
    }
    CHECK(s0 == doctest::Approx(1.0));
    CHECK(s1 == doctest::Approx(1.0));
    CHECK(y.at(1, 2) > 0.0);

    Var w = Var::constant(rng.randn({2, 5}));
    check_grad({x}, [&] { return reduce(mul(masked_softmax_rows(x, allowed), w)); });
}

TEST_CASE("layer_norm_rows gradients") {
    Rng rng(29);
    Var x = Var::param(rng.randn({3, 8}));
    Var g = Var::param(rng.randn({8}, 0.5));
    for (auto& v : g.value().data) v += 1.0;
    Var b = Var::param(rng.randn({8}));
    Var w = Var::constant(rng.randn({3, 8}));
    check_grad({x, g, b}, [&] { return reduce(mul(layer_norm_rows(x, g, b), w)); }, 1e-5, 5e-6);
}

TEST_CASE("concat and slice gradients") {
    Rng rng(31);
    Var a = Var::param(rng.randn({2, 3}));
    Var b = Var::param(rng.randn({4, 3}));
    check_grad({a, b}, [&] { return reduce(concat_rows({a, b})); });
    Var c = Var::param(rng.randn({2, 5}));
    check_grad({a, c}, [&] { return reduce(concat_cols({a, c})); });
    Var x = Var::param(rng.randn({6, 4}));
    check_grad({x}, [&] { return reduce(slice_rows(x, 1, 3)); });
    check_grad({x}, [&] { return reduce(slice_cols(x, 1, 2)); });
}

TEST_CASE("gather_rows picks rows and routes gradients") {
    Rng rng(37);
    Var x = Var::param(rng.randn({5, 3}));
    std::vector<int64_t> idx = {4, 0, 4, 2};
    Tensor y = gather_rows(x, idx).value();
    CHECK(y.dim(0) == 4);
    for (int64_t c = 0; c < 3; ++c) {
        CHECK(y.at(0, c) == x.value().at(4, c));
        CHECK(y.at(2, c) == x.value().at(4, c));
    }
    check_grad({x}, [&] { return reduce(gather_rows(x, idx)); });
}

TEST_CASE("flatten_chw_to_rows layout") {
    Tensor img({2, 2, 2});
    // channel 0: [[1,2],[3,4]], channel 1: [[5,6],[7,8]]
    img.data = {1, 2, 3, 4, 5, 6, 7, 8};
    Var x = Var::param(img);
    Tensor rows = flatten_chw_to_rows(x).value();
    CHECK(rows.dim(0) == 4);
    CHECK(rows.dim(1) == 2);
    // row for (h=0,w=1) must be (2,6)
    CHECK(rows.at(1, 0) == 2);
    CHECK(rows.at(1, 1) == 6);
    check_grad({x}, [&] { return reduce(flatten_chw_to_rows(x)); });
}

TEST_CASE("conv2d matches hand conv and fd") {
    Rng rng(41);
    Var x = Var::param(rng.randn({2, 5, 5}));
    Var w = Var::param(rng.randn({3, 2, 3, 3}, 0.5));
    Var b = Var::param(rng.randn({3}));
    Var y = conv2d(x, w, b, 1, 1);
    CHECK(y.shape() == std::vector<int64_t>{3, 5, 5});
    check_grad({x, w, b}, [&] { return reduce(conv2d(x, w, b, 1, 1)); });

    Var y2 = conv2d(x, w, b, 2, 1);
    CHECK(y2.shape() == std::vector<int64_t>{3, 3, 3});
    check_grad({x, w, b}, [&] { return reduce(conv2d(x, w, b, 2, 1)); });
}

TEST_CASE("conv2d identity kernel passes input through") {
    Tensor x({1, 3, 3});
    for (int i = 0; i < 9; ++i) x.data[i] = i + 1;
    Tensor w({1, 1, 3, 3});
    w.at(0, 1, 1) = 1.0;  // delta kernel viewed as [in,k,k] block of out 0
    Var y = conv2d(Var::constant(x), Var::constant(w), Var::constant(Tensor({1})), 1, 1);
    for (int i = 0; i < 9; ++i) CHECK(y.value()[i] == doctest::Approx(x.data[i]));
}

TEST_CASE("upsample_nearest2 repeats pixels") {
    Tensor x({1, 2, 2});
    x.data = {1, 2, 3, 4};
    Var y = upsample_nearest2(Var::constant(x));
    CHECK(y.shape() == std::vector<int64_t>{1, 4, 4});
    CHECK(y.value().at(0, 0, 1) == 1);
    CHECK(y.value().at(0, 1, 1) == 1);
    CHECK(y.value().at(0, 3, 3) == 4);
    Var p = Var::param(x);
    check_grad({p}, [&] { return reduce(upsample_nearest2(p)); });
}

TEST_CASE("upsample_mask_rows expands per-row mask grids") {
    Rng rng(43);
    Var m = Var::param(rng.randn({3, 4}));  // 3 masks at 2x2
    Var y = upsample_mask_rows(m, 2, 2, 2);
    CHECK(y.shape() == std::vector<int64_t>{3, 16});
    CHECK(y.value().at(0, 0) == m.value().at(0, 0));
    CHECK(y.value().at(0, 1) == m.value().at(0, 0));
    CHECK(y.value().at(0, 4) == m.value().at(0, 0));
    CHECK(y.value().at(0, 5) == m.value().at(0, 0));
    check_grad({m}, [&] { return reduce(upsample_mask_rows(m, 2, 2, 2)); });
}

TEST_CASE("cross_entropy matches closed form for uniform logits") {
    int64_t k = 5;
    Var logits = Var::param(Tensor({3, k}));
    std::vector<int64_t> targets = {0, 2, 4};
    Var loss = cross_entropy(logits, targets, {});
    CHECK(loss.scalar() == doctest::Approx(std::log(static_cast<double>(k))));
    Rng rng(47);
    logits = Var::param(rng.randn({3, k}));
    check_grad({logits}, [&] { return cross_entropy(logits, targets, {}); });
}

TEST_CASE("cross_entropy applies class weights as weighted mean") {
    Rng rng(53);
    Var logits = Var::param(rng.randn({2, 3}));
    std::vector<int64_t> targets = {0, 2};
    std::vector<double> w = {1.0, 1.0, 0.1};
    // weighted mean: (1*l0 + 0.1*l1) / 1.1
    auto ce_row = [&](int64_t r, int64_t t) {
        double mx = -1e300, s = 0;
        for (int64_t c = 0; c < 3; ++c) mx = std::max(mx, logits.value().at(r, c));
        for (int64_t c = 0; c < 3; ++c) s += std::exp(logits.value().at(r, c) - mx);
        return -(logits.value().at(r, t) - mx - std::log(s));
    };
    const double expect = (1.0 * ce_row(0, 0) + 0.1 * ce_row(1, 2)) / 1.1;
    CHECK(cross_entropy(logits, targets, w).scalar() == doctest::Approx(expect));
    check_grad({logits}, [&] { return cross_entropy(logits, targets, w); });
}

TEST_CASE("bce_with_logits_mean matches closed form and fd") {
    Var x = Var::param(Tensor({1, 2}, {0.0, 0.0}));
    Tensor t({1, 2}, {1.0, 0.0});
    CHECK(bce_with_logits_mean(x, t).scalar() == doctest::Approx(std::log(2.0)));
    Rng rng(59);
    Var y = Var::param(rng.randn({3, 7}));
    Tensor targets({3, 7});
    for (auto& v : targets.data) v = rng.uniform() < 0.5 ? 0.0 : 1.0;
    check_grad({y}, [&] { return bce_with_logits_mean(y, targets); });
}

TEST_CASE("dice_loss is zero on perfect prediction and matches fd") {
    Tensor t({1, 4}, {1.0, 0.0, 1.0, 1.0});
    Var hard = Var::param(Tensor({1, 4}, {50.0, -50.0, 50.0, 50.0}));
    CHECK(dice_loss(hard, t).scalar() == doctest::Approx(0.0).epsilon(1e-6));
    Rng rng(61);
    Var x = Var::param(rng.randn({2, 6}));
    Tensor targets({2, 6});
    for (auto& v : targets.data) v = rng.uniform() < 0.5 ? 0.0 : 1.0;
    check_grad({x}, [&] { return dice_loss(x, targets); });
}

TEST_CASE("kl_softmax_vs_const is zero at equality, positive otherwise") {
    Tensor teacher({2, 3}, {1.0, 2.0, 3.0, -1.0, 0.0, 1.0});
    Var student = Var::param(teacher);
    CHECK(kl_softmax_vs_const(teacher, student).scalar() == doctest::Approx(0.0).epsilon(1e-12));

    Rng rng(67);
    Var s2 = Var::param(rng.randn({2, 3}));
    CHECK(kl_softmax_vs_const(teacher, s2).scalar() > 0.0);
    check_grad({s2}, [&] { return kl_softmax_vs_const(teacher, s2); }, 1e-5, 1e-5);
}

TEST_CASE("sum_all and mean_all") {
    Var x = Var::param(Tensor({2, 3}, {1, 2, 3, 4, 5, 6}));
    CHECK(sum_all(x).scalar() == doctest::Approx(21.0));
    CHECK(mean_all(x).scalar() == doctest::Approx(3.5));
    check_grad({x}, [&] { return sum_all(x); });
}

TEST_CASE("detach blocks gradient flow") {
    Var x = Var::param(Tensor({1, 2}, {3.0, 4.0}));
    Var y = mul(detach(x), x);
    x.zero_grad();
    backward(sum_all(y));
    CHECK(x.grad()[0] == doctest::Approx(3.0));  // only the live factor
    CHECK(x.grad()[1] == doctest::Approx(4.0));
}

TEST_CASE("backward accumulates through shared subexpressions") {
    Var x = Var::param(Tensor({1, 1}, {2.0}));
    Var y = add(mul(x, x), x);  // x^2 + x, d/dx = 2x + 1 = 5
    x.zero_grad();
    backward(sum_all(y));
    CHECK(x.grad()[0] == doctest::Approx(5.0));
}

TEST_CASE("reshape preserves data and gradients") {
    Rng rng(71);
    Var x = Var::param(rng.randn({2, 6}));
    Var y = reshape(x, {3, 4});
    CHECK(y.value()[5] == x.value()[5]);
    check_grad({x}, [&] { return reduce(reshape(x, {3, 4})); });
}

TEST_CASE("rng normal stream is reproducible and serializable") {
    Rng a(123), b(123);
    for (int i = 0; i < 100; ++i) CHECK(a.normal() == b.normal());

    std::string blob = a.serialize();
    double next_a = a.normal();
    Rng c(0);
    c.deserialize(blob);
    CHECK(c.normal() == next_a);
}
