#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "grad_check.hpp"
#include "simcis/matching_losses.hpp"

using namespace simcis;

namespace {

// brute force over all injective row->col maps
double brute_force_cost(const std::vector<std::vector<double>>& cost) {
    const int n = static_cast<int>(cost.size());
    const int m = static_cast<int>(cost[0].size());
    std::vector<int> cols(static_cast<size_t>(m));
    std::iota(cols.begin(), cols.end(), 0);
    double best = 1e300;
    std::sort(cols.begin(), cols.end());
    do {
        double s = 0;
        for (int i = 0; i < n; ++i) s += cost[static_cast<size_t>(i)][static_cast<size_t>(cols[static_cast<size_t>(i)])];
        best = std::min(best, s);
    } while (std::next_permutation(cols.begin(), cols.end()));
    return best;
}

PredictionSet make_preds(Rng& rng, int n, int k, int h, int w, double scale = 1.0) {
    PredictionSet p;
    p.class_logits = Var::param(rng.randn({n, k + 1}, scale));
    p.mask_logits = Var::param(rng.randn({n, static_cast<int64_t>(h) * w}, scale));
    p.height = h;
    p.width = w;
    p.num_classes = k;
    return p;
}

Segment make_segment(int cls, std::vector<uint8_t> mask) {
    Segment s;
    s.class_id = cls;
    s.mask = std::move(mask);
    return s;
}

}  // namespace

TEST_CASE("assignment solver on the 2x2 hand case") {
    auto [cols, total] = solve_assignment({{1, 2}, {3, 0}});
    CHECK(cols[0] == 0);
    CHECK(cols[1] == 1);
    CHECK(total == doctest::Approx(1.0));
}

TEST_CASE("assignment solver equals permutation brute force on square matrices") {
    Rng rng(211);
    for (int trial = 0; trial < 150; ++trial) {
        const int n = static_cast<int>(rng.uniform_int(1, 6));
        std::vector<std::vector<double>> cost(static_cast<size_t>(n),
                                              std::vector<double>(static_cast<size_t>(n)));
        for (auto& row : cost)
            for (auto& c : row) c = rng.uniform(-5.0, 5.0);
        auto [cols, total] = solve_assignment(cost);
        // validity: a permutation
        std::vector<char> seen(static_cast<size_t>(n), 0);
        for (int c : cols) {
            CHECK(c >= 0);
            CHECK(!seen[static_cast<size_t>(c)]);
            seen[static_cast<size_t>(c)] = 1;
        }
        CHECK(total == doctest::Approx(brute_force_cost(cost)).epsilon(1e-9));
    }
}

TEST_CASE("assignment solver handles rectangular matrices") {
    Rng rng(223);
    for (int trial = 0; trial < 100; ++trial) {
        const int n = static_cast<int>(rng.uniform_int(1, 4));
        const int m = n + static_cast<int>(rng.uniform_int(1, 3));
        std::vector<std::vector<double>> cost(static_cast<size_t>(n),
                                              std::vector<double>(static_cast<size_t>(m)));
        for (auto& row : cost)
            for (auto& c : row) c = rng.uniform(-2.0, 2.0);
        auto [cols, total] = solve_assignment(cost);
        std::vector<char> seen(static_cast<size_t>(m), 0);
        for (int c : cols) {
            CHECK(!seen[static_cast<size_t>(c)]);
            seen[static_cast<size_t>(c)] = 1;
        }
        CHECK(total == doctest::Approx(brute_force_cost(cost)).epsilon(1e-9));
    }
}

TEST_CASE("hungarian match picks the query that nails the gt") {
    Rng rng(227);
    const int h = 4, w = 4;
    PredictionSet p = make_preds(rng, 3, 5, h, w, 0.01);
    // query 2 exactly predicts class 1 and the gt mask
    std::vector<uint8_t> gtmask(h * w, 0);
    for (int i = 0; i < 8; ++i) gtmask[static_cast<size_t>(i)] = 1;
    for (int c = 0; c <= 5; ++c) p.class_logits.value().at(2, c) = c == 1 ? 10.0 : -10.0;
    for (int i = 0; i < h * w; ++i) p.mask_logits.value().at(2, i) = gtmask[static_cast<size_t>(i)] ? 10.0 : -10.0;

    Annotation ann;
    ann.height = h;
    ann.width = w;
    ann.segments.push_back(make_segment(1, gtmask));

    Assignment a = hungarian_match(p, ann);
    REQUIRE(a.pairs.size() == 1);
    CHECK(a.pairs[0].first == 2);
    CHECK(a.pairs[0].second == 0);
}

TEST_CASE("criterion: all queries unmatched with uniform logits gives ln(K+1)") {
    const int n = 4, k = 6;
    PredictionSet p;
    p.class_logits = Var::param(Tensor({n, k + 1}));
    p.mask_logits = Var::param(Tensor({n, 4}));
    p.height = 2;
    p.width = 2;
    p.num_classes = k;
    Annotation ann;
    ann.height = 2;
    ann.width = 2;
    CriterionOutput out = set_criterion(p, ann, {});
    CHECK(out.l_class.scalar() == doctest::Approx(std::log(static_cast<double>(k + 1))));
    CHECK(out.l_mask.scalar() == doctest::Approx(0.0));
}

TEST_CASE("criterion: saturated exact prediction drives mask loss to zero") {
    Rng rng(229);
    const int h = 4, w = 4;
    PredictionSet p = make_preds(rng, 2, 3, h, w, 0.01);
    std::vector<uint8_t> gtmask(h * w, 0);
    for (int i = 0; i < 6; ++i) gtmask[static_cast<size_t>(i)] = 1;
    for (int i = 0; i < h * w; ++i) p.mask_logits.value().at(0, i) = gtmask[static_cast<size_t>(i)] ? 60.0 : -60.0;

    Annotation ann;
    ann.height = h;
    ann.width = w;
    ann.segments.push_back(make_segment(2, gtmask));
    Assignment a;
    a.pairs = {{0, 0}};
    CriterionOutput out = set_criterion(p, ann, a);
    CHECK(out.l_mask.scalar() == doctest::Approx(0.0).epsilon(1e-6));
}

TEST_CASE("criterion: one-query 2x2 mask matches hand arithmetic") {
    PredictionSet p;
    p.class_logits = Var::param(Tensor({1, 3}, {0.0, 0.0, 0.0}));
    p.mask_logits = Var::param(Tensor({1, 4}, {1.0, -1.0, 0.5, 0.0}));
    p.height = 2;
    p.width = 2;
    p.num_classes = 2;
    Annotation ann;
    ann.height = 2;
    ann.width = 2;
    ann.segments.push_back(make_segment(0, {1, 0, 0, 1}));
    Assignment a;
    a.pairs = {{0, 0}};
    LossWeights w;
    CriterionOutput out = set_criterion(p, ann, a, w);

    auto sp = [](double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); };
    const double bce = (sp(1.0) - 1.0 + sp(-1.0) + sp(0.5) + sp(0.0) - 0.0) / 4.0;
    auto sg = [](double x) { return 1.0 / (1.0 + std::exp(-x)); };
    const double num = sg(1.0) * 1 + sg(-1.0) * 0 + sg(0.5) * 0 + sg(0.0) * 1;
    const double den = sg(1.0) + sg(-1.0) + sg(0.5) + sg(0.0) + 2.0;
    const double dice = 1.0 - (2.0 * num + 1.0) / (den + 1.0);
    CHECK(out.l_mask.scalar() == doctest::Approx(w.bce * bce + w.dice * dice).epsilon(1e-12));

    // matched query target = class 0 with uniform logits
    CHECK(out.l_class.scalar() == doctest::Approx(std::log(3.0)));
}

TEST_CASE("criterion gradients match finite differences through a fixed matching") {
    Rng rng(233);
    const int h = 4, w = 4;
    PredictionSet p = make_preds(rng, 4, 3, h, w);
    Annotation ann;
    ann.height = h;
    ann.width = w;
    std::vector<uint8_t> m1(h * w, 0), m2(h * w, 0);
    for (int i = 0; i < 5; ++i) m1[static_cast<size_t>(i)] = 1;
    for (int i = 8; i < 16; ++i) m2[static_cast<size_t>(i)] = 1;
    ann.segments.push_back(make_segment(0, m1));
    ann.segments.push_back(make_segment(2, m2));

    const Assignment a = hungarian_match(p, ann);
    auto loss_fn = [&] {
        CriterionOutput out = set_criterion(p, ann, a);
        return add(scale(out.l_class, 2.0), out.l_mask);
    };
    check_grad({p.class_logits, p.mask_logits}, loss_fn, 1e-5, 1e-3);
}

TEST_CASE("pseudo fusion leaves annotation unchanged without confident predictions") {
    Rng rng(239);
    PredictionSet p = make_preds(rng, 3, 4, 4, 4, 0.01);  // near-uniform logits
    Annotation gt;
    gt.height = 4;
    gt.width = 4;
    std::vector<uint8_t> m(16, 0);
    m[0] = m[1] = 1;
    gt.segments.push_back(make_segment(3, m));
    Annotation fused = fuse_pseudo_labels(gt, p, {0, 1}, 0.5);
    CHECK(fused.segments.size() == gt.segments.size());
}

TEST_CASE("pseudo fusion adds a confident disjoint old segment") {
    Rng rng(241);
    PredictionSet p = make_preds(rng, 2, 4, 4, 4, 0.01);
    // query 0 confidently predicts old class 1 on the bottom row
    for (int c = 0; c <= 4; ++c) p.class_logits.value().at(0, c) = c == 1 ? 8.0 : -8.0;
    for (int i = 0; i < 16; ++i) p.mask_logits.value().at(0, i) = i >= 12 ? 9.0 : -9.0;

    Annotation gt;
    gt.height = 4;
    gt.width = 4;
    std::vector<uint8_t> m(16, 0);
    m[0] = m[1] = 1;
    gt.segments.push_back(make_segment(3, m));

    Annotation fused = fuse_pseudo_labels(gt, p, {1}, 0.5);
    REQUIRE(fused.segments.size() == 2);
    CHECK(fused.segments[1].class_id == 1);
    CHECK(fused.segments[1].area() == 4);
    for (int i = 12; i < 16; ++i) CHECK(fused.segments[1].mask[static_cast<size_t>(i)] == 1);
}

TEST_CASE("pseudo fusion clips overlap in favor of ground truth") {
    Rng rng(251);
    PredictionSet p = make_preds(rng, 1, 4, 4, 4, 0.01);
    for (int c = 0; c <= 4; ++c) p.class_logits.value().at(0, c) = c == 2 ? 8.0 : -8.0;
    // predicted mask covers pixels 0..9 (10 px)
    for (int i = 0; i < 16; ++i) p.mask_logits.value().at(0, i) = i < 10 ? 9.0 : -9.0;

    Annotation gt;
    gt.height = 4;
    gt.width = 4;
    std::vector<uint8_t> m(16, 0);
    for (int i = 0; i < 6; ++i) m[static_cast<size_t>(i)] = 1;  // 60% of the prediction
    gt.segments.push_back(make_segment(3, m));

    Annotation fused = fuse_pseudo_labels(gt, p, {2}, 0.5);
    REQUIRE(fused.segments.size() == 2);

    // pixel oracle: predicted minus gt
    for (int i = 0; i < 16; ++i) {
        const bool expect = i >= 6 && i < 10;
        CHECK(fused.segments[1].mask[static_cast<size_t>(i)] == (expect ? 1 : 0));
    }
    // gt segment untouched
    CHECK(fused.segments[0].mask == m);
}

TEST_CASE("pseudo fusion keeps accepted segments disjoint") {
    Rng rng(257);
    PredictionSet p = make_preds(rng, 2, 3, 4, 4, 0.01);
    // both queries predict overlapping regions of different old classes
    for (int c = 0; c <= 3; ++c) {
        p.class_logits.value().at(0, c) = c == 0 ? 9.0 : -9.0;
        p.class_logits.value().at(1, c) = c == 1 ? 7.0 : -7.0;
    }
    for (int i = 0; i < 16; ++i) {
        p.mask_logits.value().at(0, i) = i < 8 ? 9.0 : -9.0;
        p.mask_logits.value().at(1, i) = (i >= 4 && i < 12) ? 9.0 : -9.0;
    }
    Annotation gt;
    gt.height = 4;
    gt.width = 4;

    Annotation fused = fuse_pseudo_labels(gt, p, {0, 1}, 0.5);
    REQUIRE(fused.segments.size() == 2);
    std::vector<int> cover(16, 0);
    for (const Segment& s : fused.segments)
        for (size_t i = 0; i < 16; ++i) cover[i] += s.mask[i];
    for (int v : cover) CHECK(v <= 1);
    // higher-confidence query 0 wins the contested pixels 4..7
    CHECK(fused.segments[0].class_id == 0);
    CHECK(fused.segments[0].area() == 8);
    CHECK(fused.segments[1].area() == 4);
}
