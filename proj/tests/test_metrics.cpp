#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "simcis/metrics.hpp"

using namespace simcis;

namespace {

Segment rect_segment(int cls, int y0, int x0, int y1, int x1, int H = 16, int W = 16) {
    Segment s;
    s.class_id = cls;
    s.mask.assign(static_cast<size_t>(H) * W, 0);
    for (int y = y0; y < y1; ++y)
        for (int x = x0; x < x1; ++x) s.mask[static_cast<size_t>(y) * W + x] = 1;
    return s;
}

}  // namespace

TEST_CASE("pq is 1.0 when prediction equals ground truth") {
    std::vector<Segment> gt = {rect_segment(0, 1, 1, 5, 5), rect_segment(2, 8, 8, 14, 14)};
    PQResult r = panoptic_quality(gt, gt);
    CHECK(r.pq == doctest::Approx(1.0));
    for (auto& [cls, pq] : r.per_class) CHECK(pq == doctest::Approx(1.0));
}

TEST_CASE("pq hand case: one 0.8-IoU match, one fp, one fn gives 0.4") {
    // gt A covers 10 px, pred A covers the first 8 of them: IoU = 8/10
    Segment gt_a = rect_segment(1, 0, 0, 1, 10);
    Segment pred_a = rect_segment(1, 0, 0, 1, 8);
    Segment gt_b = rect_segment(1, 5, 0, 6, 6);    // unmatched -> fn
    Segment pred_c = rect_segment(1, 10, 0, 11, 6);  // unmatched -> fp
    PQResult r = panoptic_quality({pred_a, pred_c}, {gt_a, gt_b});
    CHECK(r.per_class.at(1) == doctest::Approx(0.8 / (1.0 + 0.5 + 0.5)));
    CHECK(r.pq == doctest::Approx(0.4));
}

TEST_CASE("pq is 0 for empty predictions against one gt segment") {
    std::vector<Segment> gt = {rect_segment(3, 2, 2, 6, 6)};
    PQResult r = panoptic_quality({}, gt);
    CHECK(r.pq == doctest::Approx(0.0));
    CHECK(r.per_class.at(3) == doctest::Approx(0.0));
}

TEST_CASE("pq ignores matches at or below iou 0.5") {
    // IoU exactly 0.5: pred covers 5 of 10 gt pixels and nothing else
    Segment gt = rect_segment(0, 0, 0, 1, 10);
    Segment pred = rect_segment(0, 0, 0, 1, 5);
    PQResult r = panoptic_quality({pred}, {gt});
    // no match: one fp + one fn
    CHECK(r.per_class.at(0) == doctest::Approx(0.0));
}

TEST_CASE("pq is permutation invariant in segment order") {
    std::vector<Segment> gt = {rect_segment(0, 0, 0, 4, 4), rect_segment(0, 6, 6, 10, 10),
                               rect_segment(1, 12, 0, 15, 4)};
    std::vector<Segment> pred = {rect_segment(0, 0, 0, 4, 3), rect_segment(0, 6, 6, 10, 9),
                                 rect_segment(1, 12, 0, 15, 5)};
    PQResult a = panoptic_quality(pred, gt);
    std::reverse(pred.begin(), pred.end());
    std::reverse(gt.begin(), gt.end());
    PQResult b = panoptic_quality(pred, gt);
    CHECK(a.pq == doctest::Approx(b.pq));
    for (auto& [cls, pq] : a.per_class) CHECK(pq == doctest::Approx(b.per_class.at(cls)));
}

TEST_CASE("pq matches a brute-force pair matcher on random scenes") {
    Rng rng(101);
    const int H = 24, W = 24;
    for (int trial = 0; trial < 200; ++trial) {
        // random 3x3 cell grid; gt picks cells, pred perturbs them
        std::vector<int> ys = {0, static_cast<int>(rng.uniform_int(6, 10)),
                               static_cast<int>(rng.uniform_int(14, 18)), H};
        std::vector<int> xs = {0, static_cast<int>(rng.uniform_int(6, 10)),
                               static_cast<int>(rng.uniform_int(14, 18)), W};
        std::vector<Segment> gt, pred;
        for (int gy = 0; gy < 3; ++gy)
            for (int gx = 0; gx < 3; ++gx) {
                const int y0 = ys[gy] + 1, y1 = ys[gy + 1] - 1;
                const int x0 = xs[gx] + 1, x1 = xs[gx + 1] - 1;
                const int cls = static_cast<int>(rng.uniform_int(0, 2));
                const double u = rng.uniform();
                if (u < 0.55) {
                    gt.push_back(rect_segment(cls, y0, x0, y1, x1, H, W));
                    if (rng.uniform() < 0.75) {
                        // shrink from the top by 0..60% of the height
                        const int cut = static_cast<int>(rng.uniform_int(0, (y1 - y0) * 6 / 10));
                        int pcls = cls;
                        if (rng.uniform() < 0.15) pcls = static_cast<int>(rng.uniform_int(0, 2));
                        pred.push_back(rect_segment(pcls, y0 + cut, x0, y1, x1, H, W));
                    }
                } else if (u < 0.75) {
                    pred.push_back(rect_segment(cls, y0, x0, y1, x1, H, W));
                }
            }

        PQResult got = panoptic_quality(pred, gt);

        // oracle: enumerate all >0.5 pairs per class; assert they are one-to-one
        std::map<int, PQClassStats> stats;
        for (const Segment& g : gt) stats[g.class_id];
        for (const Segment& p : pred) stats[p.class_id];
        std::vector<int> pred_hits(pred.size(), 0), gt_hits(gt.size(), 0);
        std::map<int, double> iou_sum;
        std::map<int, int64_t> tp;
        for (size_t p = 0; p < pred.size(); ++p)
            for (size_t g = 0; g < gt.size(); ++g) {
                if (pred[p].class_id != gt[g].class_id) continue;
                const double iou = mask_iou(pred[p].mask, gt[g].mask);
                if (iou > 0.5) {
                    pred_hits[p] += 1;
                    gt_hits[g] += 1;
                    iou_sum[pred[p].class_id] += iou;
                    tp[pred[p].class_id] += 1;
                }
            }
        for (int hits : pred_hits) CHECK(hits <= 1);  // matching provably unique
        for (int hits : gt_hits) CHECK(hits <= 1);

        double oracle_sum = 0.0;
        int64_t classes = 0;
        for (auto& [cls, st] : stats) {
            int64_t n_pred = 0, n_gt = 0;
            for (const Segment& p : pred) n_pred += (p.class_id == cls);
            for (const Segment& g : gt) n_gt += (g.class_id == cls);
            const int64_t t = tp.count(cls) ? tp[cls] : 0;
            const double denom = t + 0.5 * (n_pred - t) + 0.5 * (n_gt - t);
            const double pq_c = denom > 0 ? iou_sum[cls] / denom : 0.0;
            if (got.per_class.count(cls)) {
                CHECK(got.per_class.at(cls) == doctest::Approx(pq_c).epsilon(1e-12));
                oracle_sum += pq_c;
                classes += 1;
            } else {
                CHECK(denom == 0.0);
            }
        }
        if (classes > 0) CHECK(got.pq == doctest::Approx(oracle_sum / classes).epsilon(1e-12));
        CHECK(got.pq >= 0.0);
        CHECK(got.pq <= 1.0);
    }
}

TEST_CASE("miou identity and disjoint extremes") {
    std::vector<int> a = {0, 0, 1, 1, -1, 2};
    CHECK(mean_iou(a, a).miou == doctest::Approx(1.0));

    std::vector<int> left = {0, 0, -1, -1};
    std::vector<int> right = {-1, -1, 0, 0};
    CHECK(mean_iou(left, right).miou == doctest::Approx(0.0));
}

TEST_CASE("miou 2x2 hand case matches pixel arithmetic") {
    // gt:  [0,0 / 1,1]   pred: [0,1 / 1,1]
    std::vector<int> gt = {0, 0, 1, 1};
    std::vector<int> pred = {0, 1, 1, 1};
    // class 0: I=1 U=2 -> 0.5 ; class 1: I=2 U=3
    IoUResult r = mean_iou(pred, gt);
    CHECK(r.per_class.at(0) == doctest::Approx(0.5));
    CHECK(r.per_class.at(1) == doctest::Approx(2.0 / 3.0));
    CHECK(r.miou == doctest::Approx(0.5 * (0.5 + 2.0 / 3.0)));
}

TEST_CASE("miou matches a pixel-set oracle on random maps") {
    Rng rng(113);
    for (int trial = 0; trial < 200; ++trial) {
        const int n = 64;
        std::vector<int> pred(n), gt(n);
        for (int i = 0; i < n; ++i) {
            pred[i] = static_cast<int>(rng.uniform_int(-1, 3));
            gt[i] = static_cast<int>(rng.uniform_int(-1, 3));
        }
        IoUResult got = mean_iou(pred, gt);
        double sum = 0;
        int cnt = 0;
        for (int c = 0; c <= 3; ++c) {
            int64_t inter = 0, uni = 0;
            for (int i = 0; i < n; ++i) {
                inter += (pred[i] == c && gt[i] == c);
                uni += (pred[i] == c || gt[i] == c);
            }
            if (uni == 0) {
                CHECK(!got.per_class.count(c));
                continue;
            }
            const double iou = static_cast<double>(inter) / uni;
            CHECK(got.per_class.at(c) == doctest::Approx(iou).epsilon(1e-12));
            sum += iou;
            cnt += 1;
        }
        CHECK(got.miou == doctest::Approx(cnt ? sum / cnt : 0.0).epsilon(1e-12));
        CHECK(got.miou >= 0.0);
        CHECK(got.miou <= 1.0);
    }
}

TEST_CASE("group report splits by position in the class order") {
    // shuffled order: groups follow positions, not ids
    std::vector<int> order = {9, 4, 7, 2, 5};
    std::map<int, double> per_class = {{9, 0.8}, {4, 0.6}, {7, 0.4}, {2, 0.2}};
    // base 2, incr 1, stage 2 -> visible = order[0..3]
    GroupReport r = group_report(per_class, order, 2, 1, 2, {0.9, 0.7});
    CHECK(r.base == doctest::Approx((0.8 + 0.6) / 2));
    CHECK(r.has_fresh);
    CHECK(r.fresh == doctest::Approx((0.4 + 0.2) / 2));
    CHECK(r.all == doctest::Approx((0.8 + 0.6 + 0.4 + 0.2) / 4));
    CHECK(r.avg == doctest::Approx((0.9 + 0.7 + 0.5) / 3));
}

TEST_CASE("group report single stage has no fresh group") {
    std::vector<int> order = {0, 1, 2, 3};
    std::map<int, double> per_class = {{0, 0.5}, {1, 0.7}};
    GroupReport r = group_report(per_class, order, 2, 1, 0, {});
    CHECK(!r.has_fresh);
    CHECK(r.base == doctest::Approx(0.6));
    CHECK(r.all == doctest::Approx(0.6));
    CHECK(r.avg == doctest::Approx(0.6));
}

TEST_CASE("group report skips classes absent from gt and prediction") {
    std::vector<int> order = {0, 1, 2, 3};
    std::map<int, double> per_class = {{0, 0.5}};  // class 1 never appeared
    GroupReport r = group_report(per_class, order, 2, 1, 0, {});
    CHECK(r.base == doctest::Approx(0.5));
}

TEST_CASE("pq accumulates across images") {
    PQAccumulator acc;
    Segment g = rect_segment(0, 0, 0, 4, 4);
    acc.add_image({g}, {g});               // tp, iou 1
    acc.add_image({}, {g});                // fn
    acc.add_image({g}, {});                // fp
    PQResult r = acc.result();
    CHECK(r.per_class.at(0) == doctest::Approx(1.0 / (1.0 + 0.5 + 0.5)));
}
