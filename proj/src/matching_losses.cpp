#include "simcis/matching_losses.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace simcis {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Dense softmax over one logits row, returning probabilities.
std::vector<double> softmax_row(const Tensor& logits, int64_t row) {
    const int64_t k = logits.dim(1);
    std::vector<double> p(static_cast<size_t>(k));
    double mx = -kInf;
    for (int64_t c = 0; c < k; ++c) mx = std::max(mx, logits.at(row, c));
    double s = 0;
    for (int64_t c = 0; c < k; ++c) {
        p[static_cast<size_t>(c)] = std::exp(logits.at(row, c) - mx);
        s += p[static_cast<size_t>(c)];
    }
    for (double& v : p) v /= s;
    return p;
}

double bce_cost(const Tensor& mask_logits, int64_t row, const std::vector<uint8_t>& target) {
    const int64_t n = mask_logits.dim(1);
    double s = 0;
    for (int64_t i = 0; i < n; ++i) {
        const double x = mask_logits.at(row, i);
        const double t = target[static_cast<size_t>(i)] ? 1.0 : 0.0;
        // log(1+e^x) computed stably
        const double softplus = x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
        s += softplus - t * x;
    }
    return s / static_cast<double>(n);
}

double dice_cost(const Tensor& mask_logits, int64_t row, const std::vector<uint8_t>& target) {
    const int64_t n = mask_logits.dim(1);
    double num = 0, den = 0;
    for (int64_t i = 0; i < n; ++i) {
        const double p = 1.0 / (1.0 + std::exp(-mask_logits.at(row, i)));
        const double t = target[static_cast<size_t>(i)] ? 1.0 : 0.0;
        num += p * t;
        den += p + t;
    }
    return 1.0 - (2.0 * num + 1.0) / (den + 1.0);
}

}  // namespace

std::pair<std::vector<int>, double> solve_assignment(
    const std::vector<std::vector<double>>& cost) {
    const int n = static_cast<int>(cost.size());
    if (n == 0) return {{}, 0.0};
    const int m = static_cast<int>(cost[0].size());
    if (n > m) throw std::invalid_argument("solve_assignment: more rows than columns");
    for (const auto& r : cost)
        if (static_cast<int>(r.size()) != m)
            throw std::invalid_argument("solve_assignment: ragged cost matrix");

    // potentials-based shortest augmenting path, 1-indexed
    std::vector<double> u(static_cast<size_t>(n) + 1, 0.0), v(static_cast<size_t>(m) + 1, 0.0);
    std::vector<int> p(static_cast<size_t>(m) + 1, 0), way(static_cast<size_t>(m) + 1, 0);
    for (int i = 1; i <= n; ++i) {
        p[0] = i;
        int j0 = 0;
        std::vector<double> minv(static_cast<size_t>(m) + 1, kInf);
        std::vector<char> used(static_cast<size_t>(m) + 1, 0);
        do {
            used[static_cast<size_t>(j0)] = 1;
            const int i0 = p[static_cast<size_t>(j0)];
            double delta = kInf;
            int j1 = -1;
            for (int j = 1; j <= m; ++j) {
                if (used[static_cast<size_t>(j)]) continue;
                const double cur = cost[static_cast<size_t>(i0 - 1)][static_cast<size_t>(j - 1)] -
                                   u[static_cast<size_t>(i0)] - v[static_cast<size_t>(j)];
                if (cur < minv[static_cast<size_t>(j)]) {
                    minv[static_cast<size_t>(j)] = cur;
                    way[static_cast<size_t>(j)] = j0;
                }
                if (minv[static_cast<size_t>(j)] < delta) {
                    delta = minv[static_cast<size_t>(j)];
                    j1 = j;
                }
            }
            for (int j = 0; j <= m; ++j) {
                if (used[static_cast<size_t>(j)]) {
                    u[static_cast<size_t>(p[static_cast<size_t>(j)])] += delta;
                    v[static_cast<size_t>(j)] -= delta;
                } else {
                    minv[static_cast<size_t>(j)] -= delta;
                }
            }
            j0 = j1;
        } while (p[static_cast<size_t>(j0)] != 0);
        do {
            const int j1 = way[static_cast<size_t>(j0)];
            p[static_cast<size_t>(j0)] = p[static_cast<size_t>(j1)];
            j0 = j1;
        } while (j0 != 0);
    }

    std::vector<int> row_to_col(static_cast<size_t>(n), -1);
    double total = 0;
    for (int j = 1; j <= m; ++j) {
        if (p[static_cast<size_t>(j)] > 0) {
            row_to_col[static_cast<size_t>(p[static_cast<size_t>(j)] - 1)] = j - 1;
            total += cost[static_cast<size_t>(p[static_cast<size_t>(j)] - 1)][static_cast<size_t>(j - 1)];
        }
    }
    return {row_to_col, total};
}

Assignment hungarian_match(const PredictionSet& preds, const Annotation& ann,
                           const CostWeights& w) {
    Assignment out;
    const int g = static_cast<int>(ann.segments.size());
    if (g == 0) return out;
    const Tensor& cls = preds.class_logits.value();
    const Tensor& msk = preds.mask_logits.value();
    const int n = static_cast<int>(cls.dim(0));
    if (g > n) throw std::invalid_argument("hungarian_match: more gt segments than queries");

    // rows = gt segments (fewer), cols = queries
    std::vector<std::vector<double>> cost(static_cast<size_t>(g),
                                          std::vector<double>(static_cast<size_t>(n)));
    for (int q = 0; q < n; ++q) {
        const std::vector<double> p = softmax_row(cls, q);
        for (int s = 0; s < g; ++s) {
            const Segment& seg = ann.segments[static_cast<size_t>(s)];
            double c = -w.cls * p[static_cast<size_t>(seg.class_id)];
            c += w.bce * bce_cost(msk, q, seg.mask);
            c += w.dice * dice_cost(msk, q, seg.mask);
            cost[static_cast<size_t>(s)][static_cast<size_t>(q)] = c;
        }
    }
    auto [gt_to_query, total] = solve_assignment(cost);
    (void)total;
    for (int s = 0; s < g; ++s) out.pairs.emplace_back(gt_to_query[static_cast<size_t>(s)], s);
    std::sort(out.pairs.begin(), out.pairs.end());
    return out;
}

CriterionOutput set_criterion(const PredictionSet& preds, const Annotation& ann,
                              const Assignment& assignment, const LossWeights& w) {
    const int n = static_cast<int>(preds.class_logits.dim(0));
    const int k = preds.num_classes;
    if (preds.class_logits.dim(1) != k + 1)
        throw std::invalid_argument("set_criterion: class logits width != K+1");

    std::vector<int64_t> targets(static_cast<size_t>(n), k);  // default no-object
    for (const auto& [q, g] : assignment.pairs)
        targets[static_cast<size_t>(q)] = ann.segments[static_cast<size_t>(g)].class_id;
    std::vector<double> class_weights(static_cast<size_t>(k) + 1, 1.0);
    class_weights[static_cast<size_t>(k)] = w.no_object;

    CriterionOutput out;
    out.l_class = cross_entropy(preds.class_logits, targets, class_weights);

    if (assignment.pairs.empty()) {
        out.l_mask = Var::constant(Tensor({1}));
        return out;
    }

    std::vector<int64_t> rows;
    Tensor targets_mask({static_cast<int64_t>(assignment.pairs.size()), preds.mask_logits.dim(1)});
    for (size_t i = 0; i < assignment.pairs.size(); ++i) {
        rows.push_back(assignment.pairs[i].first);
        const Segment& seg = ann.segments[static_cast<size_t>(assignment.pairs[i].second)];
        for (int64_t p = 0; p < targets_mask.dim(1); ++p)
            targets_mask.at(static_cast<int64_t>(i), p) = seg.mask[static_cast<size_t>(p)] ? 1.0 : 0.0;
    }
    const Var matched = gather_rows(preds.mask_logits, rows);
    out.l_mask = add(scale(bce_with_logits_mean(matched, targets_mask), w.bce),
                     scale(dice_loss(matched, targets_mask), w.dice));
    return out;
}

Annotation fuse_pseudo_labels(const Annotation& gt, const PredictionSet& prev_preds,
                              const std::set<int>& old_classes, double confidence_threshold,
                              double mask_threshold) {
    Annotation out = gt;
    const size_t npix = static_cast<size_t>(gt.height) * static_cast<size_t>(gt.width);
    std::vector<uint8_t> taken(npix, 0);
    for (const Segment& s : gt.segments)
        for (size_t i = 0; i < npix; ++i)
            if (s.mask[i]) taken[i] = 1;

    const Tensor& cls = prev_preds.class_logits.value();
    const Tensor& msk = prev_preds.mask_logits.value();
    const int n = static_cast<int>(cls.dim(0));
    const int k = prev_preds.num_classes;

    struct Candidate {
        double conf;
        int query;
        int cls;
    };
    std::vector<Candidate> cands;
    for (int q = 0; q < n; ++q) {
        const std::vector<double> p = softmax_row(cls, q);
        int best = 0;
        for (int c = 1; c < k; ++c)
            if (p[static_cast<size_t>(c)] > p[static_cast<size_t>(best)]) best = c;
        const double conf = p[static_cast<size_t>(best)];
        if (conf > confidence_threshold && old_classes.count(best))
            cands.push_back({conf, q, best});
    }
    std::sort(cands.begin(), cands.end(), [](const Candidate& a, const Candidate& b) {
        return a.conf != b.conf ? a.conf > b.conf : a.query < b.query;
    });

    for (const Candidate& c : cands) {
        Segment seg;
        seg.class_id = c.cls;
        seg.mask.assign(npix, 0);
        int64_t area = 0;
        for (size_t i = 0; i < npix; ++i) {
            const double logit = msk.at(c.query, static_cast<int64_t>(i));
            const double prob = 1.0 / (1.0 + std::exp(-logit));
            if (prob > mask_threshold && !taken[i]) {
                seg.mask[i] = 1;
                ++area;
            }
        }
        if (area == 0) continue;
        for (size_t i = 0; i < npix; ++i)
            if (seg.mask[i]) taken[i] = 1;
        out.segments.push_back(std::move(seg));
    }
    return out;
}

}  // namespace simcis
