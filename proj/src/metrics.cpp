#include "simcis/metrics.hpp"

#include <algorithm>
#include <set>
#include <stdexcept>

namespace simcis {

double mask_iou(const std::vector<uint8_t>& a, const std::vector<uint8_t>& b) {
    if (a.size() != b.size()) throw std::invalid_argument("mask_iou: size mismatch");
    int64_t inter = 0, uni = 0;
    for (size_t i = 0; i < a.size(); ++i) {
        const bool pa = a[i] != 0, pb = b[i] != 0;
        inter += (pa && pb);
        uni += (pa || pb);
    }
    return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

void PQAccumulator::add_image(const std::vector<Segment>& pred, const std::vector<Segment>& gt) {
    std::vector<char> pred_used(pred.size(), 0), gt_used(gt.size(), 0);
    for (size_t p = 0; p < pred.size(); ++p) {
        for (size_t g = 0; g < gt.size(); ++g) {
            if (gt_used[g] || pred[p].class_id != gt[g].class_id) continue;
            const double iou = mask_iou(pred[p].mask, gt[g].mask);
            if (iou > 0.5) {
                auto& st = stats_[pred[p].class_id];
                st.tp += 1;
                st.iou_sum += iou;
                pred_used[p] = gt_used[g] = 1;
                break;
            }
        }
    }
    for (size_t p = 0; p < pred.size(); ++p)
        if (!pred_used[p]) stats_[pred[p].class_id].fp += 1;
    for (size_t g = 0; g < gt.size(); ++g)
        if (!gt_used[g]) stats_[gt[g].class_id].fn += 1;
}

PQResult PQAccumulator::result() const {
    PQResult r;
    double sum = 0.0;
    int64_t n = 0;
    for (const auto& [cls, st] : stats_) {
        const double denom = static_cast<double>(st.tp) + 0.5 * st.fp + 0.5 * st.fn;
        const double pq = denom > 0 ? st.iou_sum / denom : 0.0;
        r.per_class[cls] = pq;
        sum += pq;
        n += 1;
    }
    r.pq = n > 0 ? sum / static_cast<double>(n) : 0.0;
    return r;
}

PQResult panoptic_quality(const std::vector<Segment>& pred, const std::vector<Segment>& gt) {
    PQAccumulator acc;
    acc.add_image(pred, gt);
    return acc.result();
}

void IoUAccumulator::add_image(const std::vector<int>& pred, const std::vector<int>& gt) {
    if (pred.size() != gt.size()) throw std::invalid_argument("mean_iou: size mismatch");
    std::set<int> classes;
    for (int v : pred)
        if (v >= 0) classes.insert(v);
    for (int v : gt)
        if (v >= 0) classes.insert(v);
    for (int c : classes) {
        int64_t inter = 0, uni = 0;
        for (size_t i = 0; i < pred.size(); ++i) {
            const bool pp = pred[i] == c, pg = gt[i] == c;
            inter += (pp && pg);
            uni += (pp || pg);
        }
        auto& [ai, au] = acc_[c];
        ai += inter;
        au += uni;
    }
}

IoUResult IoUAccumulator::result() const {
    IoUResult r;
    double sum = 0.0;
    int64_t n = 0;
    for (const auto& [cls, iu] : acc_) {
        if (iu.second == 0) continue;
        const double iou = static_cast<double>(iu.first) / static_cast<double>(iu.second);
        r.per_class[cls] = iou;
        sum += iou;
        n += 1;
    }
    r.miou = n > 0 ? sum / static_cast<double>(n) : 0.0;
    return r;
}

IoUResult mean_iou(const std::vector<int>& pred, const std::vector<int>& gt) {
    IoUAccumulator acc;
    acc.add_image(pred, gt);
    return acc.result();
}

GroupReport group_report(const std::map<int, double>& per_class, const std::vector<int>& order,
                         int base_count, int incr_count, int stage,
                         const std::vector<double>& prev_all) {
    const int visible = base_count + stage * incr_count;
    if (visible > static_cast<int>(order.size()))
        throw std::invalid_argument("group_report: stage exceeds class order");

    auto mean_over = [&](int lo, int hi) -> std::pair<double, bool> {
        double s = 0.0;
        int n = 0;
        for (int i = lo; i < hi; ++i) {
            auto it = per_class.find(order[static_cast<size_t>(i)]);
            if (it == per_class.end()) continue;  // absent from GT and prediction
            s += it->second;
            n += 1;
        }
        return {n > 0 ? s / n : 0.0, n > 0};
    };

    GroupReport r;
    r.base = mean_over(0, base_count).first;
    auto [fresh, has] = mean_over(base_count, visible);
    r.fresh = fresh;
    r.has_fresh = has;
    r.all = mean_over(0, visible).first;

    double s = r.all;
    for (double v : prev_all) s += v;
    r.avg = s / static_cast<double>(prev_all.size() + 1);
    return r;
}

}  // namespace simcis
