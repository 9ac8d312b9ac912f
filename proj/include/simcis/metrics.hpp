#pragma once

#include <map>
#include <vector>

#include "simcis/synthetic_data.hpp"

namespace simcis {

double mask_iou(const std::vector<uint8_t>& a, const std::vector<uint8_t>& b);

struct PQClassStats {
    double iou_sum = 0.0;
    int64_t tp = 0, fp = 0, fn = 0;
};

struct PQResult {
    std::map<int, double> per_class;
    double pq = 0.0;  // mean over classes present on either side
};

// Aggregates matches across images; the standard IoU>0.5 criterion makes the
// per-class matching one-to-one without any assignment search.
class PQAccumulator {
public:
    void add_image(const std::vector<Segment>& pred, const std::vector<Segment>& gt);
    PQResult result() const;
    const std::map<int, PQClassStats>& stats() const { return stats_; }

private:
    std::map<int, PQClassStats> stats_;
};

PQResult panoptic_quality(const std::vector<Segment>& pred, const std::vector<Segment>& gt);

struct IoUResult {
    std::map<int, double> per_class;
    double miou = 0.0;
};

// Per-pixel label maps, -1 = background/unlabeled. Classes with an empty
// union on both sides are excluded from the mean.
class IoUAccumulator {
public:
    void add_image(const std::vector<int>& pred, const std::vector<int>& gt);
    IoUResult result() const;

private:
    std::map<int, std::pair<int64_t, int64_t>> acc_;  // class -> (intersection, union)
};

IoUResult mean_iou(const std::vector<int>& pred, const std::vector<int>& gt);

struct GroupReport {
    double base = 0.0;
    double fresh = 0.0;  // classes introduced after the base stage
    bool has_fresh = false;
    double all = 0.0;
    double avg = 0.0;  // mean of the all-group metric across stages so far
};

// Groups follow positions in the (possibly shuffled) class order, not raw
// class ids. prev_all carries the all-group value of stages 0..stage-1.
GroupReport group_report(const std::map<int, double>& per_class, const std::vector<int>& order,
                         int base_count, int incr_count, int stage,
                         const std::vector<double>& prev_all);

}  // namespace simcis
