#pragma once

#include <deque>
#include <map>
#include <set>

#include "simcis/matching_losses.hpp"

namespace simcis {

// Class-conditional FIFO storage of final-layer query vectors.
class VirtualQueryBank {
public:
    VirtualQueryBank() = default;
    VirtualQueryBank(int64_t dim, int capacity) : dim_(dim), capacity_(capacity) {}

    int64_t dim() const { return dim_; }
    int capacity() const { return capacity_; }

    void enqueue(int class_id, const std::vector<double>& vec);

    const std::deque<std::vector<double>>& queue_of(int class_id) const;
    bool has_class(int class_id) const { return queues_.count(class_id) > 0; }
    std::vector<int> class_ids() const;
    uint64_t inserted_total(int class_id) const;

    int64_t total_vectors() const;
    // Occupancy-based payload size at the given real width.
    int64_t storage_bytes(int bytes_per_real) const { return total_vectors() * dim_ * bytes_per_real; }

    // serialization hooks (checkpoint module)
    const std::map<int, std::deque<std::vector<double>>>& raw_queues() const { return queues_; }
    void restore_queue(int class_id, std::deque<std::vector<double>> q, uint64_t inserted);

private:
    int64_t dim_ = 0;
    int capacity_ = 0;
    std::map<int, std::deque<std::vector<double>>> queues_;
    std::map<int, uint64_t> inserted_;
};

// Stores the matched final-layer query vectors into their ground-truth class
// queues; unmatched queries contribute nothing.
void enqueue_matched(VirtualQueryBank& bank, const Tensor& final_queries, const Annotation& ann,
                     const Assignment& assignment);

// One image's worth of confident-instance counting for the pseudo statistics:
// a query counts for its argmax real class when that probability clears the
// threshold and the class is old.
void tally_confident(const PredictionSet& preds, const std::set<int>& old_classes,
                     double threshold, std::map<int, int64_t>& counts);

// Replay weights from pseudo counts: omega_j = sqrt(sum_i sigma_i / sigma_j).
// Classes with sigma_j = 0 are clamped to the largest finite weight; if every
// count is zero the weights are uniform.
std::map<int, double> pseudo_weights(const std::map<int, int64_t>& counts);

struct VirtualSample {
    Tensor features;          // [j_drawn, D]
    std::vector<int64_t> labels;  // source class per row
};

// Draws j vectors with class probability proportional to the weights
// restricted to non-empty queues, uniform within a queue. Empty bank -> empty
// sample.
VirtualSample sample_virtual(const VirtualQueryBank& bank, const std::map<int, double>& weights,
                             int j, Rng& rng);

// Cross-entropy on class logits only; masks never enter.
Var virtual_class_loss(const Var& virt_class_logits, const std::vector<int64_t>& labels);

}  // namespace simcis
