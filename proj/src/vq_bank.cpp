#include "simcis/vq_bank.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace simcis {

void VirtualQueryBank::enqueue(int class_id, const std::vector<double>& vec) {
    if (static_cast<int64_t>(vec.size()) != dim_)
        throw std::invalid_argument("bank enqueue: vector width != dim");
    for (double v : vec)
        if (!std::isfinite(v)) throw std::invalid_argument("bank enqueue: non-finite value");
    auto& q = queues_[class_id];
    q.push_back(vec);
    inserted_[class_id] += 1;
    while (static_cast<int>(q.size()) > capacity_) q.pop_front();
}

const std::deque<std::vector<double>>& VirtualQueryBank::queue_of(int class_id) const {
    static const std::deque<std::vector<double>> empty;
    auto it = queues_.find(class_id);
    return it == queues_.end() ? empty : it->second;
}

std::vector<int> VirtualQueryBank::class_ids() const {
    std::vector<int> ids;
    for (const auto& [c, q] : queues_) ids.push_back(c);
    return ids;
}

uint64_t VirtualQueryBank::inserted_total(int class_id) const {
    auto it = inserted_.find(class_id);
    return it == inserted_.end() ? 0 : it->second;
}

int64_t VirtualQueryBank::total_vectors() const {
    int64_t n = 0;
    for (const auto& [c, q] : queues_) n += static_cast<int64_t>(q.size());
    return n;
}

void VirtualQueryBank::restore_queue(int class_id, std::deque<std::vector<double>> q,
                                     uint64_t inserted) {
    queues_[class_id] = std::move(q);
    inserted_[class_id] = inserted;
}

void enqueue_matched(VirtualQueryBank& bank, const Tensor& final_queries, const Annotation& ann,
                     const Assignment& assignment) {
    const int64_t d = final_queries.dim(1);
    for (const auto& [q, g] : assignment.pairs) {
        std::vector<double> vec(static_cast<size_t>(d));
        for (int64_t i = 0; i < d; ++i) vec[static_cast<size_t>(i)] = final_queries.at(q, i);
        bank.enqueue(ann.segments[static_cast<size_t>(g)].class_id, vec);
    }
}

void tally_confident(const PredictionSet& preds, const std::set<int>& old_classes,
                     double threshold, std::map<int, int64_t>& counts) {
    const Tensor& logits = preds.class_logits.value();
    const int64_t n = logits.dim(0);
    const int k = preds.num_classes;
    for (int64_t q = 0; q < n; ++q) {
        double mx = logits.at(q, 0);
        for (int c = 1; c <= k; ++c) mx = std::max(mx, logits.at(q, c));
        double denom = 0;
        for (int c = 0; c <= k; ++c) denom += std::exp(logits.at(q, c) - mx);
        int best = 0;
        double best_p = -1;
        for (int c = 0; c < k; ++c) {  // real classes only
            const double p = std::exp(logits.at(q, c) - mx) / denom;
            if (p > best_p) {
                best_p = p;
                best = c;
            }
        }
        if (best_p > threshold && old_classes.count(best)) counts[best] += 1;
    }
}

std::map<int, double> pseudo_weights(const std::map<int, int64_t>& counts) {
    std::map<int, double> w;
    if (counts.empty()) return w;
    double total = 0;
    for (const auto& [c, n] : counts) {
        if (n < 0) throw std::invalid_argument("pseudo_weights: negative count");
        total += static_cast<double>(n);
    }
    if (total == 0) {
        for (const auto& [c, n] : counts) w[c] = 1.0;
        return w;
    }
    double max_finite = 0;
    for (const auto& [c, n] : counts)
        if (n > 0) {
            w[c] = std::sqrt(total / static_cast<double>(n));
            max_finite = std::max(max_finite, w[c]);
        }
    for (const auto& [c, n] : counts)
        if (n == 0) w[c] = max_finite;
    return w;
}

VirtualSample sample_virtual(const VirtualQueryBank& bank, const std::map<int, double>& weights,
                             int j, Rng& rng) {
    VirtualSample out;
    std::vector<int> support;
    std::vector<double> probs;
    double total = 0;
    for (const auto& [c, w] : weights) {
        if (bank.queue_of(c).empty()) continue;
        if (w <= 0) throw std::invalid_argument("sample_virtual: non-positive weight");
        support.push_back(c);
        probs.push_back(w);
        total += w;
    }
    if (support.empty() || j <= 0) {
        out.features = Tensor({0, bank.dim()});
        return out;
    }

    out.features = Tensor({j, bank.dim()});
    for (int i = 0; i < j; ++i) {
        double r = rng.uniform() * total;
        size_t pick = support.size() - 1;
        for (size_t s = 0; s < support.size(); ++s) {
            r -= probs[s];
            if (r < 0) {
                pick = s;
                break;
            }
        }
        const auto& q = bank.queue_of(support[pick]);
        const auto& vec = q[static_cast<size_t>(rng.uniform_int(0, static_cast<int64_t>(q.size()) - 1))];
        for (int64_t e = 0; e < bank.dim(); ++e) out.features.at(i, e) = vec[static_cast<size_t>(e)];
        out.labels.push_back(support[pick]);
    }
    return out;
}

Var virtual_class_loss(const Var& virt_class_logits, const std::vector<int64_t>& labels) {
    if (labels.empty()) return Var::constant(Tensor({1}));
    return cross_entropy(virt_class_logits, labels, {});
}

}  // namespace simcis
