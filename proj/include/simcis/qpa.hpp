#pragma once

#include <vector>

#include "simcis/model_core.hpp"
#include "simcis/nn.hpp"

namespace simcis {

// One trainable prototype per seen class, grouped by the stage that
// introduced it so earlier stages can be frozen independently.
struct PrototypeSet {
    std::vector<Var> stage_vecs;  // stage s: [classes added at s, D]
    std::vector<int> class_ids;   // append-only across stages
    std::vector<int> stage_of;    // per prototype
    int64_t dim = 0;

    int64_t size() const { return static_cast<int64_t>(class_ids.size()); }
    bool empty() const { return class_ids.empty(); }

    // Fresh concatenation node; call once per forward graph.
    Var combined() const;

    // Row index of a class id, -1 if unseen.
    int row_of(int class_id) const;

    // Freezes every stage but the newest (or unfreezes all).
    void set_freeze_old(bool freeze);
};

// Appends prototypes for new_classes (disjoint from existing ids), initialized
// normal(0, init_scale); previous vectors are preserved verbatim. Parameters
// register in ps as "proto.s<stage>".
PrototypeSet concat_prototypes(const PrototypeSet& previous, const std::vector<int>& new_classes,
                               int stage, double init_scale, Rng& rng, ParamStore& ps);

// Per-location score: max over classes of dot(feature, prototype). Pure values.
Tensor score_features(const MultiScaleFeatures& f, const PrototypeSet& protos);

// Winning class per location under the same max-dot rule.
std::vector<int> argmax_classes(const MultiScaleFeatures& f, const PrototypeSet& protos);

struct SelectionIndex {
    std::vector<int64_t> flat;                        // selected flat positions
    std::vector<MultiScaleFeatures::Triple> triples;  // same order
    std::vector<double> scores;                       // non-increasing
};

// The n largest scores; ties broken toward the lexicographically smallest
// (level, h, w), i.e. the smallest flat index.
std::vector<std::pair<int64_t, double>> select_topk_flat(const Tensor& scores, int n);
SelectionIndex select_topk(const Tensor& scores, const MultiScaleFeatures& f, int n);

struct QueryInit {
    Var features;    // [n, D]; detached copy when the barrier is on
    Var positional;  // [n, D]; the source locations' key position codes
};

// Copies the selected feature points as query initializations. barrier=true
// stops every gradient from flowing through the copy back into the feature
// map; forward values are identical either way.
QueryInit initialize_queries(const MultiScaleFeatures& f, const SelectionIndex& idx, bool barrier);

// Cross-entropy of prototype-similarity logits for the selected queries whose
// Hungarian target is a real class; targets of -1 (no-object) are skipped.
// Returns zero when nothing is matched.
Var prototype_selection_loss(const Var& selected_features, const PrototypeSet& protos,
                             const std::vector<int>& target_class_ids);

}  // namespace simcis
