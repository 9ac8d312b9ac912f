#pragma once

#include <set>
#include <utility>
#include <vector>

#include "simcis/autograd.hpp"
#include "simcis/synthetic_data.hpp"

namespace simcis {

// Predictions for the real (non-virtual) queries. Mask logits are stored one
// query per row at the model's output resolution.
struct PredictionSet {
    Var class_logits;  // [N, K+1], last slot = no-object
    Var mask_logits;   // [N, H*W]
    int height = 0, width = 0;
    int num_classes = 0;  // K, excluding no-object
};

struct CostWeights {
    double cls = 2.0;
    double bce = 5.0;
    double dice = 5.0;
};

struct LossWeights {
    double cls = 2.0;   // applied by the caller when composing the total
    double bce = 5.0;
    double dice = 5.0;
    double no_object = 0.1;
};

// Injective in both coordinates; unmatched queries are implicitly no-object.
struct Assignment {
    std::vector<std::pair<int, int>> pairs;  // (query index, gt index)
};

// Minimal-cost assignment of every row to a distinct column; requires
// rows <= cols. Returns the column per row and the total cost.
std::pair<std::vector<int>, double> solve_assignment(
    const std::vector<std::vector<double>>& cost);

// Cost per (query, gt) pair: cls * (-p_query(gt class)) + bce * BCE + dice * Dice,
// evaluated on detached values.
Assignment hungarian_match(const PredictionSet& preds, const Annotation& ann,
                           const CostWeights& w = {});

struct CriterionOutput {
    Var l_class;  // CE over all queries, no-object weighted by w.no_object
    Var l_mask;   // bce * BCE + dice * Dice over matched queries only
};

CriterionOutput set_criterion(const PredictionSet& preds, const Annotation& ann,
                              const Assignment& assignment, const LossWeights& w = {});

// Adds confident old-class segments from the previous model's predictions,
// clipped so no current ground-truth pixel is ever claimed. Accepted pseudo
// segments are kept mutually disjoint (higher confidence wins).
Annotation fuse_pseudo_labels(const Annotation& gt, const PredictionSet& prev_preds,
                              const std::set<int>& old_classes, double confidence_threshold,
                              double mask_threshold = 0.5);

}  // namespace simcis
