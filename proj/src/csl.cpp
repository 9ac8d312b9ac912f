#include "simcis/csl.hpp"

#include <stdexcept>

namespace simcis {

SelectionIndex previous_stage_selection(const MultiScaleFeatures& prev_features,
                                        const PrototypeSet& prev_prototypes, int n) {
    return select_topk(score_features(prev_features, prev_prototypes), prev_features, n);
}

Var csl_loss(const Var& teacher_selected, const Var& student_selected,
             const PrototypeSet& prev_prototypes) {
    if (teacher_selected.shape() != student_selected.shape())
        throw std::invalid_argument("csl_loss: selected feature shapes differ");

    const Var protos = prev_prototypes.combined();
    const Tensor& t_feats = teacher_selected.value();
    const Tensor& p = protos.value();
    const int64_t k = t_feats.dim(0), c = p.dim(0), d = t_feats.dim(1);
    if (p.dim(1) != d) throw std::invalid_argument("csl_loss: prototype dim mismatch");

    Tensor teacher_logits({k, c});
    for (int64_t i = 0; i < k; ++i)
        for (int64_t j = 0; j < c; ++j) {
            double dot = 0;
            for (int64_t e = 0; e < d; ++e) dot += t_feats.at(i, e) * p.at(j, e);
            teacher_logits.at(i, j) = dot;
        }

    const Var student_logits = matmul_bt(student_selected, protos);
    return kl_softmax_vs_const(teacher_logits, student_logits);
}

void freeze_all(ParamStore& ps) {
    for (auto [name, p] : ps.items()) p.node()->requires_grad = false;
}

}  // namespace simcis
