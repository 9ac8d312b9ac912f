#include "simcis/qpa.hpp"

#include <algorithm>
#include <stdexcept>

namespace simcis {

Var PrototypeSet::combined() const {
    if (stage_vecs.empty()) throw std::logic_error("PrototypeSet: empty");
    if (stage_vecs.size() == 1) return stage_vecs[0];
    return concat_rows(stage_vecs);
}

int PrototypeSet::row_of(int class_id) const {
    for (size_t i = 0; i < class_ids.size(); ++i)
        if (class_ids[i] == class_id) return static_cast<int>(i);
    return -1;
}

void PrototypeSet::set_freeze_old(bool freeze) {
    for (size_t s = 0; s + 1 < stage_vecs.size(); ++s)
        stage_vecs[s].node()->requires_grad = !freeze;
}

PrototypeSet concat_prototypes(const PrototypeSet& previous, const std::vector<int>& new_classes,
                               int stage, double init_scale, Rng& rng, ParamStore& ps) {
    PrototypeSet out = previous;
    if (out.dim == 0) throw std::invalid_argument("concat_prototypes: dim unset");
    for (int c : new_classes)
        if (out.row_of(c) >= 0)
            throw std::invalid_argument("concat_prototypes: duplicate class id " +
                                        std::to_string(c));
    if (new_classes.empty()) return out;

    Tensor init({static_cast<int64_t>(new_classes.size()), out.dim});
    if (init_scale != 0.0) init = rng.randn({static_cast<int64_t>(new_classes.size()), out.dim}, init_scale);
    out.stage_vecs.push_back(ps.add("proto.s" + std::to_string(stage), std::move(init)));
    for (int c : new_classes) {
        out.class_ids.push_back(c);
        out.stage_of.push_back(stage);
    }
    return out;
}

Tensor score_features(const MultiScaleFeatures& f, const PrototypeSet& protos) {
    if (protos.empty()) throw std::invalid_argument("score_features: empty prototype set");
    const Tensor& feats = f.all_rows.value();
    const Tensor prot = protos.combined().value();
    if (prot.dim(1) != feats.dim(1))
        throw std::invalid_argument("score_features: dimension mismatch");
    const int64_t n = feats.dim(0), c = prot.dim(0), d = feats.dim(1);
    Tensor scores({n});
    for (int64_t i = 0; i < n; ++i) {
        double best = -1e300;
        const double* fv = feats.ptr() + i * d;
        for (int64_t p = 0; p < c; ++p) {
            const double* pv = prot.ptr() + p * d;
            double dot = 0;
            for (int64_t k = 0; k < d; ++k) dot += fv[k] * pv[k];
            best = std::max(best, dot);
        }
        scores[i] = best;
    }
    return scores;
}

std::vector<int> argmax_classes(const MultiScaleFeatures& f, const PrototypeSet& protos) {
    if (protos.empty()) throw std::invalid_argument("argmax_classes: empty prototype set");
    const Tensor& feats = f.all_rows.value();
    const Tensor prot = protos.combined().value();
    const int64_t n = feats.dim(0), c = prot.dim(0), d = feats.dim(1);
    std::vector<int> out(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) {
        double best = -1e300;
        int64_t arg = 0;
        const double* fv = feats.ptr() + i * d;
        for (int64_t p = 0; p < c; ++p) {
            const double* pv = prot.ptr() + p * d;
            double dot = 0;
            for (int64_t k = 0; k < d; ++k) dot += fv[k] * pv[k];
            if (dot > best) {
                best = dot;
                arg = p;
            }
        }
        out[static_cast<size_t>(i)] = protos.class_ids[static_cast<size_t>(arg)];
    }
    return out;
}

std::vector<std::pair<int64_t, double>> select_topk_flat(const Tensor& scores, int n) {
    const int64_t omega = scores.numel();
    if (n > omega) throw std::invalid_argument("select_topk: n exceeds omega");
    std::vector<int64_t> idx(static_cast<size_t>(omega));
    for (int64_t i = 0; i < omega; ++i) idx[static_cast<size_t>(i)] = i;
    std::stable_sort(idx.begin(), idx.end(), [&](int64_t a, int64_t b) {
        if (scores[a] != scores[b]) return scores[a] > scores[b];
        return a < b;
    });
    std::vector<std::pair<int64_t, double>> out;
    out.reserve(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) out.emplace_back(idx[static_cast<size_t>(i)], scores[idx[static_cast<size_t>(i)]]);
    return out;
}

SelectionIndex select_topk(const Tensor& scores, const MultiScaleFeatures& f, int n) {
    if (scores.numel() != f.omega())
        throw std::invalid_argument("select_topk: score field size != omega");
    SelectionIndex out;
    for (const auto& [flat, score] : select_topk_flat(scores, n)) {
        out.flat.push_back(flat);
        out.triples.push_back(f.flat_to_triple(flat));
        out.scores.push_back(score);
    }
    return out;
}

QueryInit initialize_queries(const MultiScaleFeatures& f, const SelectionIndex& idx,
                             bool barrier) {
    QueryInit out;
    const Var gathered = gather_rows(f.all_rows, idx.flat);
    out.features = barrier ? detach(gathered) : gathered;
    out.positional = gather_rows(f.all_pos, idx.flat);
    return out;
}

Var prototype_selection_loss(const Var& selected_features, const PrototypeSet& protos,
                             const std::vector<int>& target_class_ids) {
    if (static_cast<int64_t>(target_class_ids.size()) != selected_features.dim(0))
        throw std::invalid_argument("prototype_selection_loss: target count mismatch");
    std::vector<int64_t> rows;
    std::vector<int64_t> targets;
    for (size_t i = 0; i < target_class_ids.size(); ++i) {
        if (target_class_ids[i] < 0) continue;  // no-object: not supervised here
        const int row = protos.row_of(target_class_ids[i]);
        if (row < 0)
            throw std::invalid_argument("prototype_selection_loss: unknown class " +
                                        std::to_string(target_class_ids[i]));
        rows.push_back(static_cast<int64_t>(i));
        targets.push_back(row);
    }
    if (rows.empty()) return Var::constant(Tensor({1}));
    const Var logits = matmul_bt(gather_rows(selected_features, rows), protos.combined());
    return cross_entropy(logits, targets, {});
}

}  // namespace simcis
