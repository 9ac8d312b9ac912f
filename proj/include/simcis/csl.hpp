#pragma once

#include "simcis/qpa.hpp"

namespace simcis {

// The previous-stage selection pipeline verbatim: score the frozen model's
// features against the frozen prototypes and take the top n locations.
SelectionIndex previous_stage_selection(const MultiScaleFeatures& prev_features,
                                        const PrototypeSet& prev_prototypes, int n);

// Mean over selected points of KL(softmax(teacher sims) || softmax(student
// sims)), similarities taken against the previous-stage prototypes. The
// teacher side enters as constants, so gradient reaches only the student
// branch (and the prototypes only if they are trainable, which frozen
// previous-stage sets are not).
Var csl_loss(const Var& teacher_selected, const Var& student_selected,
             const PrototypeSet& prev_prototypes);

// Marks every parameter as non-trainable (frozen previous-stage models).
void freeze_all(ParamStore& ps);

}  // namespace simcis
