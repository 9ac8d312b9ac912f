#pragma once

#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "simcis/config.hpp"
#include "simcis/model_core.hpp"
#include "simcis/qpa.hpp"
#include "simcis/vq_bank.hpp"

namespace simcis {

struct CheckpointError : std::runtime_error {
    explicit CheckpointError(const std::string& msg) : std::runtime_error(msg) {}
};

// Everything needed to resume or evaluate a stage: parameters, prototypes,
// replay bank (FIFO order intact), RNG state, class order, per-stage history,
// and the config snapshot. Written as a small binary archive: magic + version,
// a JSON manifest describing every array, then one float64 payload.
struct Checkpoint {
    Config config;
    int stage = 0;
    int num_classes = 0;               // class-head width (excluding no-object)
    std::vector<int> class_order;      // full experiment order
    std::vector<double> all_history;   // all-group PQ per completed stage
    std::vector<double> miou_history;  // all-group mIoU per completed stage
    std::string rng_state;

    std::map<std::string, Tensor> params;

    std::vector<Tensor> proto_stage_vecs;
    std::vector<int> proto_class_ids;
    std::vector<int> proto_stage_of;

    int64_t bank_dim = 0;
    int bank_capacity = 0;
    struct BankClass {
        int class_id = -1;
        uint64_t inserted = 0;
        std::vector<std::vector<double>> vectors;  // oldest first
    };
    std::vector<BankClass> bank_classes;
};

void save_checkpoint(const std::string& path, const Checkpoint& ck);
Checkpoint load_checkpoint(const std::string& path);

// Capture current training state.
Checkpoint make_checkpoint(const Config& cfg, int stage, const Model& model,
                           const PrototypeSet& protos, const VirtualQueryBank& bank,
                           const Rng& rng, const std::vector<int>& class_order,
                           const std::vector<double>& all_history,
                           const std::vector<double>& miou_history);

// Rebuild live objects. restore_model constructs the model from the stored
// config + class count, then overwrites every parameter bit-exactly.
Model restore_model(const Checkpoint& ck, const ModelConfig& mc);
PrototypeSet restore_prototypes(const Checkpoint& ck, ParamStore& ps);
VirtualQueryBank restore_bank(const Checkpoint& ck);

}  // namespace simcis
