#pragma once

#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "simcis/checkpoint.hpp"
#include "simcis/config.hpp"
#include "simcis/csl.hpp"
#include "simcis/matching_losses.hpp"
#include "simcis/metrics.hpp"
#include "simcis/model_core.hpp"
#include "simcis/qpa.hpp"
#include "simcis/synthetic_data.hpp"
#include "simcis/vq_bank.hpp"

namespace simcis {

// Training-time failure (missing checkpoint, non-finite loss, data-access
// violation). CLI maps this to exit 3.
struct HarnessError : std::runtime_error {
    explicit HarnessError(const std::string& msg) : std::runtime_error(msg) {}
};

// Class schedule: `order` is a permutation of all class ids; the first
// base_classes entries form stage 0, every following incr_classes entries one
// incremental stage. Positions in `order` double as the model's label slots,
// so slot r always denotes class order[r] at every stage.
struct StagePlan {
    std::vector<int> order;
    int base_classes = 8;
    int incr_classes = 2;
    int base_iters = 2000;
    int incr_iters_per_class = 200;

    int num_stages() const;
    int visible_count(int stage) const;           // |C^{1:t}|, stages 0..stage
    std::vector<int> new_classes_at(int stage) const;
    std::vector<int> visible_through(int stage) const;
    int iters_at(int stage) const;
};

// ascending = identity, descending = reversed, shuffle = seeded permutation.
std::vector<int> make_order(int num_classes, const std::string& mode, uint64_t seed);

StagePlan plan_from_config(const Config& cfg);  // throws ConfigError on bad splits
ModelConfig model_config_from(const Config& cfg);
ShapeWorldConfig world_config_from(const Config& cfg);

struct AblationFlags {
    bool psd = true;  // pseudo-labels from the previous model
    bool qpa = true;  // prototype-based query pre-alignment (+ selection loss)
    bool csl = true;  // cross-stage selection-consistency loss
    bool vq = true;   // virtual-query replay
};
AblationFlags ablation_from(const Config& cfg);

// Audited view of one stage's training data D^t. Every image the trainer sees
// passes through fetch(), which enforces the index range and strips labels to
// the stage's own classes; any violation throws instead of leaking.
class StageData {
public:
    StageData(const ShapeWorldConfig& world, int64_t index_lo, int64_t index_hi,
              std::set<int> visible_classes);

    Sample fetch(int64_t index) const;
    int64_t lo() const { return lo_; }
    int64_t size() const { return hi_ - lo_; }
    const std::set<int>& visible() const { return visible_; }
    const std::set<int64_t>& accessed() const { return accessed_; }

private:
    ShapeWorldConfig world_;
    int64_t lo_, hi_;
    std::set<int> visible_;
    mutable std::set<int64_t> accessed_;
};

// Disjoint panoptic segments from one prediction set: confident queries keep
// their argmax class; each covered pixel goes to the best score*mask query.
// slot_to_class maps label slots back to world class ids.
std::vector<Segment> panoptic_inference(const PredictionSet& preds,
                                        const std::vector<int>& slot_to_class,
                                        double confidence_threshold, double mask_threshold);

struct EvalResult {
    PQResult pq;     // keyed by world class id
    IoUResult miou;  // keyed by world class id
};

// Deterministic evaluation on the shared held-out split, restricted to the
// first visible_count classes of the order. protos may be null when query
// pre-alignment is disabled.
EvalResult evaluate_model(const Model& model, const PrototypeSet* protos,
                          const AblationFlags& abl, const Config& cfg,
                          const std::vector<int>& order, int visible_count);

struct StageOutcome {
    GroupReport pq, miou;
    std::string checkpoint_path;
    double wall_seconds = 0.0;
    std::vector<double> pq_all_history;    // through this stage
    std::vector<double> miou_all_history;  // through this stage
};

// Trains stage `stage` of the plan (loading the previous stage's checkpoint
// when stage > 0), evaluates, and writes the stage checkpoint into run_dir.
StageOutcome run_stage(const Config& cfg, const StagePlan& plan, int stage,
                       const std::string& run_dir);

struct RunResult {
    std::vector<GroupReport> pq_reports, miou_reports;
    std::vector<std::string> checkpoint_paths;
    std::string run_dir, metrics_csv_path, config_hash;
};

// All stages end to end: config snapshot, per-stage checkpoints, metrics.csv
// (columns stage,group,metric,value), run.log. With resume=true, stages whose
// checkpoints already exist are re-evaluated instead of retrained.
RunResult run_experiment(const Config& cfg, const std::string& run_dir, bool resume = false);

std::string checkpoint_path_for(const std::string& run_dir, int stage);

}  // namespace simcis
