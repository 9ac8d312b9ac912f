#include "simcis/continual_harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <memory>
#include <numeric>

namespace simcis {

namespace fs = std::filesystem;

namespace {

// Held-out evaluation images live far outside any stage's training range.
constexpr int64_t kEvalIndexBase = int64_t{1} << 40;

constexpr uint64_t kSaltModelInit = 11;
constexpr uint64_t kSaltProto = 0xA0;
constexpr uint64_t kSaltTrain = 0xB0;
constexpr uint64_t kSaltGrow = 0xC0;
constexpr uint64_t kSaltShuffle = 0x5EED;

double wall_clock() {
    return std::chrono::duration<double>(
               std::chrono::steady_clock::now().time_since_epoch())
        .count();
}

// World-id annotation -> label-slot annotation (slot = position in order).
Annotation to_slot_space(const Annotation& ann, const std::vector<int>& order) {
    Annotation out;
    out.height = ann.height;
    out.width = ann.width;
    for (const Segment& seg : ann.segments) {
        auto it = std::find(order.begin(), order.end(), seg.class_id);
        if (it == order.end())
            throw HarnessError("label slotting: class " + std::to_string(seg.class_id) +
                               " is not in the class order");
        Segment s = seg;
        s.class_id = static_cast<int>(it - order.begin());
        out.segments.push_back(std::move(s));
    }
    return out;
}

struct ForwardResult {
    Model::DecodeResult dec;
    SelectionIndex sel;  // valid when used_qpa
    Var selected;        // query-init features (gradient barrier per flag)
    bool used_qpa = false;
};

ForwardResult decode_from(const Model& model, const MultiScaleFeatures& f,
                          const PrototypeSet* protos, bool use_qpa, bool stop_grad,
                          const Var& virt) {
    ForwardResult r;
    Var queries, qpos;
    if (use_qpa && protos && !protos->empty()) {
        Tensor scores = score_features(f, *protos);
        r.sel = select_topk(scores, f, model.config().num_queries);
        QueryInit qi = initialize_queries(f, r.sel, stop_grad);
        queries = qi.features;
        qpos = qi.positional;
        r.selected = qi.features;
        r.used_qpa = true;
    } else {
        queries = model.learned_queries();
        qpos = model.learned_query_pos();
    }
    r.dec = model.decode(f, queries, qpos, virt);
    return r;
}

LossWeights loss_weights_from(const Config& cfg) {
    LossWeights w;
    w.cls = cfg.get_double("loss.class_weight");
    w.bce = cfg.get_double("loss.bce_weight");
    w.dice = cfg.get_double("loss.dice_weight");
    w.no_object = cfg.get_double("loss.no_object_weight");
    return w;
}

CostWeights cost_weights_from(const Config& cfg) {
    CostWeights w;
    w.cls = cfg.get_double("loss.class_weight");
    w.bce = cfg.get_double("loss.bce_weight");
    w.dice = cfg.get_double("loss.dice_weight");
    return w;
}

void write_metrics_csv(const std::string& path, const std::vector<GroupReport>& pq,
                       const std::vector<GroupReport>& miou) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw HarnessError("cannot write metrics csv '" + path + "'");
    out << "stage,group,metric,value\n";
    char buf[64];
    auto row = [&](int stage, const char* group, const char* metric, double v) {
        std::snprintf(buf, sizeof(buf), "%.10g", v);
        out << stage << ',' << group << ',' << metric << ',' << buf << '\n';
    };
    for (size_t t = 0; t < pq.size(); ++t) {
        const int s = static_cast<int>(t);
        row(s, "base", "pq", pq[t].base);
        if (pq[t].has_fresh) row(s, "fresh", "pq", pq[t].fresh);
        row(s, "all", "pq", pq[t].all);
        row(s, "avg", "pq", pq[t].avg);
        row(s, "base", "miou", miou[t].base);
        if (miou[t].has_fresh) row(s, "fresh", "miou", miou[t].fresh);
        row(s, "all", "miou", miou[t].all);
        row(s, "avg", "miou", miou[t].avg);
    }
}

}  // namespace

int StagePlan::num_stages() const {
    const int n = static_cast<int>(order.size());
    return base_classes >= n ? 1 : 1 + (n - base_classes) / incr_classes;
}

int StagePlan::visible_count(int stage) const {
    return base_classes + stage * incr_classes;
}

std::vector<int> StagePlan::new_classes_at(int stage) const {
    const int lo = stage == 0 ? 0 : visible_count(stage - 1);
    const int hi = visible_count(stage);
    return {order.begin() + lo, order.begin() + hi};
}

std::vector<int> StagePlan::visible_through(int stage) const {
    return {order.begin(), order.begin() + visible_count(stage)};
}

int StagePlan::iters_at(int stage) const {
    return stage == 0 ? base_iters : incr_iters_per_class * incr_classes;
}

std::vector<int> make_order(int num_classes, const std::string& mode, uint64_t seed) {
    std::vector<int> ids(static_cast<size_t>(num_classes));
    std::iota(ids.begin(), ids.end(), 0);
    if (mode == "ascending") return ids;
    if (mode == "descending") {
        std::reverse(ids.begin(), ids.end());
        return ids;
    }
    if (mode == "shuffle") {
        Rng rng(mix_seed(seed, kSaltShuffle));
        for (int i = num_classes - 1; i > 0; --i) {
            const int j = static_cast<int>(rng.uniform_int(0, i));
            std::swap(ids[static_cast<size_t>(i)], ids[static_cast<size_t>(j)]);
        }
        return ids;
    }
    throw ConfigError("make_order: unknown mode '" + mode + "'");
}

StagePlan plan_from_config(const Config& cfg) {
    StagePlan plan;
    const int n = static_cast<int>(cfg.get_int("data.num_classes"));
    plan.base_classes = static_cast<int>(cfg.get_int("plan.base_classes"));
    plan.incr_classes = static_cast<int>(cfg.get_int("plan.incr_classes"));
    plan.base_iters = static_cast<int>(cfg.get_int("plan.base_iters"));
    plan.incr_iters_per_class = static_cast<int>(cfg.get_int("plan.incr_iters_per_class"));
    if (plan.base_classes < 1 || plan.base_classes > n)
        throw ConfigError("plan.base_classes must be in [1, data.num_classes]");
    if (plan.base_classes < n) {
        if (plan.incr_classes < 1) throw ConfigError("plan.incr_classes must be >= 1");
        if ((n - plan.base_classes) % plan.incr_classes != 0)
            throw ConfigError("class splits must partition the class list: (" +
                              std::to_string(n) + " - " + std::to_string(plan.base_classes) +
                              ") is not divisible by " + std::to_string(plan.incr_classes));
    }
    plan.order = make_order(n, cfg.get("plan.order"),
                            static_cast<uint64_t>(cfg.get_int("plan.order_seed")));
    return plan;
}

ModelConfig model_config_from(const Config& cfg) {
    ModelConfig mc;
    mc.image_size = static_cast<int>(cfg.get_int("model.image_size"));
    mc.dim = static_cast<int>(cfg.get_int("model.dim"));
    mc.levels = static_cast<int>(cfg.get_int("model.levels"));
    mc.encoder_channels = static_cast<int>(cfg.get_int("model.encoder_channels"));
    mc.decoder_layers = static_cast<int>(cfg.get_int("model.decoder_layers"));
    mc.num_queries = static_cast<int>(cfg.get_int("model.queries"));
    mc.attn_heads = static_cast<int>(cfg.get_int("model.attn_heads"));
    mc.ffn_hidden = static_cast<int>(cfg.get_int("model.ffn_hidden"));
    mc.cross_attention_first = cfg.get("model.attention_order") == "cross_first";
    if (mc.image_size < 8 || mc.image_size % 8 != 0)
        throw ConfigError("model.image_size must be a positive multiple of 8");
    if (mc.levels != 3) throw ConfigError("model.levels must be 3");
    if (mc.dim < 2 || mc.dim % 2 != 0) throw ConfigError("model.dim must be even");
    if (mc.attn_heads < 1 || mc.dim % mc.attn_heads != 0)
        throw ConfigError("model.dim must be divisible by model.attn_heads");
    return mc;
}

ShapeWorldConfig world_config_from(const Config& cfg) {
    ShapeWorldConfig world;
    world.image_size = static_cast<int>(cfg.get_int("model.image_size"));
    world.num_classes = static_cast<int>(cfg.get_int("data.num_classes"));
    world.seed = static_cast<uint64_t>(cfg.get_int("data.seed"));
    if (world.num_classes < 1 || world.num_classes > 16)
        throw ConfigError("data.num_classes must be in [1, 16]");
    return world;
}

AblationFlags ablation_from(const Config& cfg) {
    AblationFlags abl;
    abl.psd = cfg.get_bool("psd.enabled");
    abl.qpa = cfg.get_bool("qpa.enabled");
    abl.csl = cfg.get_bool("csl.enabled");
    abl.vq = cfg.get_bool("vq.enabled");
    return abl;
}

StageData::StageData(const ShapeWorldConfig& world, int64_t index_lo, int64_t index_hi,
                     std::set<int> visible_classes)
    : world_(world), lo_(index_lo), hi_(index_hi), visible_(std::move(visible_classes)) {}

Sample StageData::fetch(int64_t index) const {
    if (index < lo_ || index >= hi_)
        throw HarnessError("data isolation: image index " + std::to_string(index) +
                           " is outside this stage's dataset [" + std::to_string(lo_) + ", " +
                           std::to_string(hi_) + ")");
    Sample s = generate(world_, index);
    s.annotation = stage_view(s.annotation, visible_);
    for (const Segment& seg : s.annotation.segments)
        if (!visible_.count(seg.class_id))
            throw HarnessError("data isolation: label for class " +
                               std::to_string(seg.class_id) + " leaked into the stage view");
    accessed_.insert(index);
    return s;
}

std::vector<Segment> panoptic_inference(const PredictionSet& preds,
                                        const std::vector<int>& slot_to_class,
                                        double confidence_threshold, double mask_threshold) {
    const Tensor& cls = preds.class_logits.value();
    const Tensor& msk = preds.mask_logits.value();
    const int64_t n = cls.dim(0);
    const int k = preds.num_classes;
    const int64_t pixels = msk.dim(1);
    if (static_cast<size_t>(k) > slot_to_class.size())
        throw std::invalid_argument("panoptic_inference: slot map shorter than class count");

    struct Kept {
        int64_t query;
        int slot;
        double score;
    };
    std::vector<Kept> kept;
    for (int64_t q = 0; q < n; ++q) {
        double mx = cls.at(q, 0);
        for (int c = 1; c <= k; ++c) mx = std::max(mx, cls.at(q, c));
        double denom = 0;
        for (int c = 0; c <= k; ++c) denom += std::exp(cls.at(q, c) - mx);
        int best = 0;
        for (int c = 1; c < k; ++c)
            if (cls.at(q, c) > cls.at(q, best)) best = c;
        const double p = std::exp(cls.at(q, best) - mx) / denom;
        if (p > confidence_threshold) kept.push_back({q, best, p});
    }

    std::vector<std::vector<uint8_t>> owned(kept.size(),
                                            std::vector<uint8_t>(static_cast<size_t>(pixels), 0));
    for (int64_t px = 0; px < pixels; ++px) {
        int winner = -1;
        double best_score = 0.0;
        for (size_t i = 0; i < kept.size(); ++i) {
            const double m = 1.0 / (1.0 + std::exp(-msk.at(kept[i].query, px)));
            if (m <= mask_threshold) continue;
            const double score = kept[i].score * m;
            if (score > best_score) {
                best_score = score;
                winner = static_cast<int>(i);
            }
        }
        if (winner >= 0) owned[static_cast<size_t>(winner)][static_cast<size_t>(px)] = 1;
    }

    std::vector<Segment> segments;
    for (size_t i = 0; i < kept.size(); ++i) {
        Segment seg;
        seg.class_id = slot_to_class[static_cast<size_t>(kept[i].slot)];
        seg.mask = std::move(owned[i]);
        if (seg.area() > 0) segments.push_back(std::move(seg));
    }
    return segments;
}

EvalResult evaluate_model(const Model& model, const PrototypeSet* protos,
                          const AblationFlags& abl, const Config& cfg,
                          const std::vector<int>& order, int visible_count) {
    const ShapeWorldConfig world = world_config_from(cfg);
    const int64_t eval_size = cfg.get_int("data.eval_size");
    const double conf = cfg.get_double("infer.confidence_threshold");
    const double maskth = cfg.get_double("infer.mask_threshold");

    std::set<int> visible(order.begin(), order.begin() + visible_count);
    PQAccumulator pq;
    IoUAccumulator iou;
    for (int64_t i = 0; i < eval_size; ++i) {
        Sample s = generate(world, kEvalIndexBase + i);
        const Annotation gt = stage_view(s.annotation, visible);
        MultiScaleFeatures f = model.encode(s.image);
        ForwardResult fwd = decode_from(model, f, protos, abl.qpa, true, Var());
        std::vector<Segment> segs =
            panoptic_inference(fwd.dec.preds, order, conf, maskth);
        pq.add_image(segs, gt.segments);

        Annotation pred_ann;
        pred_ann.height = gt.height;
        pred_ann.width = gt.width;
        pred_ann.segments = segs;
        iou.add_image(semantic_map(pred_ann), semantic_map(gt));
    }
    return {pq.result(), iou.result()};
}

std::string checkpoint_path_for(const std::string& run_dir, int stage) {
    return run_dir + "/stage_" + std::to_string(stage) + ".ckpt";
}

StageOutcome run_stage(const Config& cfg, const StagePlan& plan, int stage,
                       const std::string& run_dir) {
    const double t_start = wall_clock();
    const ModelConfig mc = model_config_from(cfg);
    const ShapeWorldConfig world = world_config_from(cfg);
    const AblationFlags abl = ablation_from(cfg);
    const LossWeights lw = loss_weights_from(cfg);
    const CostWeights cw = cost_weights_from(cfg);
    const uint64_t seed = static_cast<uint64_t>(cfg.get_int("plan.seed"));
    const double psd_conf = cfg.get_double("psd.confidence_threshold");
    const double mask_thresh = cfg.get_double("infer.mask_threshold");
    const double proto_scale = cfg.get_double("qpa.prototype_init_scale");
    const bool stop_grad = cfg.get_bool("qpa.stop_gradient");
    const int64_t train_size = cfg.get_int("data.train_size");

    const int k_total = plan.visible_count(stage);
    const int k_prev = stage == 0 ? 0 : plan.visible_count(stage - 1);
    const std::vector<int> new_classes = plan.new_classes_at(stage);

    Rng rng_proto(mix_seed(seed, kSaltProto + static_cast<uint64_t>(stage)));
    Rng rng_train(mix_seed(seed, kSaltTrain + static_cast<uint64_t>(stage)));
    Rng rng_grow(mix_seed(seed, kSaltGrow + static_cast<uint64_t>(stage)));

    // --- Build this stage's model, prototypes, bank, and the frozen
    // previous-stage model.
    std::unique_ptr<Model> model, prev_model;
    PrototypeSet protos, prev_protos;
    ParamStore prev_ps;
    VirtualQueryBank bank(mc.dim, static_cast<int>(cfg.get_int("vq.queue_capacity")));
    std::vector<double> pq_history, miou_history;

    if (stage == 0) {
        model = std::make_unique<Model>(mc, k_total, mix_seed(seed, kSaltModelInit));
        PrototypeSet empty;
        empty.dim = mc.dim;
        protos = concat_prototypes(empty, new_classes, 0, proto_scale, rng_proto,
                                   model->params());
    } else {
        const std::string prev_path = checkpoint_path_for(run_dir, stage - 1);
        if (!fs::exists(prev_path))
            throw HarnessError("stage " + std::to_string(stage) +
                               ": missing previous checkpoint '" + prev_path + "'");
        const Checkpoint prev_ck = load_checkpoint(prev_path);
        if (prev_ck.num_classes != k_prev)
            throw HarnessError("previous checkpoint class count does not match the plan");

        model = std::make_unique<Model>(restore_model(prev_ck, mc));
        model->grow_class_head(k_total, rng_grow);
        protos = restore_prototypes(prev_ck, model->params());
        protos = concat_prototypes(protos, new_classes, stage, proto_scale, rng_proto,
                                   model->params());
        bank = restore_bank(prev_ck);
        pq_history = prev_ck.all_history;
        miou_history = prev_ck.miou_history;

        prev_model = std::make_unique<Model>(restore_model(prev_ck, mc));
        freeze_all(prev_model->params());
        prev_protos = restore_prototypes(prev_ck, prev_ps);
        freeze_all(prev_ps);
    }
    protos.set_freeze_old(cfg.get_bool("qpa.freeze_old_prototypes"));

    const StageData data(world, static_cast<int64_t>(stage) * train_size,
                         static_cast<int64_t>(stage + 1) * train_size,
                         {new_classes.begin(), new_classes.end()});

    std::set<int> old_slots;
    for (int s = 0; s < k_prev; ++s) old_slots.insert(s);

    // --- Frozen previous-model outputs, cached per image. The previous model
    // never changes within a stage, so its predictions, selection, and teacher
    // rows for a given image are loop invariants; computing them once per
    // image (instead of once per iteration) removes most of the teacher-side
    // cost of incremental stages without changing any result.
    struct PrevOutputs {
        bool ready = false;
        PredictionSet preds;            // detached previous-stage predictions
        std::vector<int64_t> sel_flat;  // previous-stage selected positions
        Tensor teacher;                 // feature rows at sel_flat
    };
    const bool want_psd = abl.psd && stage > 0;
    const bool want_csl = abl.csl && abl.qpa && stage > 0;
    const bool want_vq = abl.vq && stage > 0;
    std::vector<PrevOutputs> prev_cache;
    if (want_psd || want_csl || want_vq)
        prev_cache.resize(static_cast<size_t>(data.size()));
    auto prev_outputs_for = [&](const Sample& sample, int64_t local) -> const PrevOutputs& {
        PrevOutputs& pc = prev_cache[static_cast<size_t>(local)];
        if (!pc.ready) {
            MultiScaleFeatures f_prev = prev_model->encode(sample.image);
            if (want_psd || want_vq) {
                ForwardResult prev_fwd =
                    decode_from(*prev_model, f_prev, &prev_protos, abl.qpa, true, Var());
                pc.preds.class_logits = Var::constant(prev_fwd.dec.preds.class_logits.value());
                pc.preds.mask_logits = Var::constant(prev_fwd.dec.preds.mask_logits.value());
                pc.preds.height = prev_fwd.dec.preds.height;
                pc.preds.width = prev_fwd.dec.preds.width;
                pc.preds.num_classes = prev_fwd.dec.preds.num_classes;
            }
            if (want_csl) {
                const SelectionIndex prev_sel =
                    previous_stage_selection(f_prev, prev_protos, mc.num_queries);
                pc.sel_flat = prev_sel.flat;
                pc.teacher = gather_rows(f_prev.all_rows, prev_sel.flat).value();
            }
            pc.ready = true;
        }
        return pc;
    };

    // --- Pseudo-distribution statistics and replay weights (computed once,
    // before the training loop).
    std::map<int, double> vq_weights;
    if (want_vq) {
        std::map<int, int64_t> counts;
        for (int s = 0; s < k_prev; ++s) counts[s] = 0;
        for (int64_t i = 0; i < data.size(); ++i) {
            const Sample s = data.fetch(data.lo() + i);
            tally_confident(prev_outputs_for(s, i).preds, old_slots, psd_conf, counts);
        }
        vq_weights = pseudo_weights(counts);
    }

    // --- Training loop.
    const int iters = plan.iters_at(stage);
    const double lr0 =
        stage == 0 ? cfg.get_double("optim.base_lr") : cfg.get_double("optim.incr_lr");
    AdamW opt(lr0, cfg.get_double("optim.weight_decay"));
    const int milestone =
        static_cast<int>(cfg.get_double("optim.lr_decay_at") * iters);
    const int vq_per_batch = static_cast<int>(cfg.get_int("vq.per_batch"));

    // Rolled back to on a mid-training explosion: the newest parameter state
    // that produced a finite loss.
    std::vector<Tensor> last_good;
    bool have_last_good = false;

    for (int iter = 0; iter < iters; ++iter) {
        try {
        if (iter == milestone && milestone > 0)
            opt.set_lr(lr0 * cfg.get_double("optim.lr_decay_factor"));

        const int64_t idx = data.lo() + rng_train.uniform_int(0, data.size() - 1);
        const Sample sample = data.fetch(idx);
        Annotation train_ann = to_slot_space(sample.annotation, plan.order);

        MultiScaleFeatures f_t = model->encode(sample.image);

        // Previous-stage pipeline: pseudo-labels and selection consistency.
        Var csl_term;
        if (want_psd || want_csl) {
            const PrevOutputs& pc = prev_outputs_for(sample, idx - data.lo());
            if (want_psd)
                train_ann = fuse_pseudo_labels(train_ann, pc.preds, old_slots, psd_conf,
                                               mask_thresh);
            if (want_csl) {
                const Var teacher = Var::constant(pc.teacher);
                const Var student = gather_rows(f_t.all_rows, pc.sel_flat);
                csl_term = csl_loss(teacher, student, prev_protos);
            }
        }

        // Virtual queries ride along the decoder as constants.
        VirtualSample vs;
        Var virt;
        if (abl.vq && stage > 0) {
            vs = sample_virtual(bank, vq_weights, vq_per_batch, rng_train);
            if (vs.features.dim(0) > 0) virt = Var::constant(vs.features);
        }

        ForwardResult fwd = decode_from(*model, f_t, &protos, abl.qpa, stop_grad, virt);
        const Assignment assignment = hungarian_match(fwd.dec.preds, train_ann, cw);
        const CriterionOutput crit = set_criterion(fwd.dec.preds, train_ann, assignment, lw);

        if (abl.vq)
            enqueue_matched(bank, fwd.dec.real.value(), train_ann, assignment);

        Var total = add(scale(crit.l_class, lw.cls), crit.l_mask);
        if (want_csl)
            total = add(total, scale(csl_term, cfg.get_double("csl.weight")));
        if (fwd.used_qpa) {
            std::vector<int> targets(static_cast<size_t>(mc.num_queries), -1);
            for (const auto& [q, g] : assignment.pairs)
                targets[static_cast<size_t>(q)] =
                    plan.order[static_cast<size_t>(train_ann.segments[static_cast<size_t>(g)]
                                                       .class_id)];
            const Var sel_loss = prototype_selection_loss(fwd.selected, protos, targets);
            total = add(total, scale(sel_loss, cfg.get_double("qpa.selection_loss_weight")));
        }
        if (virt.defined())
            total = add(total, scale(virtual_class_loss(fwd.dec.virt_class_logits, vs.labels),
                                     lw.cls));

        if (!std::isfinite(total.scalar()))
            throw std::runtime_error("non-finite loss");

        {
            const auto& items = model->params().items();
            last_good.resize(items.size());
            for (std::size_t i = 0; i < items.size(); ++i)
                last_good[i] = items[i].second.value();
            have_last_good = true;
        }

        model->params().zero_grad();
        backward(total);
        opt.step(model->params());
        } catch (const HarnessError&) {
            throw;
        } catch (const std::exception& e) {
            if (have_last_good) {
                const auto& items = model->params().items();
                for (std::size_t i = 0; i < items.size(); ++i) {
                    Var p = items[i].second;
                    p.value() = last_good[i];
                }
            }
            const std::string aborted = checkpoint_path_for(run_dir, stage) + ".aborted";
            save_checkpoint(aborted, make_checkpoint(cfg, stage, *model, protos, bank,
                                                     rng_train, plan.order, pq_history,
                                                     miou_history));
            throw HarnessError("stage " + std::to_string(stage) + ": optimization diverged at iteration " +
                               std::to_string(iter) + " (" + e.what() +
                               "); last-good state saved to '" + aborted + "'");
        }
    }

    // --- Evaluate and persist.
    const EvalResult eval =
        evaluate_model(*model, &protos, abl, cfg, plan.order, k_total);
    GroupReport pq_rep = group_report(eval.pq.per_class, plan.order, plan.base_classes,
                                      plan.incr_classes, stage, pq_history);
    GroupReport miou_rep = group_report(eval.miou.per_class, plan.order, plan.base_classes,
                                        plan.incr_classes, stage, miou_history);
    pq_history.push_back(pq_rep.all);
    miou_history.push_back(miou_rep.all);

    StageOutcome out;
    out.pq = pq_rep;
    out.miou = miou_rep;
    out.checkpoint_path = checkpoint_path_for(run_dir, stage);
    out.pq_all_history = pq_history;
    out.miou_all_history = miou_history;
    save_checkpoint(out.checkpoint_path,
                    make_checkpoint(cfg, stage, *model, protos, bank, rng_train, plan.order,
                                    pq_history, miou_history));
    out.wall_seconds = wall_clock() - t_start;
    return out;
}

RunResult run_experiment(const Config& cfg, const std::string& run_dir, bool resume) {
    fs::create_directories(run_dir);
    const std::string snapshot_path = run_dir + "/config.txt";
    if (resume && fs::exists(snapshot_path)) {
        const Config existing = load_config_file(snapshot_path);
        if (existing.hash() != cfg.hash())
            throw HarnessError("resume: config hash " + cfg.hash() +
                               " does not match the run's snapshot " + existing.hash());
    } else {
        std::ofstream snap(snapshot_path, std::ios::trunc);
        snap << cfg.serialize();
        if (!snap) throw HarnessError("cannot write config snapshot '" + snapshot_path + "'");
    }

    const StagePlan plan = plan_from_config(cfg);
    const AblationFlags abl = ablation_from(cfg);
    const ModelConfig mc = model_config_from(cfg);

    RunResult result;
    result.run_dir = run_dir;
    result.config_hash = cfg.hash();
    result.metrics_csv_path = run_dir + "/metrics.csv";

    std::ofstream log(run_dir + "/run.log", resume ? std::ios::app : std::ios::trunc);
    log << "run config hash " << cfg.hash() << ", stages " << plan.num_stages() << "\n";

    for (int t = 0; t < plan.num_stages(); ++t) {
        const std::string ck_path = checkpoint_path_for(run_dir, t);
        StageOutcome out;
        if (resume && fs::exists(ck_path)) {
            // Completed stage: recompute its reports from the checkpoint
            // (deterministic evaluation, so this reproduces the original rows).
            const Checkpoint ck = load_checkpoint(ck_path);
            ParamStore aux;
            Model model = restore_model(ck, mc);
            PrototypeSet protos = restore_prototypes(ck, aux);
            const EvalResult eval =
                evaluate_model(model, &protos, abl, cfg, ck.class_order, ck.num_classes);
            std::vector<double> prev_pq(ck.all_history.begin(),
                                        ck.all_history.end() - (ck.all_history.empty() ? 0 : 1));
            std::vector<double> prev_miou(
                ck.miou_history.begin(),
                ck.miou_history.end() - (ck.miou_history.empty() ? 0 : 1));
            out.pq = group_report(eval.pq.per_class, plan.order, plan.base_classes,
                                  plan.incr_classes, t, prev_pq);
            out.miou = group_report(eval.miou.per_class, plan.order, plan.base_classes,
                                    plan.incr_classes, t, prev_miou);
            out.checkpoint_path = ck_path;
            out.pq_all_history = ck.all_history;
            out.miou_all_history = ck.miou_history;
            log << "stage " << t << ": resumed from checkpoint\n";
        } else {
            out = run_stage(cfg, plan, t, run_dir);
            log << "stage " << t << ": pq_all=" << out.pq.all << " miou_all=" << out.miou.all
                << " wall=" << out.wall_seconds << "s\n";
        }
        result.pq_reports.push_back(out.pq);
        result.miou_reports.push_back(out.miou);
        result.checkpoint_paths.push_back(out.checkpoint_path);
        write_metrics_csv(result.metrics_csv_path, result.pq_reports, result.miou_reports);
    }
    return result;
}

}  // namespace simcis
