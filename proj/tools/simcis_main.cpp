// Command-line front end: train / eval / storage-report.
//
// Exit codes: 0 success, 2 configuration error (bad keys, values, flags),
// 3 runtime abort (missing artifacts, diverged optimization).

#include "CLI11.hpp"

#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "simcis/checkpoint.hpp"
#include "simcis/config.hpp"
#include "simcis/continual_harness.hpp"
#include "simcis/storage.hpp"

namespace fs = std::filesystem;
using namespace simcis;

namespace {

std::string run_root() {
    if (const char* env = std::getenv("SIMCIS_RUN_ROOT"); env && *env) return env;
    return "runs";
}

std::string fmt4(double v) {
    char b[40];
    std::snprintf(b, sizeof b, "%.4f", v);
    return b;
}

std::string fmt10(double v) {
    char b[40];
    std::snprintf(b, sizeof b, "%.10g", v);
    return b;
}

// ---------------------------------------------------------------- train ----

struct TrainArgs {
    std::string config_path;
    std::vector<std::string> sets;
    std::vector<std::string> ablations;
    std::string order;
    std::optional<std::int64_t> order_seed;
    std::optional<std::int64_t> seed;
    std::string out_dir;
    bool resume = false;
};

Config assemble_config(const TrainArgs& a) {
    Config cfg = a.config_path.empty() ? Config::defaults() : load_config_file(a.config_path);
    apply_overrides(cfg, a.sets);
    for (const std::string& name : a.ablations) {
        if (name != "psd" && name != "qpa" && name != "csl" && name != "vq")
            throw ConfigError("unknown ablation '" + name + "' (choose from psd, qpa, csl, vq)");
        cfg.set(name + ".enabled", "false");
    }
    if (!a.order.empty()) cfg.set("plan.order", a.order);
    if (a.order_seed) cfg.set("plan.order_seed", std::to_string(*a.order_seed));
    if (a.seed) cfg.set("plan.seed", std::to_string(*a.seed));
    return cfg;
}

void print_stage_row(int stage, const GroupReport& pq, const GroupReport& miou) {
    std::cout << "  stage " << stage << "  pq base=" << fmt4(pq.base);
    if (pq.has_fresh) std::cout << " fresh=" << fmt4(pq.fresh);
    std::cout << " all=" << fmt4(pq.all) << " avg=" << fmt4(pq.avg)
              << " | miou all=" << fmt4(miou.all) << " avg=" << fmt4(miou.avg) << "\n";
}

int cmd_train(const TrainArgs& a) {
    const Config cfg = assemble_config(a);
    const std::string dir = a.out_dir.empty() ? run_root() + "/" + cfg.hash() : a.out_dir;
    const RunResult res = run_experiment(cfg, dir, a.resume);
    std::cout << "run " << res.run_dir << " (config " << res.config_hash << ")\n";
    for (std::size_t s = 0; s < res.pq_reports.size(); ++s)
        print_stage_row(static_cast<int>(s), res.pq_reports[s], res.miou_reports[s]);
    std::cout << "metrics: " << res.metrics_csv_path << "\n";
    return 0;
}

// ----------------------------------------------------------------- eval ----

struct EvalRow {
    std::string path;
    std::string order_label;
    int stage = 0;
    int classes = 0;
    GroupReport pq, miou;
};

std::string order_label_of(const Config& cfg) {
    const std::string mode = cfg.get("plan.order");
    if (mode == "shuffle") return "shuffle(order_seed=" + cfg.get("plan.order_seed") + ")";
    return mode;
}

EvalRow eval_checkpoint(const std::string& path) {
    const Checkpoint ck = load_checkpoint(path);
    const Config& cfg = ck.config;
    const StagePlan plan = plan_from_config(cfg);
    const ModelConfig mc = model_config_from(cfg);
    Model model = restore_model(ck, mc);
    const PrototypeSet protos = restore_prototypes(ck, model.params());
    const AblationFlags abl = ablation_from(cfg);
    const EvalResult ev =
        evaluate_model(model, &protos, abl, cfg, ck.class_order, ck.num_classes);

    // Histories in the checkpoint end with the stage's own entry; the report
    // wants only the earlier stages.
    std::vector<double> prev_pq = ck.all_history;
    if (!prev_pq.empty()) prev_pq.pop_back();
    std::vector<double> prev_miou = ck.miou_history;
    if (!prev_miou.empty()) prev_miou.pop_back();

    EvalRow row;
    row.path = path;
    row.order_label = order_label_of(cfg);
    row.stage = ck.stage;
    row.classes = ck.num_classes;
    row.pq = group_report(ev.pq.per_class, ck.class_order, plan.base_classes,
                          plan.incr_classes, ck.stage, prev_pq);
    row.miou = group_report(ev.miou.per_class, ck.class_order, plan.base_classes,
                            plan.incr_classes, ck.stage, prev_miou);
    return row;
}

void write_eval_csv(std::ostream& os, const std::vector<EvalRow>& rows) {
    os << "checkpoint,stage,group,metric,value\n";
    for (const EvalRow& r : rows) {
        const auto emit = [&](const char* metric, const GroupReport& g) {
            os << r.path << "," << r.stage << ",base," << metric << "," << fmt10(g.base) << "\n";
            if (g.has_fresh)
                os << r.path << "," << r.stage << ",fresh," << metric << "," << fmt10(g.fresh)
                   << "\n";
            os << r.path << "," << r.stage << ",all," << metric << "," << fmt10(g.all) << "\n";
            os << r.path << "," << r.stage << ",avg," << metric << "," << fmt10(g.avg) << "\n";
        };
        emit("pq", r.pq);
        emit("miou", r.miou);
    }
}

int cmd_eval(const std::vector<std::string>& paths, const std::string& group_by,
             const std::string& csv_path) {
    std::vector<EvalRow> rows;
    rows.reserve(paths.size());
    for (const std::string& p : paths) rows.push_back(eval_checkpoint(p));

    if (group_by == "order") {
        std::cout << "order                     stage  pq.base  pq.all  pq.avg  miou.all\n";
        for (const EvalRow& r : rows) {
            char line[160];
            std::snprintf(line, sizeof line, "%-25s %-6d %-8s %-7s %-7s %s",
                          r.order_label.c_str(), r.stage, fmt4(r.pq.base).c_str(),
                          fmt4(r.pq.all).c_str(), fmt4(r.pq.avg).c_str(),
                          fmt4(r.miou.all).c_str());
            std::cout << line << "\n";
        }
    } else {
        for (const EvalRow& r : rows) {
            std::cout << "checkpoint " << r.path << " (stage " << r.stage << ", " << r.classes
                      << " classes, order " << r.order_label << ")\n";
            print_stage_row(r.stage, r.pq, r.miou);
        }
    }

    if (!csv_path.empty()) {
        std::ofstream out(csv_path);
        if (!out) throw HarnessError("cannot write CSV to '" + csv_path + "'");
        write_eval_csv(out, rows);
        std::cout << "csv: " << csv_path << "\n";
    } else {
        write_eval_csv(std::cout, rows);
    }
    return 0;
}

// ------------------------------------------------------- storage-report ----

struct StorageArgs {
    std::string bank_path;
    std::optional<std::int64_t> capacity, classes, dim;
    std::int64_t bytes_per_real = 4;
    std::optional<std::int64_t> images;
    std::int64_t bytes_per_image = 3072;  // 32x32 RGB, one byte per channel
    std::string image_dir;
    bool reference = false;
};

int cmd_storage_report(const StorageArgs& a) {
    bool printed = false;

    if (!a.bank_path.empty()) {
        const Checkpoint ck = load_checkpoint(a.bank_path);
        const VirtualQueryBank bank = restore_bank(ck);
        std::cout << "bank.file = " << a.bank_path << "\n"
                  << "bank.classes = " << ck.num_classes << "\n"
                  << "bank.capacity_per_class = " << ck.bank_capacity << "\n"
                  << "bank.dim = " << ck.bank_dim << "\n"
                  << "bank.vectors = " << bank.total_vectors() << "\n"
                  << "bank.payload_bytes = " << bank.storage_bytes(static_cast<int>(a.bytes_per_real))
                  << "\n"
                  << "bank.capacity_bytes = "
                  << vq_storage_bytes(ck.bank_capacity, ck.num_classes, ck.bank_dim,
                                      a.bytes_per_real)
                  << "\n";
        printed = true;
    }

    if (a.capacity || a.classes || a.dim) {
        if (!(a.capacity && a.classes && a.dim))
            throw ConfigError("--capacity, --classes and --dim must be given together");
        std::cout << "vq.closed_form_bytes = "
                  << vq_storage_bytes(*a.capacity, *a.classes, *a.dim, a.bytes_per_real) << "\n";
        printed = true;
    }

    if (a.images) {
        std::cout << "image.closed_form_bytes = "
                  << image_replay_bytes(*a.images, a.bytes_per_image) << "\n";
        printed = true;
    }

    if (!a.image_dir.empty()) {
        if (!fs::is_directory(a.image_dir))
            throw HarnessError("image replay directory '" + a.image_dir + "' does not exist");
        std::int64_t bytes = 0, files = 0;
        for (const auto& entry : fs::recursive_directory_iterator(a.image_dir)) {
            if (!entry.is_regular_file()) continue;
            bytes += static_cast<std::int64_t>(entry.file_size());
            ++files;
        }
        std::cout << "image.dir = " << a.image_dir << "\n"
                  << "image.dir_files = " << files << "\n"
                  << "image.dir_bytes = " << bytes << "\n";
        printed = true;
    }

    if (a.reference || !printed) {
        const StorageComparison ref = reference_scale_storage();
        std::cout << "reference.vq_bytes = " << ref.vq_bytes << "\n"
                  << "reference.image_bytes = " << ref.image_bytes << "\n"
                  << "reference.vq_over_image = " << fmt4(ref.ratio) << "\n";
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Continual panoptic segmentation on synthetic shapes"};
    app.require_subcommand(1);

    TrainArgs ta;
    CLI::App* train = app.add_subcommand("train", "Run the staged training plan end to end");
    train->add_option("--config", ta.config_path, "Config file (key = value lines); defaults used if omitted")
        ->check(CLI::ExistingFile);
    train->add_option("--set", ta.sets, "Override a config key, e.g. --set model.dim=64 (repeatable)");
    train->add_option("--ablate", ta.ablations, "Disable a component: psd, qpa, csl, vq (repeatable)");
    train->add_option("--order", ta.order, "Class order: ascending, descending, shuffle");
    std::int64_t order_seed_val = 0, seed_val = 0;
    CLI::Option* order_seed_opt =
        train->add_option("--order-seed", order_seed_val, "Seed for --order shuffle");
    CLI::Option* seed_opt = train->add_option("--seed", seed_val, "Experiment seed (plan.seed)");
    train->add_option("--out", ta.out_dir,
                      "Run directory (default: $SIMCIS_RUN_ROOT or ./runs, named by config hash)");
    train->add_flag("--resume", ta.resume, "Reuse finished stages from their checkpoints");

    std::vector<std::string> eval_paths;
    std::string group_by, eval_csv;
    CLI::App* eval = app.add_subcommand("eval", "Evaluate saved checkpoints");
    eval->add_option("checkpoints", eval_paths, "Checkpoint files")
        ->required()
        ->check(CLI::ExistingFile);
    eval->add_option("--group-by", group_by, "'order' prints one summary row per checkpoint")
        ->check(CLI::IsMember({"order"}));
    eval->add_option("--csv", eval_csv, "Write the CSV block to this file instead of stdout");

    StorageArgs sa;
    CLI::App* storage = app.add_subcommand(
        "storage-report", "Byte accounting for virtual-query banks and image-replay buffers");
    storage->add_option("--bank", sa.bank_path, "Checkpoint whose stored bank to measure")
        ->check(CLI::ExistingFile);
    std::int64_t cap_v = 0, cls_v = 0, dim_v = 0, imgs_v = 0;
    CLI::Option* cap_o = storage->add_option("--capacity", cap_v, "Closed form: per-class queue capacity");
    CLI::Option* cls_o = storage->add_option("--classes", cls_v, "Closed form: number of classes");
    CLI::Option* dim_o = storage->add_option("--dim", dim_v, "Closed form: vector dimension");
    storage->add_option("--bytes-per-real", sa.bytes_per_real, "Bytes per stored real (default 4)");
    CLI::Option* imgs_o = storage->add_option("--images", imgs_v, "Closed form: number of replay images");
    storage->add_option("--bytes-per-image", sa.bytes_per_image,
                        "Bytes per replay image (default 3072 = 32x32x3)");
    storage->add_option("--image-dir", sa.image_dir, "Sum the file sizes of an image-replay directory");
    storage->add_flag("--reference-scale", sa.reference,
                      "Print the realistic-dimensions comparison (also the default with no flags)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);  // prints the message
        return 2;
    }

    if (order_seed_opt->count() > 0) ta.order_seed = order_seed_val;
    if (seed_opt->count() > 0) ta.seed = seed_val;
    if (cap_o->count() > 0) sa.capacity = cap_v;
    if (cls_o->count() > 0) sa.classes = cls_v;
    if (dim_o->count() > 0) sa.dim = dim_v;
    if (imgs_o->count() > 0) sa.images = imgs_v;

    try {
        if (train->parsed()) return cmd_train(ta);
        if (eval->parsed()) return cmd_eval(eval_paths, group_by, eval_csv);
        if (storage->parsed()) return cmd_storage_report(sa);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
    return 0;
}
