// Python bindings for the core operations: selection, matching, replay
// weighting, metrics, the synthetic world, storage arithmetic, and a small
// end-to-end training entry point.

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <cstring>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "simcis/config.hpp"
#include "simcis/continual_harness.hpp"
#include "simcis/matching_losses.hpp"
#include "simcis/metrics.hpp"
#include "simcis/qpa.hpp"
#include "simcis/storage.hpp"
#include "simcis/synthetic_data.hpp"
#include "simcis/tensor.hpp"
#include "simcis/vq_bank.hpp"

namespace py = pybind11;
using namespace simcis;

namespace {

py::array_t<double> tensor_to_array(const Tensor& t) {
    std::vector<py::ssize_t> shape(t.shape.begin(), t.shape.end());
    py::array_t<double> out(shape);
    std::memcpy(out.mutable_data(), t.ptr(), sizeof(double) * static_cast<size_t>(t.numel()));
    return out;
}

std::vector<Segment> segments_from_py(const std::vector<std::pair<int, std::vector<uint8_t>>>& raw) {
    std::vector<Segment> out;
    out.reserve(raw.size());
    for (const auto& [cls, mask] : raw) {
        Segment s;
        s.class_id = cls;
        s.mask = mask;
        out.push_back(std::move(s));
    }
    return out;
}

py::dict group_report_to_dict(const GroupReport& g) {
    py::dict d;
    d["base"] = g.base;
    d["all"] = g.all;
    d["avg"] = g.avg;
    if (g.has_fresh) d["fresh"] = g.fresh;
    return d;
}

}  // namespace

PYBIND11_MODULE(_simcis, m) {
    m.doc() = "Continual instance segmentation core: selection, matching, replay, metrics";

    m.def(
        "select_topk",
        [](const std::vector<double>& scores, int n) {
            const Tensor t({static_cast<int64_t>(scores.size())}, scores);
            return select_topk_flat(t, n);
        },
        py::arg("scores"), py::arg("n"),
        "Indices and scores of the n largest entries, ties broken by lower index");

    m.def(
        "solve_assignment",
        [](const std::vector<std::vector<double>>& cost) { return solve_assignment(cost); },
        py::arg("cost"),
        "Minimum-cost row-to-column assignment; returns (column per row, total cost)");

    m.def("pseudo_weights", &pseudo_weights, py::arg("counts"),
          "Replay weights from per-class confident counts: w_j = sqrt(sum_i c_i / c_j)");

    m.def(
        "panoptic_quality",
        [](const std::vector<std::pair<int, std::vector<uint8_t>>>& pred,
           const std::vector<std::pair<int, std::vector<uint8_t>>>& gt) {
            const PQResult r = panoptic_quality(segments_from_py(pred), segments_from_py(gt));
            py::dict d;
            d["per_class"] = r.per_class;
            d["pq"] = r.pq;
            return d;
        },
        py::arg("pred"), py::arg("gt"),
        "Panoptic quality over two segment lists; a segment is (class_id, flat 0/1 mask)");

    m.def(
        "mean_iou",
        [](const std::vector<int>& pred, const std::vector<int>& gt) {
            const IoUResult r = mean_iou(pred, gt);
            py::dict d;
            d["per_class"] = r.per_class;
            d["miou"] = r.miou;
            return d;
        },
        py::arg("pred"), py::arg("gt"),
        "Mean IoU over per-pixel class maps (-1 = background)");

    m.def(
        "generate",
        [](int64_t index, int image_size, int num_classes, int min_instances, int max_instances,
           uint64_t seed) {
            ShapeWorldConfig cfg;
            cfg.image_size = image_size;
            cfg.num_classes = num_classes;
            cfg.min_instances = min_instances;
            cfg.max_instances = max_instances;
            cfg.seed = seed;
            const Sample s = generate(cfg, index);
            py::list segs;
            for (const Segment& seg : s.annotation.segments) {
                py::dict e;
                e["class_id"] = seg.class_id;
                std::vector<py::ssize_t> shape{s.annotation.height, s.annotation.width};
                py::array_t<uint8_t> mask(shape);
                std::memcpy(mask.mutable_data(), seg.mask.data(), seg.mask.size());
                e["mask"] = mask;
                segs.append(e);
            }
            py::dict d;
            d["image"] = tensor_to_array(s.image);
            d["segments"] = segs;
            return d;
        },
        py::arg("index"), py::arg("image_size") = 32, py::arg("num_classes") = 16,
        py::arg("min_instances") = 1, py::arg("max_instances") = 3, py::arg("seed") = 0,
        "Deterministic synthetic scene: image [3,H,W] in [0,1] plus instance masks");

    m.def("vq_storage_bytes", &vq_storage_bytes, py::arg("capacity_per_class"),
          py::arg("num_classes"), py::arg("dim"), py::arg("bytes_per_real"),
          "Bytes held by a full per-class query bank");

    m.def("image_replay_bytes", &image_replay_bytes, py::arg("num_images"),
          py::arg("bytes_per_image"), "Bytes held by a raw image replay buffer");

    m.def(
        "reference_scale_storage",
        []() {
            const StorageComparison c = reference_scale_storage();
            py::dict d;
            d["vq_bytes"] = c.vq_bytes;
            d["image_bytes"] = c.image_bytes;
            d["ratio"] = c.ratio;
            return d;
        },
        "Query-bank vs image-replay bytes at the reference operating point");

    py::class_<VirtualQueryBank>(m, "VirtualQueryBank")
        .def(py::init<int64_t, int>(), py::arg("dim"), py::arg("capacity"))
        .def("enqueue", &VirtualQueryBank::enqueue, py::arg("class_id"), py::arg("vec"))
        .def("class_ids", &VirtualQueryBank::class_ids)
        .def("total_vectors", &VirtualQueryBank::total_vectors)
        .def("storage_bytes", &VirtualQueryBank::storage_bytes, py::arg("bytes_per_real"))
        .def_property_readonly("dim", &VirtualQueryBank::dim)
        .def_property_readonly("capacity", &VirtualQueryBank::capacity);

    m.def(
        "run_experiment",
        [](const std::string& out_dir, const std::map<std::string, std::string>& overrides,
           uint64_t seed, const std::vector<std::string>& ablate) {
            Config cfg = Config::defaults();
            for (const auto& [k, v] : overrides) cfg.set(k, v);
            cfg.set("plan.seed", std::to_string(seed));
            for (const std::string& a : ablate) cfg.set(a + ".enabled", "false");
            const RunResult res = run_experiment(cfg, out_dir);
            py::list pq, miou;
            for (const GroupReport& g : res.pq_reports) pq.append(group_report_to_dict(g));
            for (const GroupReport& g : res.miou_reports) miou.append(group_report_to_dict(g));
            py::dict d;
            d["pq"] = pq;
            d["miou"] = miou;
            d["run_dir"] = res.run_dir;
            d["metrics_csv"] = res.metrics_csv_path;
            d["checkpoints"] = res.checkpoint_paths;
            d["config_hash"] = res.config_hash;
            return d;
        },
        py::arg("out_dir"), py::arg("overrides") = std::map<std::string, std::string>{},
        py::arg("seed") = 0, py::arg("ablate") = std::vector<std::string>{},
        "Full staged training run; returns per-stage PQ and mIoU group reports");

    m.def(
        "config_defaults", []() { return Config::defaults().items(); },
        "All configuration keys with their default values");
}
