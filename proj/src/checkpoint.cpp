#include "simcis/checkpoint.hpp"

#include <cstdint>
#include <fstream>

#include <json.hpp>

namespace simcis {

namespace {

using nlohmann::json;

constexpr char kMagic[4] = {'S', 'C', 'K', 'P'};
constexpr uint32_t kVersion = 1;

void write_u32(std::ostream& out, uint32_t v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}
void write_u64(std::ostream& out, uint64_t v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}
uint32_t read_u32(std::istream& in) {
    uint32_t v = 0;
    in.read(reinterpret_cast<char*>(&v), sizeof(v));
    return v;
}
uint64_t read_u64(std::istream& in) {
    uint64_t v = 0;
    in.read(reinterpret_cast<char*>(&v), sizeof(v));
    return v;
}

// Appends a block to the payload and returns its offset (in doubles).
uint64_t append(std::vector<double>& payload, const double* src, size_t n) {
    const uint64_t off = payload.size();
    payload.insert(payload.end(), src, src + n);
    return off;
}

std::vector<int> stage_labels_of(const Checkpoint& ck) {
    std::vector<int> labels;
    for (int s : ck.proto_stage_of)
        if (labels.empty() || labels.back() != s) labels.push_back(s);
    if (labels.size() != ck.proto_stage_vecs.size())
        throw CheckpointError("checkpoint: prototype stage labels inconsistent");
    return labels;
}

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ck) {
    std::vector<double> payload;
    json m;
    m["stage"] = ck.stage;
    m["num_classes"] = ck.num_classes;
    m["class_order"] = ck.class_order;
    m["config"] = ck.config.serialize();
    m["rng"] = ck.rng_state;

    m["all_history"] = {{"offset", append(payload, ck.all_history.data(), ck.all_history.size())},
                        {"count", ck.all_history.size()}};
    m["miou_history"] = {
        {"offset", append(payload, ck.miou_history.data(), ck.miou_history.size())},
        {"count", ck.miou_history.size()}};

    json params = json::array();
    for (const auto& [name, t] : ck.params) {
        params.push_back({{"name", name},
                          {"shape", t.shape},
                          {"offset", append(payload, t.data.data(), t.data.size())}});
    }
    m["params"] = params;

    json stages = json::array();
    const std::vector<int> labels = stage_labels_of(ck);
    for (size_t i = 0; i < ck.proto_stage_vecs.size(); ++i) {
        const Tensor& t = ck.proto_stage_vecs[i];
        stages.push_back({{"label", labels[i]},
                          {"shape", t.shape},
                          {"offset", append(payload, t.data.data(), t.data.size())}});
    }
    m["prototypes"] = {{"class_ids", ck.proto_class_ids},
                       {"stage_of", ck.proto_stage_of},
                       {"stages", stages}};

    json bank_classes = json::array();
    for (const auto& bc : ck.bank_classes) {
        uint64_t off = payload.size();
        for (const auto& vec : bc.vectors) {
            if (static_cast<int64_t>(vec.size()) != ck.bank_dim)
                throw CheckpointError("checkpoint: bank vector width != bank dim");
            append(payload, vec.data(), vec.size());
        }
        bank_classes.push_back({{"id", bc.class_id},
                                {"inserted", bc.inserted},
                                {"count", bc.vectors.size()},
                                {"offset", off}});
    }
    m["bank"] = {{"dim", ck.bank_dim}, {"capacity", ck.bank_capacity}, {"classes", bank_classes}};

    const std::string manifest = m.dump();
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError("checkpoint: cannot write '" + path + "'");
    out.write(kMagic, 4);
    write_u32(out, kVersion);
    write_u64(out, manifest.size());
    out.write(manifest.data(), static_cast<std::streamsize>(manifest.size()));
    write_u64(out, payload.size());
    out.write(reinterpret_cast<const char*>(payload.data()),
              static_cast<std::streamsize>(payload.size() * sizeof(double)));
    if (!out) throw CheckpointError("checkpoint: write failed for '" + path + "'");
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CheckpointError("checkpoint: cannot read '" + path + "'");
    char magic[4] = {};
    in.read(magic, 4);
    if (!in || std::string(magic, 4) != std::string(kMagic, 4))
        throw CheckpointError("checkpoint: bad magic in '" + path + "'");
    const uint32_t version = read_u32(in);
    if (version != kVersion)
        throw CheckpointError("checkpoint: unsupported version " + std::to_string(version));

    const uint64_t mlen = read_u64(in);
    std::string mtext(mlen, '\0');
    in.read(mtext.data(), static_cast<std::streamsize>(mlen));
    const uint64_t n = read_u64(in);
    std::vector<double> payload(n);
    in.read(reinterpret_cast<char*>(payload.data()),
            static_cast<std::streamsize>(n * sizeof(double)));
    if (!in) throw CheckpointError("checkpoint: truncated file '" + path + "'");

    json m;
    try {
        m = json::parse(mtext);
    } catch (const json::exception& e) {
        throw CheckpointError(std::string("checkpoint: manifest parse error: ") + e.what());
    }

    auto block = [&](uint64_t offset, size_t count) -> std::vector<double> {
        if (offset + count > payload.size())
            throw CheckpointError("checkpoint: payload block out of range");
        return {payload.begin() + static_cast<int64_t>(offset),
                payload.begin() + static_cast<int64_t>(offset + count)};
    };

    Checkpoint ck;
    try {
        ck.stage = m.at("stage").get<int>();
        ck.num_classes = m.at("num_classes").get<int>();
        ck.class_order = m.at("class_order").get<std::vector<int>>();
        ck.config = parse_config_text(m.at("config").get<std::string>());
        ck.rng_state = m.at("rng").get<std::string>();

        const auto& ah = m.at("all_history");
        ck.all_history = block(ah.at("offset").get<uint64_t>(), ah.at("count").get<size_t>());
        const auto& mh = m.at("miou_history");
        ck.miou_history = block(mh.at("offset").get<uint64_t>(), mh.at("count").get<size_t>());

        for (const auto& p : m.at("params")) {
            Tensor t(p.at("shape").get<std::vector<int64_t>>());
            t.data = block(p.at("offset").get<uint64_t>(), t.data.size());
            ck.params.emplace(p.at("name").get<std::string>(), std::move(t));
        }

        const auto& protos = m.at("prototypes");
        ck.proto_class_ids = protos.at("class_ids").get<std::vector<int>>();
        ck.proto_stage_of = protos.at("stage_of").get<std::vector<int>>();
        for (const auto& s : protos.at("stages")) {
            Tensor t(s.at("shape").get<std::vector<int64_t>>());
            t.data = block(s.at("offset").get<uint64_t>(), t.data.size());
            ck.proto_stage_vecs.push_back(std::move(t));
        }

        const auto& bank = m.at("bank");
        ck.bank_dim = bank.at("dim").get<int64_t>();
        ck.bank_capacity = bank.at("capacity").get<int>();
        for (const auto& c : bank.at("classes")) {
            Checkpoint::BankClass bc;
            bc.class_id = c.at("id").get<int>();
            bc.inserted = c.at("inserted").get<uint64_t>();
            const size_t count = c.at("count").get<size_t>();
            uint64_t off = c.at("offset").get<uint64_t>();
            for (size_t i = 0; i < count; ++i) {
                bc.vectors.push_back(block(off, static_cast<size_t>(ck.bank_dim)));
                off += static_cast<uint64_t>(ck.bank_dim);
            }
            ck.bank_classes.push_back(std::move(bc));
        }
    } catch (const json::exception& e) {
        throw CheckpointError(std::string("checkpoint: manifest field error: ") + e.what());
    }
    return ck;
}

Checkpoint make_checkpoint(const Config& cfg, int stage, const Model& model,
                           const PrototypeSet& protos, const VirtualQueryBank& bank,
                           const Rng& rng, const std::vector<int>& class_order,
                           const std::vector<double>& all_history,
                           const std::vector<double>& miou_history) {
    Checkpoint ck;
    ck.config = cfg;
    ck.stage = stage;
    ck.num_classes = model.num_classes();
    ck.class_order = class_order;
    ck.all_history = all_history;
    ck.miou_history = miou_history;
    ck.rng_state = rng.serialize();

    for (auto [name, p] : model.params().items())
        if (name.rfind("proto.", 0) != 0) ck.params.emplace(name, p.value());

    for (const Var& v : protos.stage_vecs) ck.proto_stage_vecs.push_back(v.value());
    ck.proto_class_ids = protos.class_ids;
    ck.proto_stage_of = protos.stage_of;

    ck.bank_dim = bank.dim();
    ck.bank_capacity = bank.capacity();
    for (int c : bank.class_ids()) {
        Checkpoint::BankClass bc;
        bc.class_id = c;
        bc.inserted = bank.inserted_total(c);
        for (const auto& vec : bank.queue_of(c)) bc.vectors.push_back(vec);
        ck.bank_classes.push_back(std::move(bc));
    }
    return ck;
}

Model restore_model(const Checkpoint& ck, const ModelConfig& mc) {
    Model model(mc, ck.num_classes, 0);
    size_t restored = 0;
    for (auto [name, p] : model.params().items()) {
        auto it = ck.params.find(name);
        if (it == ck.params.end())
            throw CheckpointError("checkpoint: missing parameter '" + name + "'");
        if (it->second.shape != p.value().shape)
            throw CheckpointError("checkpoint: shape mismatch for '" + name + "'");
        p.value() = it->second;
        ++restored;
    }
    if (restored != ck.params.size())
        throw CheckpointError("checkpoint: stored parameters do not match the model");
    return model;
}

PrototypeSet restore_prototypes(const Checkpoint& ck, ParamStore& ps) {
    PrototypeSet protos;
    protos.class_ids = ck.proto_class_ids;
    protos.stage_of = ck.proto_stage_of;
    std::vector<int> labels;
    for (int s : ck.proto_stage_of)
        if (labels.empty() || labels.back() != s) labels.push_back(s);
    if (labels.size() != ck.proto_stage_vecs.size())
        throw CheckpointError("checkpoint: prototype stage labels inconsistent");
    for (size_t i = 0; i < ck.proto_stage_vecs.size(); ++i) {
        protos.stage_vecs.push_back(
            ps.add("proto.s" + std::to_string(labels[i]), ck.proto_stage_vecs[i]));
        protos.dim = ck.proto_stage_vecs[i].dim(1);
    }
    return protos;
}

VirtualQueryBank restore_bank(const Checkpoint& ck) {
    VirtualQueryBank bank(ck.bank_dim, ck.bank_capacity);
    for (const auto& bc : ck.bank_classes) {
        std::deque<std::vector<double>> q(bc.vectors.begin(), bc.vectors.end());
        bank.restore_queue(bc.class_id, std::move(q), bc.inserted);
    }
    return bank;
}

}  // namespace simcis
