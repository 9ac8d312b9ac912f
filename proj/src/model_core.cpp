#include "simcis/model_core.hpp"

#include <cmath>
#include <stdexcept>

namespace simcis {

MultiScaleFeatures::Triple MultiScaleFeatures::flat_to_triple(int64_t flat) const {
    for (size_t l = 0; l < level_hw.size(); ++l) {
        const int64_t sz = static_cast<int64_t>(level_hw[l].first) * level_hw[l].second;
        if (flat < level_offsets[l] + sz) {
            const int64_t local = flat - level_offsets[l];
            return {static_cast<int>(l), static_cast<int>(local / level_hw[l].second),
                    static_cast<int>(local % level_hw[l].second)};
        }
    }
    throw std::out_of_range("flat_to_triple: index beyond omega");
}

int64_t MultiScaleFeatures::triple_to_flat(int level, int h, int w) const {
    return level_offsets[static_cast<size_t>(level)] +
           static_cast<int64_t>(h) * level_hw[static_cast<size_t>(level)].second + w;
}

DecoderLayer::DecoderLayer(ParamStore& ps, const std::string& name, const ModelConfig& cfg,
                           Rng& rng)
    : cross_attn(ps, name + ".ca", cfg.dim, cfg.attn_heads, rng),
      self_attn(ps, name + ".sa", cfg.dim, cfg.attn_heads, rng),
      norm_ca(ps, name + ".ln_ca", cfg.dim),
      norm_sa(ps, name + ".ln_sa", cfg.dim),
      norm_ffn(ps, name + ".ln_ffn", cfg.dim),
      ffn1(ps, name + ".ffn1", cfg.dim, cfg.ffn_hidden, rng),
      ffn2(ps, name + ".ffn2", cfg.ffn_hidden, cfg.dim, rng) {}

Var DecoderLayer::ffn_block(const Var& x) const {
    return norm_ffn.forward(add(x, ffn2.forward(relu(ffn1.forward(x)))));
}

Model::Model(const ModelConfig& cfg, int num_classes, uint64_t seed)
    : cfg_(cfg), num_classes_(num_classes) {
    if (cfg.image_size % 8 != 0) throw std::invalid_argument("model: image size must be /8");
    if (cfg.levels != 3) throw std::invalid_argument("model: 3 pyramid levels supported");
    if (cfg.dim % cfg.attn_heads != 0) throw std::invalid_argument("model: dim % heads");
    Rng rng(mix_seed(seed, 0x6d6f64656cULL));

    const int e = cfg.encoder_channels, d = cfg.dim;
    enc1_ = Conv2dLayer(ps_, "enc.c1", cfg.image_channels, e, 3, 2, 1, rng);
    enc2_ = Conv2dLayer(ps_, "enc.c2", e, e, 3, 2, 1, rng);
    enc3_ = Conv2dLayer(ps_, "enc.c3", e, d, 3, 2, 1, rng);
    proj0_ = Conv2dLayer(ps_, "fpn.p0", d, d, 1, 1, 0, rng);
    lat2_ = Conv2dLayer(ps_, "fpn.lat2", e, d, 1, 1, 0, rng);
    lat1_ = Conv2dLayer(ps_, "fpn.lat1", e, d, 1, 1, 0, rng);
    smooth1_ = Conv2dLayer(ps_, "fpn.s1", d, d, 3, 1, 1, rng);
    smooth2_ = Conv2dLayer(ps_, "fpn.s2", d, d, 3, 1, 1, rng);

    for (int l = 0; l < cfg.decoder_layers; ++l)
        layers_.emplace_back(ps_, "dec." + std::to_string(l), cfg, rng);

    ps_.add("query.feat", rng.randn({cfg.num_queries, d}, 0.02));
    ps_.add("query.pos", rng.randn({cfg.num_queries, d}, 0.02));
    level_embed_ = ps_.add("level_embed", rng.randn({cfg.levels, d}, 0.02));

    mask_mlp1_ = Linear(ps_, "head.mask1", d, d, rng);
    mask_mlp2_ = Linear(ps_, "head.mask2", d, d, rng);
    pixel_proj_ = Linear(ps_, "head.pixel", d, d, rng);

    class_head_ = Linear(ps_, "head.class", d, num_classes + 1, rng);
}

void Model::rebind_class_head() {
    class_head_.w = ps_.get("head.class.w");
    class_head_.b = ps_.get("head.class.b");
}

void Model::grow_class_head(int new_num_classes, Rng& rng) {
    if (new_num_classes < num_classes_)
        throw std::invalid_argument("grow_class_head: cannot shrink");
    if (new_num_classes == num_classes_) return;
    const int d = cfg_.dim;
    const Tensor& old_w = ps_.get("head.class.w").value();
    const Tensor& old_b = ps_.get("head.class.b").value();
    Tensor w({d, new_num_classes + 1});
    Tensor b({new_num_classes + 1});
    for (int64_t r = 0; r < d; ++r) {
        for (int c = 0; c < num_classes_; ++c) w.at(r, c) = old_w.at(r, c);
        for (int c = num_classes_; c < new_num_classes; ++c) w.at(r, c) = rng.normal() * 0.02;
        w.at(r, new_num_classes) = old_w.at(r, num_classes_);  // no-object column
    }
    for (int c = 0; c < num_classes_; ++c) b[c] = old_b[c];
    b[new_num_classes] = old_b[num_classes_];
    ps_.add("head.class.w", std::move(w));
    ps_.add("head.class.b", std::move(b));
    num_classes_ = new_num_classes;
    rebind_class_head();
}

MultiScaleFeatures Model::encode(const Tensor& image) const {
    if (image.ndim() != 3 || image.dim(0) != cfg_.image_channels ||
        image.dim(1) != cfg_.image_size || image.dim(2) != cfg_.image_size)
        throw std::invalid_argument("encode: image shape mismatch " + image.shape_str());

    const Var x = Var::constant(image);
    const Var c1 = relu(enc1_.forward(x));    // [E, H/2, W/2]
    const Var c2 = relu(enc2_.forward(c1));   // [E, H/4, W/4]
    const Var c3 = relu(enc3_.forward(c2));   // [D, H/8, W/8]

    const Var p0 = proj0_.forward(c3);
    const Var p1 = smooth1_.forward(add(upsample_nearest2(p0), lat2_.forward(c2)));
    const Var p2 = smooth2_.forward(add(upsample_nearest2(p1), lat1_.forward(c1)));

    MultiScaleFeatures f;
    const int d = cfg_.dim;
    std::vector<Var> pos_parts;
    int64_t offset = 0;
    int level_idx = 0;
    for (const Var& level : {p0, p1, p2}) {
        if (!level.value().all_finite())
            throw std::runtime_error("encode: non-finite activations at level " +
                                     std::to_string(level_idx));
        const int H = static_cast<int>(level.dim(1)), W = static_cast<int>(level.dim(2));
        f.level_rows.push_back(flatten_chw_to_rows(level));
        f.level_hw.emplace_back(H, W);
        f.level_offsets.push_back(offset);
        offset += static_cast<int64_t>(H) * W;

        Tensor sin_rows({static_cast<int64_t>(H) * W, d});
        for (int h = 0; h < H; ++h)
            for (int w = 0; w < W; ++w) {
                const Tensor enc = sinusoidal_position((h + 0.5) / H, (w + 0.5) / W, d);
                double* dst = sin_rows.ptr() + (static_cast<int64_t>(h) * W + w) * d;
                for (int c = 0; c < d; ++c) dst[c] = enc[c];
            }
        const Var lvl_embed = reshape(slice_rows(level_embed_, level_idx, level_idx + 1), {d});
        pos_parts.push_back(add_rowvec(Var::constant(std::move(sin_rows)), lvl_embed));
        ++level_idx;
    }
    f.all_rows = concat_rows(f.level_rows);
    f.all_pos = concat_rows(pos_parts);
    return f;
}

std::vector<uint8_t> Model::attention_mask_from(const PredictionSet& preds,
                                                const MultiScaleFeatures& f) const {
    const Tensor& m = preds.mask_logits.value();
    const int n = static_cast<int>(m.dim(0));
    const int64_t omega = f.omega();
    std::vector<uint8_t> allowed(static_cast<size_t>(n) * omega, 0);
    const int img = cfg_.image_size;
    for (int q = 0; q < n; ++q) {
        for (size_t l = 0; l < f.level_hw.size(); ++l) {
            const int H = f.level_hw[l].first, W = f.level_hw[l].second;
            const int sy = img / H, sx = img / W;
            for (int h = 0; h < H; ++h)
                for (int w = 0; w < W; ++w) {
                    const int y = h * sy + sy / 2, x = w * sx + sx / 2;
                    const double logit = m.at(q, static_cast<int64_t>(y) * img + x);
                    if (logit > 0)
                        allowed[static_cast<size_t>(q) * omega +
                                static_cast<size_t>(f.triple_to_flat(static_cast<int>(l), h, w))] = 1;
                }
        }
    }
    return allowed;
}

Model::DecodeResult Model::decode(const MultiScaleFeatures& f, const Var& queries,
                                  const Var& query_pos, const Var& virtual_queries) const {
    if (queries.dim(1) != cfg_.dim) throw std::invalid_argument("decode: query dim mismatch");
    const Var keys = add(f.all_rows, f.all_pos);

    DecodeResult out;
    Var x = queries;
    Var v = virtual_queries;
    const bool has_virt = v.defined() && v.dim(0) > 0;

    PredictionSet prev = predict_heads(x, f);
    for (const DecoderLayer& layer : layers_) {
        const std::vector<uint8_t> allowed = attention_mask_from(prev, f);

        auto ca_block = [&](const Var& in) {
            const Var q = add(in, query_pos);
            return layer.norm_ca.forward(
                add(in, layer.cross_attn.forward(q, keys, f.all_rows, &allowed)));
        };
        auto sa_block = [&](const Var& in) {
            const Var q = add(in, query_pos);
            return layer.norm_sa.forward(add(in, layer.self_attn.forward(q, q, in)));
        };
        x = cfg_.cross_attention_first ? sa_block(ca_block(x)) : ca_block(sa_block(x));
        x = layer.ffn_block(x);

        if (has_virt) v = layer.ffn_block(v);

        out.aux.push_back(prev);
        prev = predict_heads(x, f);
    }
    out.real = x;
    out.preds = prev;
    if (has_virt) {
        out.virt = v;
        out.virt_class_logits = class_logits_of(v);
    }
    return out;
}

PredictionSet Model::predict_heads(const Var& queries, const MultiScaleFeatures& f) const {
    PredictionSet p;
    p.num_classes = num_classes_;
    p.height = cfg_.image_size;
    p.width = cfg_.image_size;
    p.class_logits = class_logits_of(queries);

    const Var mask_embed = mask_mlp2_.forward(relu(mask_mlp1_.forward(queries)));
    const Var pixel_embed = pixel_proj_.forward(f.level_rows.back());
    const auto [hf, wf] = f.level_hw.back();
    const Var fine = matmul_bt(mask_embed, pixel_embed);  // [N, hf*wf]
    const int factor = cfg_.image_size / hf;
    p.mask_logits = factor == 1 ? fine : upsample_mask_rows(fine, hf, wf, factor);
    return p;
}

Var Model::class_logits_of(const Var& queries) const { return class_head_.forward(queries); }

}  // namespace simcis
