#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "simcis/matching_losses.hpp"
#include "simcis/nn.hpp"

namespace simcis {

struct ModelConfig {
    int image_size = 32;
    int image_channels = 3;
    int dim = 64;            // shared hidden width D
    int levels = 3;          // feature pyramid levels, coarse to fine
    int encoder_channels = 32;
    int decoder_layers = 3;
    int num_queries = 20;
    int attn_heads = 4;
    int ffn_hidden = 128;
    bool cross_attention_first = true;  // Eq-order flag: CA->SA->FFN vs SA->CA->FFN
};

// Feature pyramid as row matrices, one row per spatial location, plus the
// concatenation over all levels. Flat indices enumerate (level, h, w) in
// lexicographic order, coarse level first.
struct MultiScaleFeatures {
    std::vector<Var> level_rows;               // level l: [H_l*W_l, D]
    std::vector<std::pair<int, int>> level_hw;  // (H_l, W_l)
    std::vector<int64_t> level_offsets;        // flat offset of each level
    Var all_rows;                              // [|Omega|, D]
    Var all_pos;                               // [|Omega|, D] key position codes

    int64_t omega() const { return all_rows.dim(0); }

    struct Triple {
        int level, h, w;
    };
    Triple flat_to_triple(int64_t flat) const;
    int64_t triple_to_flat(int level, int h, int w) const;
};

struct DecoderLayer {
    MultiheadAttention cross_attn, self_attn;
    LayerNorm norm_ca, norm_sa, norm_ffn;
    Linear ffn1, ffn2;

    DecoderLayer() = default;
    DecoderLayer(ParamStore& ps, const std::string& name, const ModelConfig& cfg, Rng& rng);

    // The exact block virtual queries pass through; reals get it after attention.
    Var ffn_block(const Var& x) const;
};

// Query-based mask segmenter: strided conv encoder, lateral-upsampling pixel
// decoder, decoder layers with masked cross-attention, class + mask heads.
class Model {
public:
    Model(const ModelConfig& cfg, int num_classes, uint64_t seed);

    const ModelConfig& config() const { return cfg_; }
    int num_classes() const { return num_classes_; }
    ParamStore& params() { return ps_; }
    const ParamStore& params() const { return ps_; }

    // Widens the class head to new_num_classes, preserving learned columns;
    // the no-object column stays last.
    void grow_class_head(int new_num_classes, Rng& rng);

    MultiScaleFeatures encode(const Tensor& image) const;

    // Learnable query initialization used when pre-alignment is disabled.
    Var learned_queries() const { return ps_.get("query.feat"); }
    Var learned_query_pos() const { return ps_.get("query.pos"); }

    struct DecodeResult {
        Var real;                          // [N, D] after the last layer
        Var virt;                          // [j, D]; undefined when j = 0
        PredictionSet preds;               // from the final real queries
        std::vector<PredictionSet> aux;    // per-layer (pre-final) predictions
        Var virt_class_logits;             // [j, K+1]; undefined when j = 0
    };

    // Runs all decoder layers. Virtual queries bypass both attention blocks
    // and share only the FFN, so real outputs are bitwise independent of them.
    DecodeResult decode(const MultiScaleFeatures& f, const Var& queries, const Var& query_pos,
                        const Var& virtual_queries) const;

    PredictionSet predict_heads(const Var& queries, const MultiScaleFeatures& f) const;
    Var class_logits_of(const Var& queries) const;

    // Attention gate per (query, location): 1 where the previous mask
    // prediction is positive at the location, sampled at each level's cell
    // center; a fully-off row falls back to dense attention downstream.
    std::vector<uint8_t> attention_mask_from(const PredictionSet& preds,
                                             const MultiScaleFeatures& f) const;

private:
    ModelConfig cfg_;
    int num_classes_;
    ParamStore ps_;

    Conv2dLayer enc1_, enc2_, enc3_;
    Conv2dLayer lat1_, lat2_, proj0_;
    Conv2dLayer smooth1_, smooth2_;
    std::vector<DecoderLayer> layers_;
    Linear class_head_;
    Linear mask_mlp1_, mask_mlp2_;
    Linear pixel_proj_;
    Var level_embed_;  // [levels, D]

    void rebind_class_head();
};

}  // namespace simcis
