#pragma once

#include <vector>

#include "lcco/clip_provider.hpp"
#include "lcco/nn.hpp"

namespace lcco::interaction {

/// Top-K distilled text embeddings with their source rows, in descending
/// sigma order; ties broken toward the lower index.
struct Distilled {
    Tensor rows;               // [K,D]
    std::vector<int> indices;  // source indices into h_txt
};

Distilled distill_text(const clip::ClipBundle& bundle, int k);

/// CLIP interaction: mines common set semantics from the bundle and
/// modulates the mid-level feature map with them.
class InteractionModule {
public:
    InteractionModule() = default;
    InteractionModule(nn::ParamRegistry& reg, int embed_dim, int f2_channels, int fusion_heads,
                      int coarse_h, int coarse_w, std::mt19937_64& rng);

    /// h_img [N,D] -> MLP1(CAT[h_i, mean(h)]) per row, order preserved.
    ad::Var refine_image_embeddings(const ad::Var& h_img) const;

    /// Single-query attention of each refined embedding over the stacked
    /// [refined; distilled] tokens, with a residual MLP2 update. [N,D].
    ad::Var fuse(const ad::Var& h_hat, const ad::Var& distilled) const;

    /// F2 -> FFN3(FFN2(F2) ⊙ PAD(z)); z broadcast across spatial positions.
    ad::Var modulate(const ad::Var& f2, const ad::Var& z_i) const;

    /// Light decoder from one refined embedding [1,D] to a coarse soft mask
    /// [coarse_h, coarse_w].
    ad::Var coarse_decode(const ad::Var& h_hat_i) const;

    int embed_dim() const { return embed_dim_; }
    int coarse_h() const { return coarse_h_; }
    int coarse_w() const { return coarse_w_; }

    nn::Mlp mlp1;  // 2D -> D
    nn::MultiHeadAttention fusion_attention;
    nn::Mlp mlp2;                          // D -> D
    nn::Conv2d ffn2_expand, ffn2_project;  // 1x1: C2 -> D -> D
    nn::Conv2d ffn3;                       // 1x1: D -> C2, single linear projection
    nn::Mlp coarse_decoder;                // D -> coarse_h*coarse_w logits

private:
    int embed_dim_ = 0;
    int coarse_h_ = 0, coarse_w_ = 0;
};

}  // namespace lcco::interaction
