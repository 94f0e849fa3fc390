#include "lcco/clip_interaction.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>

#include "lcco/errors.hpp"

namespace lcco::interaction {

using namespace ad;

Distilled distill_text(const clip::ClipBundle& bundle, int k) {
    int p = bundle.sigma.dim(0);
    if (k < 1 || k > p)
        throw std::invalid_argument("distill_text: k must satisfy 1 <= k <= " + std::to_string(p) +
                                    ", got " + std::to_string(k));
    std::vector<int> order(static_cast<size_t>(p));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        if (bundle.sigma[a] != bundle.sigma[b]) return bundle.sigma[a] > bundle.sigma[b];
        return a < b;
    });

    Distilled out;
    out.indices.assign(order.begin(), order.begin() + k);
    out.rows = Tensor({k, bundle.d});
    for (int r = 0; r < k; ++r)
        for (int c = 0; c < bundle.d; ++c)
            out.rows.at2(r, c) = bundle.h_txt.at2(out.indices[static_cast<size_t>(r)], c);
    return out;
}

InteractionModule::InteractionModule(nn::ParamRegistry& reg, int embed_dim, int f2_channels,
                                     int fusion_heads, int coarse_h, int coarse_w,
                                     std::mt19937_64& rng)
    : embed_dim_(embed_dim), coarse_h_(coarse_h), coarse_w_(coarse_w) {
    mlp1 = nn::Mlp(reg, "interaction.mlp1", 2 * embed_dim, embed_dim, embed_dim, rng);
    fusion_attention = nn::MultiHeadAttention(reg, "interaction.fusion_att", embed_dim,
                                              fusion_heads, rng);
    mlp2 = nn::Mlp(reg, "interaction.mlp2", embed_dim, embed_dim, embed_dim, rng);
    ffn2_expand = nn::Conv2d(reg, "interaction.ffn2.expand", f2_channels, embed_dim, 1, 1, 0, rng);
    ffn2_project = nn::Conv2d(reg, "interaction.ffn2.project", embed_dim, embed_dim, 1, 1, 0, rng);
    ffn3 = nn::Conv2d(reg, "interaction.ffn3", embed_dim, f2_channels, 1, 1, 0, rng);
    coarse_decoder = nn::Mlp(reg, "interaction.coarse_decoder", embed_dim, embed_dim,
                             coarse_h * coarse_w, rng);
}

Var InteractionModule::refine_image_embeddings(const Var& h_img) const {
    if (h_img->value.rank() != 2 || h_img->value.dim(1) != embed_dim_)
        throw std::invalid_argument("refine_image_embeddings: expected [N," +
                                    std::to_string(embed_dim_) + "], got " +
                                    h_img->value.shape_str());
    int n = h_img->value.dim(0);
    Var global = mean_axis0(h_img);  // [D], permutation-invariant
    std::vector<Var> rows(static_cast<size_t>(n), global);
    Var global_rows = stack_rows(rows);  // [N,D]
    return mlp1(concat_cols(h_img, global_rows));
}

Var InteractionModule::fuse(const Var& h_hat, const Var& distilled) const {
    if (h_hat->value.dim(1) != embed_dim_ || distilled->value.dim(1) != embed_dim_)
        throw std::invalid_argument("fuse: embedding width mismatch");
    int n = h_hat->value.dim(0);
    Var tokens = concat_rows(h_hat, distilled);  // [N+K, D]
    std::vector<Var> fused;
    fused.reserve(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
        Var query = row(h_hat, i);
        Var message = fusion_attention(query, tokens, tokens);
        fused.push_back(add(query, mlp2(message)));
    }
    if (n == 1) return fused[0];
    Var out = fused[0];
    for (int i = 1; i < n; ++i) out = concat_rows(out, fused[static_cast<size_t>(i)]);
    return out;
}

Var InteractionModule::modulate(const Var& f2, const Var& z_i) const {
    if (!f2->value.all_finite())
        throw NumericalError("modulate: non-finite feature map");
    Var z = z_i;
    if (z->value.rank() == 2 && z->value.dim(0) == 1) z = reshape(z, {z->value.dim(1)});
    if (z->value.rank() != 1 || z->value.dim(0) != embed_dim_)
        throw std::invalid_argument("modulate: semantic vector must have width " +
                                    std::to_string(embed_dim_));
    Var projected = ffn2_project(gelu(ffn2_expand(f2)));  // [D,H,W]
    Var gated = mul_channelwise(projected, z);            // PAD(z) broadcast
    return ffn3(gated);
}

Var InteractionModule::coarse_decode(const Var& h_hat_i) const {
    Var h = h_hat_i;
    if (h->value.rank() == 1) h = reshape(h, {1, h->value.dim(0)});
    Var logits = coarse_decoder(h);  // [1, coarse_h*coarse_w]
    return reshape(sigmoid(logits), {coarse_h_, coarse_w_});
}

}  // namespace lcco::interaction
