#include "lcco/isfc.hpp"

#include <stdexcept>

namespace lcco::isfc {

using namespace ad;

Var to_tokens(const Var& fmap) {
    int c = fmap->value.dim(0), h = fmap->value.dim(1), w = fmap->value.dim(2);
    return transpose(reshape(fmap, {c, h * w}));
}

Var from_tokens(const Var& tokens, int c, int h, int w) {
    return reshape(transpose(tokens), {c, h, w});
}

IsfcModule::IsfcModule(nn::ParamRegistry& reg, int channels, int heads, std::mt19937_64& rng)
    : channels_(channels) {
    attention = nn::MultiHeadAttention(reg, "isfc.att", channels, heads, rng);
    ffn1_expand = nn::Conv2d(reg, "isfc.ffn1.expand", 2 * channels, channels, 1, 1, 0, rng);
    ffn1_project = nn::Conv2d(reg, "isfc.ffn1.project", channels, channels, 1, 1, 0, rng);
    fuse_conv = nn::Conv2d(reg, "isfc.fuse", channels, channels, 3, 1, 1, rng);
}

Var IsfcModule::pairwise_update(const Var& f_i, const Var& f_j, int i, int j) const {
    if (i == j) throw std::invalid_argument("isfc: pairwise update requires i != j");
    if (!f_i->value.same_shape(f_j->value))
        throw std::invalid_argument("isfc: feature shape mismatch " + f_i->value.shape_str() +
                                    " vs " + f_j->value.shape_str());
    int c = f_i->value.dim(0), h = f_i->value.dim(1), w = f_i->value.dim(2);
    Var tokens_j = to_tokens(f_j);
    Var message = attention(to_tokens(f_i), tokens_j, tokens_j);
    Var update = ffn1_project(gelu(ffn1_expand(concat_channels(f_i, from_tokens(message, c, h, w)))));
    return add(f_i, update);
}

Var IsfcModule::aggregate_with_weights(const std::vector<Var>& updates, Var* alphas) const {
    if (updates.empty())
        throw std::invalid_argument(
            "isfc: empty update list (N=1 set; refine_set bypasses the module)");
    Var stacked = stack_axis0(updates);   // [N-1, C, H, W]
    Var alpha = softmax_axis0(stacked);   // normalized over the set axis
    if (alphas) *alphas = alpha;
    Var combined = sum_axis0(mul(alpha, stacked));
    return fuse_conv(combined);
}

Var IsfcModule::aggregate(const std::vector<Var>& updates) const {
    return aggregate_with_weights(updates, nullptr);
}

std::vector<Var> IsfcModule::refine_set(const std::vector<Var>& features) const {
    if (features.empty()) throw std::invalid_argument("isfc: empty feature list");
    if (features.size() == 1) return features;  // pass-through for degenerate sets
    int n = static_cast<int>(features.size());
    std::vector<Var> refined;
    refined.reserve(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
        std::vector<Var> updates;
        updates.reserve(static_cast<size_t>(n - 1));
        for (int j = 0; j < n; ++j) {
            if (j == i) continue;
            updates.push_back(pairwise_update(features[static_cast<size_t>(i)],
                                              features[static_cast<size_t>(j)], i, j));
        }
        refined.push_back(aggregate(updates));
    }
    return refined;
}

}  // namespace lcco::isfc
