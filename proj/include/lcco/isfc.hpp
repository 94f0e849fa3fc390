#pragma once

#include <vector>

#include "lcco/nn.hpp"

namespace lcco::isfc {

/// Image Set Feature Correspondence: cross-attention message passing on the
/// complete graph over the set, injecting set-wide semantics into each
/// coarse feature map.
class IsfcModule {
public:
    IsfcModule() = default;
    IsfcModule(nn::ParamRegistry& reg, int channels, int heads, std::mt19937_64& rng);

    /// One edge update: f_i + FFN1(f_i || Att(f_i, f_j, f_j)). Tokens are the
    /// spatial positions, no positional encoding. i == j is rejected.
    ad::Var pairwise_update(const ad::Var& f_i, const ad::Var& f_j, int i, int j) const;

    /// Softmax-weighted average across the set axis followed by the fusing
    /// convolution. Weights are normalized per (channel, position) over the
    /// update index. An empty list signals an N=1 set and is an error here;
    /// refine_set bypasses the module instead.
    ad::Var aggregate(const std::vector<ad::Var>& updates) const;
    ad::Var aggregate_with_weights(const std::vector<ad::Var>& updates, ad::Var* alphas) const;

    /// Full set refinement; output order matches input order. N=1 passes
    /// features through unchanged.
    std::vector<ad::Var> refine_set(const std::vector<ad::Var>& features) const;

    int channels() const { return channels_; }

    nn::MultiHeadAttention attention;
    nn::Conv2d ffn1_expand, ffn1_project;  // 1x1 convolutional feed-forward, 2C -> C
    nn::Conv2d fuse_conv;                  // 3x3

private:
    int channels_ = 0;
};

/// Flattens [C,H,W] to spatial tokens [H*W, C] and back.
ad::Var to_tokens(const ad::Var& fmap);
ad::Var from_tokens(const ad::Var& tokens, int c, int h, int w);

}  // namespace lcco::isfc
