#pragma once

#include <vector>

#include "lcco/clip_provider.hpp"
#include "lcco/image_set.hpp"
#include "lcco/nn.hpp"

namespace lcco::regularization {

/// CLIP regularization: pools the similarity matrix into a class probability
/// profile, picks the most likely common class, and gates the finest feature
/// map with that class's text embedding.
class RegularizationModule {
public:
    RegularizationModule() = default;
    RegularizationModule(nn::ParamRegistry& reg, int prompt_count, int embed_dim, int f3_channels,
                         std::mt19937_64& rng);

    /// Softmax(MAX over rows(MLP3(rows of s))) -> [P]. MLP3 is residual, so
    /// zeroing its layers makes it the identity.
    ad::Var class_probabilities(const ad::Var& s) const;

    /// F3 -> FFN5(FFN4(F3) ⊙ PAD(h_txt_star)).
    ad::Var regularize(const ad::Var& f3, const ad::Var& h_txt_star) const;

    int prompt_count() const { return prompt_count_; }

    nn::Linear mlp3_fc1, mlp3_fc2;         // residual MLP, hidden width P
    nn::Conv2d ffn4_expand, ffn4_project;  // 1x1: C3 -> D -> D
    nn::Conv2d ffn5;                       // 1x1: D -> C3, single linear projection

private:
    int prompt_count_ = 0;
    int embed_dim_ = 0;
};

/// Argmax with ties broken toward the lowest index; errors on empty input.
int most_likely_class(const Tensor& upsilon);

/// Fig-style diagnostic: mean over channels of || mask ⊙ Softmax(f_c) ||_2,
/// softmax over spatial positions per channel. The mask is resized (nearest)
/// to the feature's spatial size when needed.
double masked_attention_norm(const Tensor& f, const Tensor& gt_mask);

/// Derives the ground-truth class target: backgrounds zeroed via GT masks,
/// masked images CLIP-encoded, similarities against the prompt bank summed
/// over the set, argmax one-hot.
Tensor gt_class_target(const ImageSet& set, const clip::PromptBank& bank,
                       const clip::ClipBackend& backend);

}  // namespace lcco::regularization
