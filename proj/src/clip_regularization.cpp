#include "lcco/clip_regularization.hpp"

#include <cmath>
#include <stdexcept>

#include "lcco/errors.hpp"
#include "lcco/imageops.hpp"

namespace lcco::regularization {

using namespace ad;

RegularizationModule::RegularizationModule(nn::ParamRegistry& reg, int prompt_count,
                                           int embed_dim, int f3_channels, std::mt19937_64& rng)
    : prompt_count_(prompt_count), embed_dim_(embed_dim) {
    mlp3_fc1 = nn::Linear(reg, "regularization.mlp3.fc1", prompt_count, prompt_count, rng);
    mlp3_fc2 = nn::Linear(reg, "regularization.mlp3.fc2", prompt_count, prompt_count, rng);
    ffn4_expand = nn::Conv2d(reg, "regularization.ffn4.expand", f3_channels, embed_dim, 1, 1, 0,
                             rng);
    ffn4_project = nn::Conv2d(reg, "regularization.ffn4.project", embed_dim, embed_dim, 1, 1, 0,
                              rng);
    ffn5 = nn::Conv2d(reg, "regularization.ffn5", embed_dim, f3_channels, 1, 1, 0, rng);
}

Var RegularizationModule::class_probabilities(const Var& s) const {
    if (s->value.rank() != 2 || s->value.dim(1) != prompt_count_)
        throw std::invalid_argument("class_probabilities: expected [N," +
                                    std::to_string(prompt_count_) + "], got " +
                                    s->value.shape_str());
    Var transformed = add(s, mlp3_fc2(gelu(mlp3_fc1(s))));  // residual MLP3 per row
    Var pooled = max_axis0(transformed);                    // [P]
    Var probs = softmax_rows(reshape(pooled, {1, prompt_count_}));
    return reshape(probs, {prompt_count_});
}

Var RegularizationModule::regularize(const Var& f3, const Var& h_txt_star) const {
    if (!f3->value.all_finite()) throw NumericalError("regularize: non-finite feature map");
    Var h = h_txt_star;
    if (h->value.rank() == 2 && h->value.dim(0) == 1) h = reshape(h, {h->value.dim(1)});
    if (h->value.rank() != 1 || h->value.dim(0) != embed_dim_)
        throw std::invalid_argument("regularize: text embedding must have width " +
                                    std::to_string(embed_dim_));
    Var projected = ffn4_project(gelu(ffn4_expand(f3)));
    Var gated = mul_channelwise(projected, h);
    return ffn5(gated);
}

int most_likely_class(const Tensor& upsilon) {
    if (upsilon.size() == 0) throw std::invalid_argument("most_likely_class: empty vector");
    int best = 0;
    for (long long i = 1; i < upsilon.size(); ++i)
        if (upsilon[i] > upsilon[best]) best = static_cast<int>(i);
    return best;
}

double masked_attention_norm(const Tensor& f, const Tensor& gt_mask) {
    if (f.rank() != 3) throw std::invalid_argument("masked_attention_norm: expected [C,H,W]");
    int c = f.dim(0), h = f.dim(1), w = f.dim(2);
    Tensor mask = gt_mask;
    if (mask.dim(0) != h || mask.dim(1) != w) mask = imageops::resize_nearest(mask, h, w);

    double total = 0.0;
    long long hw = static_cast<long long>(h) * w;
    for (int ch = 0; ch < c; ++ch) {
        double mx = f[ch * hw];
        for (long long i = 1; i < hw; ++i) mx = std::max(mx, f[ch * hw + i]);
        double z = 0.0;
        for (long long i = 0; i < hw; ++i) z += std::exp(f[ch * hw + i] - mx);
        double sq = 0.0;
        for (long long i = 0; i < hw; ++i) {
            double soft = std::exp(f[ch * hw + i] - mx) / z;
            double masked = mask[i] * soft;
            sq += masked * masked;
        }
        total += std::sqrt(sq);
    }
    return total / c;
}

Tensor gt_class_target(const ImageSet& set, const clip::PromptBank& bank,
                       const clip::ClipBackend& backend) {
    if (!set.has_gt())
        throw DataError("gt_class_target: set '" + set.set_id + "' has no ground-truth masks");
    std::vector<Tensor> masked;
    masked.reserve(static_cast<size_t>(set.size()));
    for (int i = 0; i < set.size(); ++i)
        masked.push_back(imageops::apply_mask_rgb(set.images[static_cast<size_t>(i)],
                                                  set.gt_masks[static_cast<size_t>(i)]));
    Tensor h_img = backend.encode_images(masked);
    Tensor h_txt = backend.encode_prompts(bank);
    clip::ClipBundle bundle = clip::similarity(h_img, h_txt);
    int star = most_likely_class(bundle.sigma);
    Tensor one_hot({bank.size()});
    one_hot[star] = 1.0;
    return one_hot;
}

}  // namespace lcco::regularization
