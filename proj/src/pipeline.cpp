#include "lcco/pipeline.hpp"

#include "lcco/checkpoint.hpp"
#include "lcco/errors.hpp"

namespace lcco {

using namespace ad;

LccoModel::LccoModel(const ExperimentConfig& cfg, int clip_width)
    : cfg_(cfg), clip_width_(clip_width) {
    backbone::BackboneSpec spec;
    spec.identity = backbone::identity_from_string(cfg_.backbone);
    spec.resolution = cfg_.resolution;
    spec.seed = cfg_.train.seed;
    spec.frozen = cfg_.backbone_frozen;
    if (spec.identity == backbone::Identity::pretrained_resnet50)
        spec.channels = {256, 256, 256};
    else
        spec.channels = cfg_.stub_channels;
    backbone_ = backbone::Backbone(spec, reg_);

    // One stream seeds everything after the backbone so the whole model is a
    // pure function of the config seed.
    std::mt19937_64 rng(cfg_.train.seed ^ 0x5bf0a8f1d2c3e476ULL);
    auto [c1, c2, c3] = spec.channels;
    isfc_ = isfc::IsfcModule(reg_, c1, cfg_.isfc_heads, rng);
    int coarse = coarse_resolution();
    interaction_ = interaction::InteractionModule(reg_, clip_width_, c2, cfg_.fusion_heads,
                                                  coarse, coarse, rng);
    int p = static_cast<int>(cfg_.train.prompt_vocabulary.size());
    regularization_ = regularization::RegularizationModule(reg_, p, clip_width_, c3, rng);

    if (!cfg_.backbone_weights.empty()) {
        // Pretrained encoder weights exported into the checkpoint container;
        // entries outside backbone.* are ignored, matching names must agree
        // on shape.
        CheckpointData data = read_checkpoint(cfg_.backbone_weights);
        int loaded = 0;
        for (size_t i = 0; i < data.names.size(); ++i) {
            if (data.names[i].rfind("backbone.", 0) != 0) continue;
            ad::Var p = reg_.find(data.names[i]);
            if (!p) continue;
            if (!p->value.same_shape(data.tensors[i]))
                throw DataError("backbone weights shape mismatch for " + data.names[i] + ": " +
                                data.tensors[i].shape_str() + " vs " + p->value.shape_str());
            p->value = data.tensors[i];
            ++loaded;
        }
        if (loaded == 0)
            throw DataError("no matching backbone parameters in " + cfg_.backbone_weights);
    }

    if (spec.frozen) reg_.freeze_prefix("backbone.");
}

ForwardResult LccoModel::forward_set(const ImageSet& set, const clip::ClipBundle& bundle) const {
    validate_image_set(set);
    const ModuleToggles& toggles = cfg_.train.modules;
    int n = set.size();
    bool needs_clip = toggles.clip_interaction || toggles.clip_regularization;
    if (needs_clip) {
        if (bundle.d != clip_width_)
            throw DataError("forward_set: bundle width does not match the model");
        if (bundle.h_img.dim(0) != n)
            throw DataError("forward_set: bundle has " + std::to_string(bundle.h_img.dim(0)) +
                            " image embeddings for " + std::to_string(n) + " images");
        if (bundle.h_txt.dim(0) != regularization_.prompt_count())
            throw DataError("forward_set: bundle prompt count does not match the model");
    }

    std::vector<backbone::PyramidContext> ctx;
    ctx.reserve(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i)
        ctx.push_back(backbone_.extract(constant(set.images[static_cast<size_t>(i)])));

    if (toggles.isfc && n >= 2) {
        std::vector<Var> coarse_feats;
        coarse_feats.reserve(static_cast<size_t>(n));
        for (auto& c : ctx) coarse_feats.push_back(c.f1);
        std::vector<Var> refined = isfc_.refine_set(coarse_feats);
        for (int i = 0; i < n; ++i)
            backbone_.reinject(ctx[static_cast<size_t>(i)], refined[static_cast<size_t>(i)], 1);
    }

    ForwardResult out;
    if (toggles.clip_interaction) {
        interaction::Distilled distilled = interaction::distill_text(bundle, cfg_.train.k);
        Var h_hat = interaction_.refine_image_embeddings(constant(bundle.h_img));
        Var fused = interaction_.fuse(h_hat, constant(distilled.rows));
        for (int i = 0; i < n; ++i) {
            Var refined = interaction_.modulate(ctx[static_cast<size_t>(i)].f2, row(fused, i));
            backbone_.reinject(ctx[static_cast<size_t>(i)], refined, 2);
            out.coarse.push_back(interaction_.coarse_decode(row(h_hat, i)));
        }
    }

    if (toggles.clip_regularization) {
        out.upsilon = regularization_.class_probabilities(constant(bundle.s));
        out.star_index = regularization::most_likely_class(out.upsilon->value);
        Tensor star_row({clip_width_});
        for (int j = 0; j < clip_width_; ++j) star_row[j] = bundle.h_txt.at2(out.star_index, j);
        Var h_star = constant(star_row);
        for (int i = 0; i < n; ++i) {
            out.f3_before.push_back(ctx[static_cast<size_t>(i)].f3->value);
            Var refined = regularization_.regularize(ctx[static_cast<size_t>(i)].f3, h_star);
            backbone_.reinject(ctx[static_cast<size_t>(i)], refined, 3);
            out.f3_after.push_back(ctx[static_cast<size_t>(i)].f3->value);
        }
    } else {
        for (int i = 0; i < n; ++i) {
            out.f3_before.push_back(ctx[static_cast<size_t>(i)].f3->value);
            out.f3_after.push_back(ctx[static_cast<size_t>(i)].f3->value);
        }
    }

    out.masks.reserve(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) out.masks.push_back(backbone_.decode(ctx[static_cast<size_t>(i)].f3));
    return out;
}

}  // namespace lcco
