#pragma once

#include <vector>

#include "lcco/backbone.hpp"
#include "lcco/clip_interaction.hpp"
#include "lcco/clip_provider.hpp"
#include "lcco/clip_regularization.hpp"
#include "lcco/config.hpp"
#include "lcco/isfc.hpp"

namespace lcco {

/// Everything one forward pass over a set produces. Vars participate in the
/// training graph; diagnostic tensors are detached values.
struct ForwardResult {
    std::vector<ad::Var> masks;   // N soft masks [R,R]
    std::vector<ad::Var> coarse;  // N coarse masks, empty when interaction is off
    ad::Var upsilon;              // [P] class probabilities, null when regularization is off
    int star_index = -1;          // most likely class, -1 when regularization is off
    std::vector<Tensor> f3_before, f3_after;  // finest feature before/after regularization
};

/// The assembled co-segmentation network: backbone plus the three refinement
/// modules, wired coarse-to-fine. Module toggles reduce it down to the
/// per-image baseline.
class LccoModel {
public:
    LccoModel(const ExperimentConfig& cfg, int clip_width);

    /// Pipeline order: extract pyramids; ISFC refines the coarse level and is
    /// reinjected; CLIP interaction modulates the mid level and is
    /// reinjected; CLIP regularization gates the fine level; decode. The
    /// bundle must come from this set's images.
    ForwardResult forward_set(const ImageSet& set, const clip::ClipBundle& bundle) const;

    nn::ParamRegistry& params() { return reg_; }
    const nn::ParamRegistry& params() const { return reg_; }
    const ExperimentConfig& config() const { return cfg_; }
    int clip_width() const { return clip_width_; }
    int coarse_resolution() const { return cfg_.resolution / 16; }

    const backbone::Backbone& net() const { return backbone_; }
    const isfc::IsfcModule& isfc() const { return isfc_; }
    const interaction::InteractionModule& interaction() const { return interaction_; }
    const regularization::RegularizationModule& regularization() const { return regularization_; }

private:
    ExperimentConfig cfg_;
    int clip_width_;
    nn::ParamRegistry reg_;
    backbone::Backbone backbone_;
    isfc::IsfcModule isfc_;
    interaction::InteractionModule interaction_;
    regularization::RegularizationModule regularization_;
};

}  // namespace lcco
