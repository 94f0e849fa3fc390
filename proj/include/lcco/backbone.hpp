#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "lcco/image_set.hpp"
#include "lcco/nn.hpp"

namespace lcco::backbone {

enum class Identity { stub, pretrained_resnet50 };

Identity identity_from_string(const std::string& s);

/// Static description of the wrapped segmentation backbone.
struct BackboneSpec {
    Identity identity = Identity::stub;
    std::array<int, 3> channels = {16, 12, 8};  // C1 (coarse) .. C3 (fine)
    int resolution = 64;
    std::uint64_t seed = 1;
    bool frozen = false;  // freeze backbone weights during training
    // Stage names producing F1..F3, coarse to fine. "tdK" taps the top-down
    // output at level K, "latK" the lateral projection at the same scale.
    std::array<std::string, 3> tap_points = {"td1", "td2", "td3"};
};

/// Per-image state: the current pyramid plus the lateral projections the
/// top-down path needs when a level is replaced.
struct PyramidContext {
    ad::Var f1, f2, f3;
    ad::Var lat1, lat2, lat3;
    ad::Var td1, td2, td3;
};

/// Wraps the backbone f(.): image -> three coarse-to-fine features, and the
/// decoding head mapping the finest (refined) feature to a soft mask.
class Backbone {
public:
    Backbone() = default;
    Backbone(const BackboneSpec& spec, nn::ParamRegistry& reg);

    const BackboneSpec& spec() const { return spec_; }

    /// Forward pass up to the three taps. Image must be [3,R,R].
    PyramidContext extract(const ad::Var& image) const;

    /// Replaces the given level (1..3) and recomputes all finer levels
    /// through the top-down path. Shapes must match the level exactly.
    void reinject(PyramidContext& ctx, const ad::Var& refined, int level) const;

    /// Decoding head: refined finest feature -> soft mask [R,R] in (0,1).
    ad::Var decode(const ad::Var& refined_f3) const;

    // Value-level operation surface.
    FeaturePyramid extract_pyramid(const Tensor& image) const;
    Tensor decode_mask(const Tensor& refined_f3) const;
    FeaturePyramid reinject_pyramid(const Tensor& image, const Tensor& refined, int level) const;

private:
    ad::Var encode_stub(const ad::Var& image, ad::Var& e1, ad::Var& e2, ad::Var& e3) const;
    ad::Var encode_resnet(const ad::Var& image, ad::Var& e1, ad::Var& e2, ad::Var& e3) const;
    void top_down(PyramidContext& ctx) const;
    ad::Var tap(const PyramidContext& ctx, int level) const;

    BackboneSpec spec_;

    // Stub encoder: three linear stride-2 convolutions.
    nn::Conv2d stub_enc1_, stub_enc2_, stub_enc3_;

    // ResNet50 encoder.
    struct BnAffine {
        ad::Var scale, shift;  // folded running statistics; per-channel affine
    };
    struct ConvBn {
        nn::Conv2d conv;
        BnAffine bn;
    };
    struct Bottleneck {
        ConvBn reduce, spatial, expand;
        ConvBn project;  // stride/width projection on the skip path
        bool has_project = false;
    };
    ConvBn res_stem_;
    std::vector<std::vector<Bottleneck>> res_stages_;

    // Shared top-down path.
    nn::Conv2d lateral1_, lateral2_, lateral3_;  // 1x1, encoder -> C1..C3
    nn::Conv2d smooth1_, smooth2_, smooth3_;     // 3x3
    nn::Conv2d td_proj2_, td_proj3_;             // 1x1 channel adapters on the upsampled path

    // Decode head.
    nn::Conv2d head1_, head2_, head_out_;
    nn::InstanceNorm head_norm1_, head_norm2_;
};

}  // namespace lcco::backbone
