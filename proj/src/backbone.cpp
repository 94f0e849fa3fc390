#include "lcco/backbone.hpp"

#include <stdexcept>

#include "lcco/errors.hpp"

namespace lcco::backbone {

using namespace ad;

Identity identity_from_string(const std::string& s) {
    if (s == "stub") return Identity::stub;
    if (s == "pretrained_resnet50") return Identity::pretrained_resnet50;
    throw ConfigError("unknown backbone identity: " + s);
}

namespace {
void validate_taps(const BackboneSpec& spec) {
    for (int level = 1; level <= 3; ++level) {
        const std::string& t = spec.tap_points[static_cast<size_t>(level - 1)];
        std::string td = "td" + std::to_string(level);
        std::string lat = "lat" + std::to_string(level);
        if (t != td && t != lat)
            throw ConfigError("tap point for level " + std::to_string(level) + " must be '" + td +
                              "' or '" + lat + "', got '" + t + "'");
    }
}

Var bn_apply(const Var& x, const Var& scale, const Var& shift) {
    return add_channelwise(mul_channelwise(x, scale), shift);
}
}  // namespace

Backbone::Backbone(const BackboneSpec& spec, nn::ParamRegistry& reg) : spec_(spec) {
    validate_taps(spec_);
    std::mt19937_64 rng(spec_.seed);
    auto [c1, c2, c3] = spec_.channels;

    int enc1_out = 0, enc2_out = 0, enc3_out = 0;  // fine -> coarse encoder widths
    if (spec_.identity == Identity::stub) {
        // Fixed-seed random linear filters at three scales; no bias, no
        // nonlinearity, so an all-zero image yields an all-zero pyramid.
        enc1_out = c3;
        enc2_out = c2;
        enc3_out = c1;
        stub_enc1_ = nn::Conv2d(reg, "backbone.stub.enc1", 3, enc1_out, 3, 2, 1, rng, false);
        stub_enc2_ = nn::Conv2d(reg, "backbone.stub.enc2", enc1_out, enc2_out, 3, 2, 1, rng, false);
        stub_enc3_ = nn::Conv2d(reg, "backbone.stub.enc3", enc2_out, enc3_out, 3, 2, 1, rng, false);
    } else {
        auto conv_bn = [&](const std::string& name, int in, int out, int k, int stride,
                           int pad) -> ConvBn {
            ConvBn cb;
            cb.conv = nn::Conv2d(reg, name + ".conv", in, out, k, stride, pad, rng, false);
            cb.bn.scale = reg.add(name + ".bn.scale", Tensor::full({out}, 1.0));
            cb.bn.shift = reg.add(name + ".bn.shift", Tensor({out}));
            return cb;
        };
        res_stem_ = conv_bn("backbone.resnet.stem", 3, 64, 7, 2, 3);
        const int stage_blocks[4] = {3, 4, 6, 3};
        const int stage_width[4] = {64, 128, 256, 512};
        int in_ch = 64;
        for (int s = 0; s < 4; ++s) {
            std::vector<Bottleneck> stage;
            int width = stage_width[s];
            int out_ch = width * 4;
            for (int b = 0; b < stage_blocks[s]; ++b) {
                std::string base = "backbone.resnet.stage" + std::to_string(s + 1) + ".block" +
                                   std::to_string(b + 1);
                int stride = (b == 0 && s > 0) ? 2 : 1;
                Bottleneck bk;
                bk.reduce = conv_bn(base + ".reduce", in_ch, width, 1, 1, 0);
                bk.spatial = conv_bn(base + ".spatial", width, width, 3, stride, 1);
                bk.expand = conv_bn(base + ".expand", width, out_ch, 1, 1, 0);
                if (b == 0) {
                    bk.project = conv_bn(base + ".project", in_ch, out_ch, 1, stride, 0);
                    bk.has_project = true;
                }
                stage.push_back(std::move(bk));
                in_ch = out_ch;
            }
            res_stages_.push_back(std::move(stage));
        }
        enc1_out = 512;   // stage2 output, stride 8
        enc2_out = 1024;  // stage3, stride 16
        enc3_out = 2048;  // stage4, stride 32
    }

    lateral1_ = nn::Conv2d(reg, "backbone.lateral1", enc3_out, c1, 1, 1, 0, rng, false);
    lateral2_ = nn::Conv2d(reg, "backbone.lateral2", enc2_out, c2, 1, 1, 0, rng, false);
    lateral3_ = nn::Conv2d(reg, "backbone.lateral3", enc1_out, c3, 1, 1, 0, rng, false);
    smooth1_ = nn::Conv2d(reg, "backbone.smooth1", c1, c1, 3, 1, 1, rng, false);
    smooth2_ = nn::Conv2d(reg, "backbone.smooth2", c2, c2, 3, 1, 1, rng, false);
    smooth3_ = nn::Conv2d(reg, "backbone.smooth3", c3, c3, 3, 1, 1, rng, false);
    td_proj2_ = nn::Conv2d(reg, "backbone.td_proj2", c1, c2, 1, 1, 0, rng, false);
    td_proj3_ = nn::Conv2d(reg, "backbone.td_proj3", c2, c3, 1, 1, 0, rng, false);

    int hd = std::max(8, c3);
    head1_ = nn::Conv2d(reg, "backbone.head.conv1", c3, hd, 3, 1, 1, rng);
    head_norm1_ = nn::InstanceNorm(reg, "backbone.head.norm1", hd);
    head2_ = nn::Conv2d(reg, "backbone.head.conv2", hd, hd, 3, 1, 1, rng);
    head_norm2_ = nn::InstanceNorm(reg, "backbone.head.norm2", hd);
    head_out_ = nn::Conv2d(reg, "backbone.head.out", hd, 1, 1, 1, 0, rng);
}

Var Backbone::encode_stub(const Var& image, Var& e1, Var& e2, Var& e3) const {
    e1 = stub_enc1_(image);  // R/2, width c3
    e2 = stub_enc2_(e1);     // R/4, width c2
    e3 = stub_enc3_(e2);     // R/8, width c1
    return e3;
}

Var Backbone::encode_resnet(const Var& image, Var& e1, Var& e2, Var& e3) const {
    Var x = relu(bn_apply(res_stem_.conv(image), res_stem_.bn.scale, res_stem_.bn.shift));
    x = maxpool2d(x, 3, 2, 1);
    std::array<Var, 4> stage_out;
    for (size_t s = 0; s < res_stages_.size(); ++s) {
        for (const auto& bk : res_stages_[s]) {
            Var skip = bk.has_project
                           ? bn_apply(bk.project.conv(x), bk.project.bn.scale, bk.project.bn.shift)
                           : x;
            Var y = relu(bn_apply(bk.reduce.conv(x), bk.reduce.bn.scale, bk.reduce.bn.shift));
            y = relu(bn_apply(bk.spatial.conv(y), bk.spatial.bn.scale, bk.spatial.bn.shift));
            y = bn_apply(bk.expand.conv(y), bk.expand.bn.scale, bk.expand.bn.shift);
            x = relu(add(y, skip));
        }
        stage_out[s] = x;
    }
    e1 = stage_out[1];  // stride 8
    e2 = stage_out[2];  // stride 16
    e3 = stage_out[3];  // stride 32
    return e3;
}

void Backbone::top_down(PyramidContext& ctx) const {
    // Each level of the cascade continues from the tapped value, so replacing
    // a tap and recomputing reproduces extract() exactly.
    ctx.td1 = smooth1_(ctx.lat1);
    ctx.f1 = tap(ctx, 1);
    Var up2 = td_proj2_(upsample_bilinear(ctx.f1, ctx.lat2->value.dim(1), ctx.lat2->value.dim(2)));
    ctx.td2 = smooth2_(add(ctx.lat2, up2));
    ctx.f2 = tap(ctx, 2);
    Var up3 = td_proj3_(upsample_bilinear(ctx.f2, ctx.lat3->value.dim(1), ctx.lat3->value.dim(2)));
    ctx.td3 = smooth3_(add(ctx.lat3, up3));
    ctx.f3 = tap(ctx, 3);
}

Var Backbone::tap(const PyramidContext& ctx, int level) const {
    const std::string& t = spec_.tap_points[static_cast<size_t>(level - 1)];
    if (t == "td1") return ctx.td1;
    if (t == "td2") return ctx.td2;
    if (t == "td3") return ctx.td3;
    if (t == "lat1") return ctx.lat1;
    if (t == "lat2") return ctx.lat2;
    return ctx.lat3;
}

PyramidContext Backbone::extract(const Var& image) const {
    if (image->value.rank() != 3 || image->value.dim(0) != 3 ||
        image->value.dim(1) != spec_.resolution || image->value.dim(2) != spec_.resolution)
        throw DataError("backbone: image must be [3," + std::to_string(spec_.resolution) + "," +
                        std::to_string(spec_.resolution) + "], got " + image->value.shape_str());
    Var e1, e2, e3;
    if (spec_.identity == Identity::stub)
        encode_stub(image, e1, e2, e3);
    else
        encode_resnet(image, e1, e2, e3);
    PyramidContext ctx;
    ctx.lat1 = lateral1_(e3);
    ctx.lat2 = lateral2_(e2);
    ctx.lat3 = lateral3_(e1);
    top_down(ctx);
    return ctx;
}

void Backbone::reinject(PyramidContext& ctx, const Var& refined, int level) const {
    auto expect = [&](const Var& current) {
        if (!refined->value.same_shape(current->value))
            throw DataError("reinject: refined feature shape " + refined->value.shape_str() +
                            " does not match level " + std::to_string(level) + " shape " +
                            current->value.shape_str());
    };
    if (level == 1) {
        expect(ctx.f1);
        ctx.f1 = refined;
        Var up2 = td_proj2_(
            upsample_bilinear(ctx.f1, ctx.lat2->value.dim(1), ctx.lat2->value.dim(2)));
        ctx.td2 = smooth2_(add(ctx.lat2, up2));
        ctx.f2 = tap(ctx, 2);
        Var up3 = td_proj3_(
            upsample_bilinear(ctx.f2, ctx.lat3->value.dim(1), ctx.lat3->value.dim(2)));
        ctx.td3 = smooth3_(add(ctx.lat3, up3));
        ctx.f3 = tap(ctx, 3);
    } else if (level == 2) {
        expect(ctx.f2);
        ctx.f2 = refined;
        Var up3 = td_proj3_(
            upsample_bilinear(ctx.f2, ctx.lat3->value.dim(1), ctx.lat3->value.dim(2)));
        ctx.td3 = smooth3_(add(ctx.lat3, up3));
        ctx.f3 = tap(ctx, 3);
    } else if (level == 3) {
        expect(ctx.f3);
        ctx.f3 = refined;
    } else {
        throw std::invalid_argument("reinject: level must be 1, 2 or 3");
    }
}

Var Backbone::decode(const Var& refined_f3) const {
    if (!refined_f3->value.all_finite())
        throw NumericalError("decode_mask: non-finite input feature");
    Var x = gelu(head_norm1_(head1_(refined_f3)));
    x = gelu(head_norm2_(head2_(x)));
    Var logits = head_out_(x);  // [1,h,w]
    Var up = upsample_bilinear(logits, spec_.resolution, spec_.resolution);
    return reshape(sigmoid(up), {spec_.resolution, spec_.resolution});
}

FeaturePyramid Backbone::extract_pyramid(const Tensor& image) const {
    NoGradGuard ng;
    PyramidContext ctx = extract(constant(image));
    FeaturePyramid p{ctx.f1->value, ctx.f2->value, ctx.f3->value};
    validate_pyramid(p);
    return p;
}

Tensor Backbone::decode_mask(const Tensor& refined_f3) const {
    NoGradGuard ng;
    return decode(constant(refined_f3))->value;
}

FeaturePyramid Backbone::reinject_pyramid(const Tensor& image, const Tensor& refined,
                                          int level) const {
    NoGradGuard ng;
    PyramidContext ctx = extract(constant(image));
    reinject(ctx, constant(refined), level);
    return FeaturePyramid{ctx.f1->value, ctx.f2->value, ctx.f3->value};
}

}  // namespace lcco::backbone
