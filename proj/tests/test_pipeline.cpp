#include <doctest.h>

#include "lcco/checkpoint.hpp"
#include "lcco/harness.hpp"
#include "lcco/imageops.hpp"
#include "lcco/pipeline.hpp"
#include "support/synth.hpp"

using namespace lcco;

namespace {
ExperimentConfig small_config() {
    ExperimentConfig cfg;
    cfg.resolution = 32;
    cfg.stub_channels = {8, 8, 8};
    cfg.clip_width = 8;
    cfg.isfc_heads = 4;
    cfg.fusion_heads = 1;
    cfg.train.prompt_vocabulary = {"alpha", "beta", "gamma", "delta"};
    cfg.train.k = 2;
    cfg.train.seed = 17;
    return cfg;
}

struct Fixture {
    ExperimentConfig cfg;
    clip::PromptBank bank;
    clip::FixtureClipBackend backend;
    Fixture(ExperimentConfig c = small_config())
        : cfg(std::move(c)),
          bank(clip::PromptBank::make(cfg.train.prompt_vocabulary, cfg.train.prompt_template)),
          backend(cfg.clip_width, cfg.train.seed) {}

    clip::ClipBundle bundle_for(const ImageSet& set) const {
        return clip::similarity(backend.encode_images(set.images),
                                backend.encode_prompts(bank));
    }
};
}  // namespace

TEST_CASE("forward_set produces one bounded soft mask per image") {
    Fixture fx;
    LccoModel model(fx.cfg, fx.cfg.clip_width);
    ImageSet set = test::make_square_set(4, 32, 11);
    ad::NoGradGuard ng;
    ForwardResult out = model.forward_set(set, fx.bundle_for(set));
    REQUIRE(out.masks.size() == 4);
    for (const auto& m : out.masks) {
        CHECK(m->value.shape() == std::vector<int>{32, 32});
        for (long long i = 0; i < m->value.size(); ++i) {
            CHECK(m->value[i] >= 0.0);
            CHECK(m->value[i] <= 1.0);
        }
    }
    CHECK(out.coarse.size() == 4);
    CHECK(out.star_index >= 0);
    CHECK(out.upsilon->value.dim(0) == 4);
}

TEST_CASE("forward_set is deterministic") {
    Fixture fx;
    LccoModel model(fx.cfg, fx.cfg.clip_width);
    ImageSet set = test::make_square_set(3, 32, 12);
    ad::NoGradGuard ng;
    ForwardResult a = model.forward_set(set, fx.bundle_for(set));
    ForwardResult b = model.forward_set(set, fx.bundle_for(set));
    for (size_t i = 0; i < a.masks.size(); ++i)
        CHECK(max_abs_diff(a.masks[i]->value, b.masks[i]->value) == 0.0);
}

TEST_CASE("baseline (all modules off) is bit-exactly independent of companions") {
    ExperimentConfig cfg = small_config();
    cfg.train.modules = {false, false, false};
    Fixture fx(cfg);
    LccoModel model(cfg, cfg.clip_width);

    ImageSet set = test::make_square_set(4, 32, 13);
    ad::NoGradGuard ng;
    ForwardResult base = model.forward_set(set, fx.bundle_for(set));

    // Replace every companion of image 0 and permute; image 0's mask must
    // not change by a single bit.
    ImageSet other = test::make_square_set(4, 32, 999);
    ImageSet replaced;
    replaced.set_id = "replaced";
    replaced.images = {set.images[0], other.images[2], other.images[0], other.images[1]};
    ForwardResult alt = model.forward_set(replaced, fx.bundle_for(replaced));
    CHECK(max_abs_diff(base.masks[0]->value, alt.masks[0]->value) == 0.0);
}

TEST_CASE("every module-toggle combination runs end to end") {
    ImageSet set = test::make_square_set(3, 32, 14);
    for (int combo = 0; combo < 8; ++combo) {
        ExperimentConfig cfg = small_config();
        cfg.train.modules.isfc = (combo & 1) != 0;
        cfg.train.modules.clip_interaction = (combo & 2) != 0;
        cfg.train.modules.clip_regularization = (combo & 4) != 0;
        Fixture fx(cfg);
        LccoModel model(cfg, cfg.clip_width);
        ad::NoGradGuard ng;
        ForwardResult out = model.forward_set(set, fx.bundle_for(set));
        CHECK(out.masks.size() == 3);
        CHECK(out.coarse.empty() == !cfg.train.modules.clip_interaction);
        CHECK((out.upsilon == nullptr) == !cfg.train.modules.clip_regularization);
    }
}

TEST_CASE("toggling interaction off passes F2 through unchanged") {
    // With interaction disabled the decoded masks must match a model whose
    // interaction weights are arbitrary, proving F2 is untouched.
    ExperimentConfig off = small_config();
    off.train.modules.clip_interaction = false;
    Fixture fx(off);
    LccoModel a(off, off.clip_width);
    LccoModel b(off, off.clip_width);
    // Perturb b's interaction weights; outputs must still agree bit-exactly.
    for (const auto& name : b.params().names())
        if (name.rfind("interaction.", 0) == 0) b.params().find(name)->value.fill(7.7);
    ImageSet set = test::make_square_set(3, 32, 15);
    ad::NoGradGuard ng;
    ForwardResult ra = a.forward_set(set, fx.bundle_for(set));
    ForwardResult rb = b.forward_set(set, fx.bundle_for(set));
    for (size_t i = 0; i < ra.masks.size(); ++i)
        CHECK(max_abs_diff(ra.masks[i]->value, rb.masks[i]->value) == 0.0);
}

TEST_CASE("checkpoint round-trip reproduces masks bit-exactly") {
    Fixture fx;
    LccoModel model(fx.cfg, fx.cfg.clip_width);
    ImageSet set = test::make_square_set(3, 32, 16);
    ad::NoGradGuard ng;
    ForwardResult before = model.forward_set(set, fx.bundle_for(set));

    std::string path = test::fresh_dir("ckpt") + "/model.lckp";
    save_checkpoint(path, model.params(), config_to_json(fx.cfg));

    LccoModel reloaded(fx.cfg, fx.cfg.clip_width);
    load_checkpoint_into(read_checkpoint(path), reloaded.params());
    ForwardResult after = reloaded.forward_set(set, fx.bundle_for(set));
    for (size_t i = 0; i < before.masks.size(); ++i)
        CHECK(max_abs_diff(before.masks[i]->value, after.masks[i]->value) == 0.0);
}

TEST_CASE("checkpoint contains no CLIP-owned parameters") {
    Fixture fx;
    LccoModel model(fx.cfg, fx.cfg.clip_width);
    for (const auto& name : model.params().names()) CHECK(name.rfind("clip.", 0) != 0);
}

TEST_CASE("backbone_weights initializes the backbone from an exported checkpoint") {
    ExperimentConfig cfg_a = small_config();
    LccoModel a(cfg_a, cfg_a.clip_width);
    std::string path = test::fresh_dir("bbw") + "/encoder.lckp";
    save_checkpoint(path, a.params(), config_to_json(cfg_a));

    ExperimentConfig cfg_b = small_config();
    cfg_b.train.seed = 999;  // different init everywhere...
    cfg_b.backbone_weights = path;  // ...except the backbone, loaded from a
    LccoModel b(cfg_b, cfg_b.clip_width);

    bool backbone_equal = true, others_differ = false;
    for (size_t i = 0; i < a.params().names().size(); ++i) {
        const std::string& name = a.params().names()[i];
        double diff = max_abs_diff(a.params().params()[i]->value, b.params().find(name)->value);
        if (name.rfind("backbone.", 0) == 0 && diff != 0.0) backbone_equal = false;
        if (name.rfind("isfc.", 0) == 0 && diff != 0.0) others_differ = true;
    }
    CHECK(backbone_equal);
    CHECK(others_differ);

    ExperimentConfig cfg_c = small_config();
    cfg_c.backbone_weights = test::fresh_dir("bbw2") + "/missing.lckp";
    CHECK_THROWS_AS(LccoModel(cfg_c, cfg_c.clip_width), DataError);
}

TEST_CASE("resnet50 pipeline runs end to end and is deterministic") {
    ExperimentConfig cfg;
    cfg.backbone = "pretrained_resnet50";
    cfg.resolution = 64;  // small raster keeps this a smoke test
    cfg.clip_width = 8;
    cfg.isfc_heads = 4;
    cfg.fusion_heads = 1;
    cfg.train.prompt_vocabulary = {"alpha", "beta"};
    cfg.train.k = 1;
    cfg.train.seed = 3;
    Fixture fx(cfg);
    LccoModel model(cfg, cfg.clip_width);
    ImageSet set = test::make_square_set(2, 64, 21);
    ad::NoGradGuard ng;
    ForwardResult a = model.forward_set(set, fx.bundle_for(set));
    ForwardResult b = model.forward_set(set, fx.bundle_for(set));
    REQUIRE(a.masks.size() == 2);
    CHECK(a.masks[0]->value.shape() == std::vector<int>{64, 64});
    CHECK(max_abs_diff(a.masks[0]->value, b.masks[0]->value) == 0.0);
}

TEST_CASE("frozen backbone excludes its weights from the trainable set") {
    ExperimentConfig cfg = small_config();
    cfg.backbone_frozen = true;
    LccoModel model(cfg, cfg.clip_width);
    for (const auto& p : model.params().trainable_params()) CHECK(p->requires_grad);
    long long trainable = 0;
    for (const auto& p : model.params().trainable_params()) trainable += p->value.size();
    CHECK(trainable < model.params().total_size());
}
