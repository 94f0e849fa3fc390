#include <doctest.h>

#include <cmath>
#include <random>

#include "lcco/clip_regularization.hpp"
#include "lcco/errors.hpp"
#include "lcco/imageops.hpp"
#include "support/gradcheck.hpp"
#include "support/synth.hpp"

using namespace lcco;
using namespace lcco::ad;
using namespace lcco::regularization;

namespace {
Tensor rand_mat(std::mt19937_64& rng, std::vector<int> shape, double scale = 1.0) {
    Tensor t(shape);
    std::uniform_real_distribution<double> d(-scale, scale);
    for (long long i = 0; i < t.size(); ++i) t[i] = d(rng);
    return t;
}

void zero_mlp3(RegularizationModule& mod) {
    mod.mlp3_fc1.w->value.fill(0.0);
    mod.mlp3_fc1.b->value.fill(0.0);
    mod.mlp3_fc2.w->value.fill(0.0);
    mod.mlp3_fc2.b->value.fill(0.0);
}
}  // namespace

TEST_CASE("class_probabilities sums to one for random similarity matrices") {
    std::mt19937_64 rng(41);
    nn::ParamRegistry reg;
    RegularizationModule mod(reg, 5, 4, 3, rng);
    for (int trial = 0; trial < 20; ++trial) {
        Var v = mod.class_probabilities(constant(rand_mat(rng, {3, 5})));
        double total = 0.0;
        for (int j = 0; j < 5; ++j) total += v->value[j];
        CHECK(total == doctest::Approx(1.0).epsilon(1e-6));
    }
}

TEST_CASE("class_probabilities with identity MLP3 reproduces the hand softmax") {
    std::mt19937_64 rng(42);
    nn::ParamRegistry reg;
    RegularizationModule mod(reg, 3, 4, 3, rng);
    zero_mlp3(mod);  // residual MLP reduces to the identity
    Var v = mod.class_probabilities(constant(Tensor::from({1, 3}, {2.0, 1.0, 0.0})));
    CHECK(v->value[0] == doctest::Approx(0.6652).epsilon(1e-3));
    CHECK(v->value[1] == doctest::Approx(0.2447).epsilon(1e-3));
    CHECK(v->value[2] == doctest::Approx(0.0900).epsilon(1e-3));
}

TEST_CASE("duplicating a row of s leaves the probabilities unchanged") {
    std::mt19937_64 rng(43);
    nn::ParamRegistry reg;
    RegularizationModule mod(reg, 4, 4, 3, rng);
    Tensor s = rand_mat(rng, {2, 4});
    Tensor dup({3, 4});
    for (int j = 0; j < 4; ++j) {
        dup.at2(0, j) = s.at2(0, j);
        dup.at2(1, j) = s.at2(1, j);
        dup.at2(2, j) = s.at2(1, j);  // duplicate
    }
    Var a = mod.class_probabilities(constant(s));
    Var b = mod.class_probabilities(constant(dup));
    CHECK(max_abs_diff(a->value, b->value) < 1e-12);
}

TEST_CASE("most_likely_class: argmax with declared tie-break") {
    CHECK(most_likely_class(Tensor::from({3}, {0.1, 0.8, 0.1})) == 1);
    CHECK(most_likely_class(Tensor::from({4}, {0.25, 0.25, 0.25, 0.25})) == 0);
    CHECK_THROWS_AS(most_likely_class(Tensor()), std::invalid_argument);
}

TEST_CASE("argmax of probabilities equals argmax of pre-softmax logits") {
    std::mt19937_64 rng(44);
    nn::ParamRegistry reg;
    RegularizationModule mod(reg, 6, 4, 3, rng);
    zero_mlp3(mod);
    for (int trial = 0; trial < 30; ++trial) {
        Tensor s = rand_mat(rng, {1, 6}, 2.0);
        Var v = mod.class_probabilities(constant(s));
        int from_probs = most_likely_class(v->value);
        int from_logits = 0;
        for (int j = 1; j < 6; ++j)
            if (s.at2(0, j) > s.at2(0, from_logits)) from_logits = j;
        CHECK(from_probs == from_logits);
    }
}

TEST_CASE("regularize: all-ones embedding with identity FFN5 returns FFN4 output") {
    std::mt19937_64 rng(45);
    nn::ParamRegistry reg;
    RegularizationModule mod(reg, 4, 3, 3, rng);  // D == C3 so FFN5 can be identity
    mod.ffn5.w->value.fill(0.0);
    for (int i = 0; i < 3; ++i) mod.ffn5.w->value.at4(i, i, 0, 0) = 1.0;
    mod.ffn5.b->value.fill(0.0);
    Tensor f3 = rand_mat(rng, {3, 2, 2});
    Var out = mod.regularize(constant(f3), constant(Tensor::full({3}, 1.0)));
    Var ffn4 = mod.ffn4_project(gelu(mod.ffn4_expand(constant(f3))));
    CHECK(max_abs_diff(out->value, ffn4->value) < 1e-12);
}

TEST_CASE("regularize: zero embedding annihilates the gated product") {
    std::mt19937_64 rng(46);
    nn::ParamRegistry reg;
    RegularizationModule mod(reg, 4, 4, 3, rng);
    mod.ffn5.b->value.fill(0.0);
    Var out = mod.regularize(constant(rand_mat(rng, {3, 2, 2})), constant(Tensor({4})));
    CHECK(out->value.max_abs() == 0.0);
}

TEST_CASE("regularize matches an elementwise oracle") {
    std::mt19937_64 rng(47);
    nn::ParamRegistry reg;
    RegularizationModule mod(reg, 2, 2, 2, rng);
    Tensor f3 = rand_mat(rng, {2, 2, 2});
    Tensor h = Tensor::from({2}, {-0.75, 1.25});
    Var out = mod.regularize(constant(f3), constant(h));
    Var a = mod.ffn4_project(gelu(mod.ffn4_expand(constant(f3))));
    Tensor gated(a->value.shape());
    for (int c = 0; c < 2; ++c)
        for (int p = 0; p < 4; ++p) gated[c * 4 + p] = a->value[c * 4 + p] * h[c];
    Var expect = mod.ffn5(constant(gated));
    CHECK(max_abs_diff(out->value, expect->value) < 1e-6);
}

TEST_CASE("regularize gradients match central finite differences") {
    std::mt19937_64 rng(48);
    nn::ParamRegistry reg;
    RegularizationModule mod(reg, 2, 2, 2, rng);
    Var f3 = leaf(rand_mat(rng, {2, 2, 2}, 0.5));
    Var h = leaf(rand_mat(rng, {2}, 0.5));
    Tensor mask = rand_mat(rng, {2, 2, 2});
    auto build = [&]() { return sum_all(mul(mod.regularize(f3, h), constant(mask))); };
    std::vector<Var> leaves = {f3, h, mod.ffn4_expand.w, mod.ffn5.w};
    CHECK(test::max_rel_grad_error(build, leaves) < 1e-4);
}

TEST_CASE("masked_attention_norm: all-ones and all-zeros masks") {
    Tensor f = Tensor::from({1, 2, 2}, {0.4, 0.4, 0.4, 0.4});
    Tensor ones = Tensor::full({2, 2}, 1.0);
    Tensor zeros({2, 2});
    // Uniform softmax over 4 positions: each 0.25; full-mask norm = 0.5.
    CHECK(masked_attention_norm(f, ones) == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(masked_attention_norm(f, zeros) == 0.0);
}

TEST_CASE("masked_attention_norm: half mask on a uniform 2x2 map") {
    Tensor f = Tensor::from({1, 2, 2}, {1.0, 1.0, 1.0, 1.0});
    Tensor half({2, 2});
    half.at2(0, 0) = 1.0;
    half.at2(1, 0) = 1.0;
    CHECK(masked_attention_norm(f, half) ==
          doctest::Approx(std::sqrt(2.0 * 0.25 * 0.25)).epsilon(1e-12));
}

TEST_CASE("masked_attention_norm resizes the mask when needed") {
    Tensor f = Tensor::full({2, 4, 4}, 0.1);
    Tensor mask = Tensor::full({8, 8}, 1.0);
    CHECK(masked_attention_norm(f, mask) == doctest::Approx(0.25).epsilon(1e-12));
}

TEST_CASE("gt_class_target: constructed fixture aligns every masked image with one prompt") {
    // Orthogonal one-hot embeddings: masked images all share prompt 2's axis.
    clip::PromptBank bank = clip::PromptBank::make({"a", "b", "c", "d"}, "photo of [CLASS]");
    ImageSet set = test::make_square_set(3, 16, 5, "aligned");

    clip::FixtureStore store(4);
    for (int i = 0; i < bank.size(); ++i) {
        std::vector<double> e(4, 0.0);
        e[static_cast<size_t>(i)] = 1.0;
        store.insert_prompt(bank.rendered[static_cast<size_t>(i)], e);
    }
    for (int i = 0; i < set.size(); ++i) {
        Tensor masked = imageops::apply_mask_rgb(set.images[static_cast<size_t>(i)],
                                                 set.gt_masks[static_cast<size_t>(i)]);
        store.insert_image(clip::image_content_hash(masked), {0.0, 0.0, 1.0, 0.0});
    }
    clip::FixtureClipBackend backend(std::move(store), true, 1);

    Tensor target = gt_class_target(set, bank, backend);
    REQUIRE(target.shape() == std::vector<int>{4});
    CHECK(target[2] == 1.0);
    int nonzero = 0;
    for (int j = 0; j < 4; ++j)
        if (target[j] != 0.0) ++nonzero;
    CHECK(nonzero == 1);  // exactly one-hot

    // Image order inside the set cannot change the target.
    ImageSet shuffled = set;
    std::swap(shuffled.images[0], shuffled.images[2]);
    std::swap(shuffled.gt_masks[0], shuffled.gt_masks[2]);
    Tensor target2 = gt_class_target(shuffled, bank, backend);
    CHECK(max_abs_diff(target, target2) == 0.0);
}

TEST_CASE("gt_class_target requires ground-truth masks") {
    clip::PromptBank bank = clip::PromptBank::make({"a", "b"}, "photo of [CLASS]");
    ImageSet set = test::make_square_set(2, 16, 6, "nomasks");
    set.gt_masks.clear();
    clip::FixtureClipBackend backend(4, 1);
    CHECK_THROWS_AS(gt_class_target(set, bank, backend), DataError);
}
