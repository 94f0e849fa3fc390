#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "lcco/errors.hpp"
#include "lcco/harness.hpp"
#include "lcco/imageops.hpp"
#include "lcco/png_io.hpp"
#include "support/synth.hpp"

using namespace lcco;
namespace fs = std::filesystem;

namespace {
ExperimentConfig harness_config(const std::string& root, int steps = 3) {
    ExperimentConfig cfg;
    cfg.resolution = 32;
    cfg.stub_channels = {8, 8, 8};
    cfg.clip_width = 8;
    cfg.isfc_heads = 4;
    cfg.fusion_heads = 1;
    cfg.train.prompt_vocabulary = {"alpha", "beta", "gamma", "delta"};
    cfg.train.k = 2;
    cfg.train.seed = 23;
    cfg.train.steps = steps;
    cfg.train.learning_rate = 1e-2;
    cfg.train.set_size_train = 4;
    cfg.output_dir = root + "/out";
    cfg.train_manifest = root + "/manifest.txt";
    cfg.eval_manifest = root + "/manifest.txt";
    return cfg;
}

std::string build_dataset(const std::string& tag, int classes = 2, int per_class = 4) {
    std::string root = test::fresh_dir(tag);
    std::vector<ImageSet> sets;
    for (int c = 0; c < classes; ++c)
        sets.push_back(test::make_square_set(per_class, 32, 100 + static_cast<std::uint64_t>(c),
                                             "class" + std::to_string(c)));
    test::write_dataset(root, sets);
    return root;
}

std::vector<std::array<double, 5>> read_loss_log(const std::string& path) {
    std::ifstream in(path);
    REQUIRE(in.good());
    std::vector<std::array<double, 5>> rows;
    std::string line;
    while (std::getline(in, line)) {
        std::istringstream ss(line);
        std::array<double, 5> row{};
        for (auto& v : row) ss >> v;
        rows.push_back(row);
    }
    return rows;
}
}  // namespace

TEST_CASE("train writes a checkpoint, a loss log and a config snapshot") {
    std::string root = build_dataset("train_smoke");
    ExperimentConfig cfg = harness_config(root, 3);
    std::string ckpt = harness::train(cfg);
    CHECK(fs::exists(ckpt));
    CHECK(fs::exists(cfg.output_dir + "/loss_log.tsv"));
    CHECK(fs::exists(cfg.output_dir + "/config_snapshot.json"));
    auto rows = read_loss_log(cfg.output_dir + "/loss_log.tsv");
    REQUIRE(rows.size() == 3);
    CHECK(rows[0][0] == 1.0);
    // l_total column equals the weighted sum of the parts.
    for (const auto& r : rows)
        CHECK(r[4] == doctest::Approx(r[1] + cfg.train.lambda1 * r[2] +
                                      cfg.train.lambda2 * r[3]).epsilon(1e-9));
}

TEST_CASE("a short run decreases the training loss on a single fixed set") {
    std::string root = build_dataset("train_decrease", 1, 4);
    ExperimentConfig cfg = harness_config(root, 4);
    cfg.train.set_size_train = 4;  // the whole class every step
    harness::train(cfg);
    auto rows = read_loss_log(cfg.output_dir + "/loss_log.tsv");
    REQUIRE(rows.size() == 4);
    CHECK(rows.back()[4] < rows.front()[4]);
}

TEST_CASE("lambda2 = 0 keeps the classification term out of the total") {
    std::string root = build_dataset("train_lambda2");
    ExperimentConfig cfg = harness_config(root, 2);
    cfg.train.lambda2 = 0.0;
    harness::train(cfg);
    auto rows = read_loss_log(cfg.output_dir + "/loss_log.tsv");
    for (const auto& r : rows) CHECK(r[4] == doctest::Approx(r[1] + r[2]).epsilon(1e-9));
}

TEST_CASE("disabled loss toggles log zero contributions") {
    std::string root = build_dataset("train_toggles");
    ExperimentConfig cfg = harness_config(root, 2);
    cfg.train.losses.cs = false;
    cfg.train.losses.c = false;
    harness::train(cfg);
    auto rows = read_loss_log(cfg.output_dir + "/loss_log.tsv");
    for (const auto& r : rows) {
        CHECK(r[2] == 0.0);
        CHECK(r[3] == 0.0);
        CHECK(r[4] == doctest::Approx(r[1]));
    }
}

TEST_CASE("training is bit-reproducible in-process under a fixed seed") {
    std::string root = build_dataset("train_repro");
    ExperimentConfig cfg = harness_config(root, 3);
    auto bytes_of = [](const std::string& p) {
        std::ifstream f(p, std::ios::binary);
        return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    };
    std::string first_ckpt = bytes_of(harness::train(cfg));
    std::string first_log = bytes_of(cfg.output_dir + "/loss_log.tsv");
    std::string second_ckpt = bytes_of(harness::train(cfg));
    CHECK(first_ckpt == second_ckpt);
    CHECK(first_log == bytes_of(cfg.output_dir + "/loss_log.tsv"));
}

TEST_CASE("evaluate produces bounded metrics and per-set diagnostics") {
    std::string root = build_dataset("eval_smoke", 2, 5);
    ExperimentConfig cfg = harness_config(root, 2);
    cfg.n_eval = 4;
    std::string ckpt = harness::train(cfg);
    harness::EvalReport report = harness::evaluate(cfg, ckpt);
    CHECK(report.images_evaluated == 10);
    CHECK(report.precision_pct >= 0.0);
    CHECK(report.precision_pct <= 100.0);
    CHECK(report.jaccard_pct >= 0.0);
    CHECK(report.jaccard_pct <= 100.0);
    REQUIRE(report.sets.size() == 2);
    for (const auto& s : report.sets) {
        CHECK(s.n_images == 5);
        CHECK(s.norm_before > 0.0);
        CHECK(s.norm_after > 0.0);
    }
    CHECK(fs::exists(cfg.output_dir + "/eval_report.json"));
}

TEST_CASE("evaluate re-runs cleanly when the set size changes") {
    std::string root = build_dataset("eval_neval", 1, 8);
    ExperimentConfig cfg = harness_config(root, 2);
    std::string ckpt = harness::train(cfg);
    cfg.n_eval = 5;
    harness::EvalReport r5 = harness::evaluate(cfg, ckpt);
    cfg.n_eval = 8;
    harness::EvalReport r8 = harness::evaluate(cfg, ckpt);
    CHECK(r5.images_evaluated == 8);
    CHECK(r8.images_evaluated == 8);
}

TEST_CASE("infer writes one binarized mask per input and is idempotent") {
    std::string root = build_dataset("infer_smoke");
    ExperimentConfig cfg = harness_config(root, 2);
    std::string ckpt = harness::train(cfg);

    // A flat directory of input images.
    std::string images = root + "/flat";
    fs::create_directories(images);
    ImageSet set = test::make_square_set(3, 32, 321);
    for (int i = 0; i < 3; ++i)
        png::write_rgb(images + "/img" + std::to_string(i) + ".png", set.images[i]);

    std::string out = root + "/masks";
    harness::infer(images, ckpt, out, true);
    for (int i = 0; i < 3; ++i) {
        std::string mask_path = out + "/img" + std::to_string(i) + ".png";
        REQUIRE(fs::exists(mask_path));
        Tensor mask = png::read_gray(mask_path);
        for (long long p = 0; p < mask.size(); ++p)
            CHECK((mask[p] == 0.0 || mask[p] == 1.0));
        CHECK(fs::exists(out + "/overlay_img" + std::to_string(i) + ".png"));
    }

    // Re-running overwrites deterministically.
    auto bytes_of = [](const std::string& p) {
        std::ifstream f(p, std::ios::binary);
        return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    };
    std::string first = bytes_of(out + "/img0.png");
    harness::infer(images, ckpt, out, false);
    CHECK(bytes_of(out + "/img0.png") == first);
}

TEST_CASE("infer requires at least two images") {
    std::string root = build_dataset("infer_single");
    ExperimentConfig cfg = harness_config(root, 1);
    std::string ckpt = harness::train(cfg);
    std::string images = root + "/one";
    fs::create_directories(images);
    png::write_rgb(images + "/only.png", test::make_square_set(2, 32, 5).images[0]);
    CHECK_THROWS_AS(harness::infer(images, ckpt, root + "/masks1", false), DataError);
}

TEST_CASE("record-fixtures covers plain, set-layout and masked variants") {
    std::string root = build_dataset("record", 1, 3);
    std::string store_path = root + "/store.lcfx";
    {
        std::ofstream prompts(root + "/prompts.txt");
        prompts << "A photo of a alpha\nA photo of a beta\n";
    }
    harness::record_fixtures(root, root + "/prompts.txt", store_path, 8, 23, 32);
    clip::FixtureStore store = clip::FixtureStore::load(store_path);
    CHECK(store.width() == 8);
    CHECK(store.prompt_count() == 2);
    // 3 images + 3 masked variants.
    CHECK(store.image_count() == 6);

    // Strict replay over the recorded store must serve training end to end.
    ExperimentConfig cfg = harness_config(root, 2);
    cfg.train.prompt_vocabulary = {"alpha", "beta"};
    cfg.clip_store = store_path;
    cfg.clip_strict = true;
    cfg.train.set_size_train = 3;
    cfg.output_dir = root + "/out_strict";
    CHECK_NOTHROW(harness::train(cfg));
}

TEST_CASE("missing ground truth in a training manifest is a data error") {
    std::string root = test::fresh_dir("train_nogt");
    ImageSet set = test::make_square_set(3, 32, 7, "plain");
    set.gt_masks.clear();
    test::write_dataset(root, {set});
    ExperimentConfig cfg = harness_config(root, 1);
    CHECK_THROWS_AS(harness::train(cfg), DataError);
}
