#include <CLI11.hpp>

#include <cstdio>
#include <exception>
#include <string>

#include "lcco/config.hpp"
#include "lcco/errors.hpp"
#include "lcco/harness.hpp"

namespace {

int run(int argc, char** argv) {
    CLI::App app{"LCCo image co-segmentation"};
    app.require_subcommand(1);

    std::string config_path, checkpoint_path, images_dir, out_dir, prompts_file, out_file;
    int n_eval_override = 0;
    bool overlay = false;
    int fixture_width = 32;
    std::uint64_t fixture_seed = 1;
    int fixture_resolution = 0;

    CLI::App* train = app.add_subcommand("train", "train a model from a config file");
    train->add_option("--config", config_path, "experiment config (JSON)")->required();

    CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint over the eval manifest");
    eval->add_option("--config", config_path, "experiment config (JSON)")->required();
    eval->add_option("--checkpoint", checkpoint_path, "checkpoint file")->required();
    eval->add_option("--n-eval", n_eval_override, "images per evaluation set");

    CLI::App* infer = app.add_subcommand("infer", "co-segment a directory of images");
    infer->add_option("--images", images_dir, "directory of PNG images")->required();
    infer->add_option("--checkpoint", checkpoint_path, "checkpoint file")->required();
    infer->add_option("--out", out_dir, "output directory for masks")->required();
    infer->add_flag("--overlay", overlay, "also write overlay rasters");

    CLI::App* record = app.add_subcommand("record-fixtures",
                                          "populate a fixture embedding store");
    record->add_option("--images", images_dir, "directory tree of PNG images")->required();
    record->add_option("--prompts", prompts_file, "text file with one prompt per line")
        ->required();
    record->add_option("--out", out_file, "output store path")->required();
    record->add_option("--width", fixture_width, "embedding width (default 32)");
    record->add_option("--seed", fixture_seed, "synthesis seed (default 1)");
    record->add_option("--resolution", fixture_resolution,
                       "resize images before hashing (0 keeps native size)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    if (*train) {
        lcco::ExperimentConfig cfg = lcco::load_config(config_path);
        std::string path = lcco::harness::train(cfg);
        std::printf("checkpoint written: %s\n", path.c_str());
    } else if (*eval) {
        lcco::ExperimentConfig cfg = lcco::load_config(config_path);
        if (n_eval_override > 0) cfg.n_eval = n_eval_override;
        lcco::harness::EvalReport report = lcco::harness::evaluate(cfg, checkpoint_path);
        std::printf("precision %.2f%%  jaccard %.2f%%  over %d images\n", report.precision_pct,
                    report.jaccard_pct, report.images_evaluated);
    } else if (*infer) {
        lcco::harness::infer(images_dir, checkpoint_path, out_dir, overlay);
        std::printf("masks written to %s\n", out_dir.c_str());
    } else if (*record) {
        lcco::harness::record_fixtures(images_dir, prompts_file, out_file, fixture_width,
                                       fixture_seed, fixture_resolution);
        std::printf("fixture store written: %s\n", out_file.c_str());
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const lcco::ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 1;
    } catch (const lcco::DataError& e) {
        std::fprintf(stderr, "data error: %s\n", e.what());
        return 2;
    } catch (const lcco::NumericalError& e) {
        std::fprintf(stderr, "numerical failure: %s\n", e.what());
        return 3;
    } catch (const std::invalid_argument& e) {
        std::fprintf(stderr, "data error: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    }
}
