#include "lcco/harness.hpp"

#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "lcco/checkpoint.hpp"
#include "lcco/errors.hpp"
#include "lcco/imageops.hpp"
#include "lcco/losses.hpp"
#include "lcco/metrics.hpp"
#include "lcco/png_io.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace lcco::harness {

using namespace ad;

namespace {

// Deterministic regardless of the standard library's distribution internals.
std::uint64_t pick(std::mt19937_64& rng, std::uint64_t n) { return rng() % n; }

std::vector<int> sample_without_replacement(std::mt19937_64& rng, int population, int count) {
    std::vector<int> idx(static_cast<size_t>(population));
    for (int i = 0; i < population; ++i) idx[static_cast<size_t>(i)] = i;
    for (int i = 0; i < count && i < population; ++i) {
        int j = i + static_cast<int>(pick(rng, static_cast<std::uint64_t>(population - i)));
        std::swap(idx[static_cast<size_t>(i)], idx[static_cast<size_t>(j)]);
    }
    idx.resize(static_cast<size_t>(count));
    return idx;
}

struct ClassData {
    std::string dir;
    ImageSet full;
    std::vector<Tensor> coarse_gt;  // per image, at the coarse resolution
};

std::vector<ClassData> load_training_classes(const ExperimentConfig& cfg) {
    std::vector<ClassData> classes;
    for (const std::string& dir : read_manifest(cfg.train_manifest)) {
        ClassData cd;
        cd.dir = dir;
        cd.full = load_image_set(dir, cfg.resolution);
        if (!cd.full.has_gt())
            throw DataError("training set '" + dir + "' has no ground-truth masks");
        int coarse = cfg.resolution / 16;
        for (const Tensor& m : cd.full.gt_masks)
            cd.coarse_gt.push_back(imageops::downsample_mask(m, coarse, coarse));
        classes.push_back(std::move(cd));
    }
    return classes;
}

ImageSet subset_of(const ImageSet& full, const std::vector<int>& indices) {
    ImageSet s;
    s.set_id = full.set_id;
    s.class_hint = full.class_hint;
    for (int i : indices) {
        s.images.push_back(full.images[static_cast<size_t>(i)]);
        if (full.has_gt()) s.gt_masks.push_back(full.gt_masks[static_cast<size_t>(i)]);
    }
    return s;
}

std::string format_loss_line(int step, const losses::LossReport& r) {
    char buf[256];
    std::snprintf(buf, sizeof(buf), "%d\t%.17g\t%.17g\t%.17g\t%.17g", step, r.l_iou, r.l_cs,
                  r.l_c, r.l_total);
    return buf;
}

}  // namespace

ExperimentConfig parse_config_json(const std::string& text) {
    return config_from_json_text(text, "<checkpoint snapshot>");
}

std::string train(const ExperimentConfig& cfg) {
    validate_config(cfg);
    if (cfg.train_manifest.empty()) throw ConfigError("train requires train_manifest");
    fs::create_directories(cfg.output_dir);

    clip::PromptBank bank =
        clip::PromptBank::make(cfg.train.prompt_vocabulary, cfg.train.prompt_template);
    auto backend = clip::make_backend(cfg.clip_backend, cfg.clip_width, cfg.train.seed,
                                      cfg.clip_store, cfg.clip_strict);
    LccoModel model(cfg, backend->width());

    std::vector<ClassData> classes = load_training_classes(cfg);
    for (const auto& cd : classes)
        if (cd.full.size() < 2)
            throw DataError("training class '" + cd.dir + "' needs at least 2 images");

    Tensor h_txt = backend->encode_prompts(bank);

    nn::Optimizer::Kind kind = cfg.train.optimizer == "sgd" ? nn::Optimizer::Kind::sgd
                                                            : nn::Optimizer::Kind::adam;
    nn::Optimizer opt(kind, model.params().trainable_params(), cfg.train.learning_rate);

    std::ofstream log(fs::path(cfg.output_dir) / "loss_log.tsv");
    if (!log) throw DataError("cannot write loss log under " + cfg.output_dir);
    {
        std::ofstream snap(fs::path(cfg.output_dir) / "config_snapshot.json");
        snap << config_to_json(cfg) << "\n";
    }

    std::mt19937_64 rng(cfg.train.seed);
    const TrainConfig& tc = cfg.train;
    for (int step = 1; step <= tc.steps; ++step) {
        const ClassData& cd = classes[pick(rng, classes.size())];
        int n = std::min(tc.set_size_train, cd.full.size());
        std::vector<int> indices = sample_without_replacement(rng, cd.full.size(), n);
        ImageSet set = subset_of(cd.full, indices);

        clip::ClipBundle bundle = clip::similarity(backend->encode_images(set.images), h_txt);
        ForwardResult fwd = model.forward_set(set, bundle);

        losses::LossParts parts;
        if (tc.losses.iou) {
            std::vector<Var> gt;
            for (const Tensor& m : set.gt_masks) gt.push_back(constant(m));
            parts.iou = losses::iou_loss(fwd.masks, gt);
        }
        if (tc.losses.cs && !fwd.coarse.empty()) {
            std::vector<Var> gt;
            for (int i : indices) gt.push_back(constant(cd.coarse_gt[static_cast<size_t>(i)]));
            parts.cs = losses::coarse_loss(fwd.coarse, gt);
        }
        if (tc.losses.c && fwd.upsilon) {
            Tensor target = regularization::gt_class_target(set, bank, *backend);
            parts.c = losses::classification_loss(fwd.upsilon, constant(target));
        }

        losses::LossReport report;
        Var total = losses::total_loss(parts, tc, &report);
        if (!std::isfinite(report.l_total))
            throw NumericalError("non-finite training loss at step " + std::to_string(step) +
                                 " (iou=" + std::to_string(report.l_iou) +
                                 ", cs=" + std::to_string(report.l_cs) +
                                 ", c=" + std::to_string(report.l_c) + ")");

        opt.zero_grads();
        backward(total);
        opt.step();
        log << format_loss_line(step, report) << "\n";

        if (cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0 && step < tc.steps) {
            char name[64];
            std::snprintf(name, sizeof(name), "checkpoint_step%06d.lckp", step);
            save_checkpoint((fs::path(cfg.output_dir) / name).string(), model.params(),
                            config_to_json(cfg));
        }
    }

    std::string final_path = (fs::path(cfg.output_dir) / "checkpoint_final.lckp").string();
    save_checkpoint(final_path, model.params(), config_to_json(cfg));
    return final_path;
}

namespace {

struct GroupResult {
    double precision_sum = 0.0, jaccard_sum = 0.0;
    int counted = 0;
    double norm_before_sum = 0.0, norm_after_sum = 0.0;
    int norm_counted = 0;
};

GroupResult evaluate_group(const LccoModel& model, const clip::ClipBackend& backend,
                           const Tensor& h_txt, const ImageSet& set, int real_count,
                           double threshold) {
    NoGradGuard ng;
    clip::ClipBundle bundle = clip::similarity(backend.encode_images(set.images), h_txt);
    ForwardResult fwd = model.forward_set(set, bundle);

    GroupResult r;
    for (int i = 0; i < real_count; ++i) {
        Tensor pred = imageops::binarize(fwd.masks[static_cast<size_t>(i)]->value, threshold);
        const Tensor& gt = set.gt_masks[static_cast<size_t>(i)];
        r.precision_sum += metrics::precision_pct(pred, gt);
        r.jaccard_sum += metrics::jaccard_pct(pred, gt);
        ++r.counted;
        r.norm_before_sum += regularization::masked_attention_norm(
            fwd.f3_before[static_cast<size_t>(i)], gt);
        r.norm_after_sum += regularization::masked_attention_norm(
            fwd.f3_after[static_cast<size_t>(i)], gt);
        ++r.norm_counted;
    }
    return r;
}

}  // namespace

EvalReport evaluate(const ExperimentConfig& cfg, const std::string& checkpoint_path) {
    validate_config(cfg);
    if (cfg.eval_manifest.empty()) throw ConfigError("eval requires eval_manifest");
    auto t0 = std::chrono::steady_clock::now();

    clip::PromptBank bank =
        clip::PromptBank::make(cfg.train.prompt_vocabulary, cfg.train.prompt_template);
    auto backend = clip::make_backend(cfg.clip_backend, cfg.clip_width, cfg.train.seed,
                                      cfg.clip_store, cfg.clip_strict);
    LccoModel model(cfg, backend->width());
    load_checkpoint_into(read_checkpoint(checkpoint_path), model.params());

    Tensor h_txt = backend->encode_prompts(bank);

    EvalReport report;
    report.config_json = config_to_json(cfg);
    double precision_total = 0.0, jaccard_total = 0.0;
    int images_total = 0;

    for (const std::string& dir : read_manifest(cfg.eval_manifest)) {
        SetDirectory sd = scan_set_directory(dir);
        if (!sd.has_masks) throw DataError("evaluation class '" + dir + "' has no masks");
        int m = static_cast<int>(sd.image_names.size());
        int groups = (m + cfg.n_eval - 1) / cfg.n_eval;
        SetDiagnostics diag;
        diag.set_id = fs::path(dir).filename().string();
        GroupResult class_acc;
        for (int g = 0; g < groups; ++g) {
            std::vector<int> indices;
            int real_count = 0;
            for (int t = 0; t < cfg.n_eval; ++t) {
                int raw = g * cfg.n_eval + t;
                indices.push_back(raw % m);  // wrap-around padding for the final group
                if (raw < m) ++real_count;
            }
            ImageSet set = load_image_set(dir, cfg.resolution, &indices);
            GroupResult r = evaluate_group(model, *backend, h_txt, set, real_count,
                                           cfg.mask_threshold);
            class_acc.precision_sum += r.precision_sum;
            class_acc.jaccard_sum += r.jaccard_sum;
            class_acc.counted += r.counted;
            class_acc.norm_before_sum += r.norm_before_sum;
            class_acc.norm_after_sum += r.norm_after_sum;
            class_acc.norm_counted += r.norm_counted;
        }
        diag.n_images = class_acc.counted;
        diag.precision = class_acc.precision_sum / class_acc.counted;
        diag.jaccard = class_acc.jaccard_sum / class_acc.counted;
        diag.norm_before = class_acc.norm_before_sum / class_acc.norm_counted;
        diag.norm_after = class_acc.norm_after_sum / class_acc.norm_counted;
        report.sets.push_back(diag);
        precision_total += class_acc.precision_sum;
        jaccard_total += class_acc.jaccard_sum;
        images_total += class_acc.counted;
    }

    report.images_evaluated = images_total;
    report.precision_pct = precision_total / images_total;
    report.jaccard_pct = jaccard_total / images_total;
    report.wall_clock_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    fs::create_directories(cfg.output_dir);
    std::ofstream out(fs::path(cfg.output_dir) / "eval_report.json");
    out << eval_report_to_json(report) << "\n";
    return report;
}

std::string eval_report_to_json(const EvalReport& report) {
    json j;
    j["precision_pct"] = report.precision_pct;
    j["jaccard_pct"] = report.jaccard_pct;
    j["images_evaluated"] = report.images_evaluated;
    json sets = json::array();
    for (const auto& s : report.sets) {
        sets.push_back({{"set_id", s.set_id},
                        {"n_images", s.n_images},
                        {"precision_pct", s.precision},
                        {"jaccard_pct", s.jaccard},
                        {"masked_norm_before", s.norm_before},
                        {"masked_norm_after", s.norm_after}});
    }
    j["sets"] = sets;
    j["config"] = json::parse(report.config_json);
    j["wall_clock_seconds"] = report.wall_clock_seconds;
    return j.dump(2);
}

LoadedModel load_model(const std::string& checkpoint_path) {
    CheckpointData data = read_checkpoint(checkpoint_path);
    LoadedModel lm;
    lm.cfg = parse_config_json(data.config_json);
    lm.bank = clip::PromptBank::make(lm.cfg.train.prompt_vocabulary, lm.cfg.train.prompt_template);
    lm.clip = clip::make_backend(lm.cfg.clip_backend, lm.cfg.clip_width, lm.cfg.train.seed,
                                 lm.cfg.clip_store, lm.cfg.clip_strict);
    lm.model = std::make_unique<LccoModel>(lm.cfg, lm.clip->width());
    load_checkpoint_into(data, lm.model->params());
    return lm;
}

void infer(const std::string& images_dir, const std::string& checkpoint_path,
           const std::string& out_dir, bool overlay) {
    LoadedModel lm = load_model(checkpoint_path);

    std::vector<std::string> names;
    for (const auto& e : fs::directory_iterator(images_dir))
        if (e.is_regular_file() && e.path().extension() == ".png")
            names.push_back(e.path().filename().string());
    std::sort(names.begin(), names.end());
    if (names.size() < 2)
        throw DataError("infer needs at least 2 PNG images in " + images_dir);

    ImageSet set;
    set.set_id = fs::path(images_dir).filename().string();
    for (const auto& name : names) {
        Tensor img = png::read_rgb((fs::path(images_dir) / name).string());
        set.images.push_back(
            imageops::resize_bilinear(img, lm.cfg.resolution, lm.cfg.resolution));
    }

    NoGradGuard ng;
    Tensor h_txt = lm.clip->encode_prompts(lm.bank);
    clip::ClipBundle bundle = clip::similarity(lm.clip->encode_images(set.images), h_txt);
    ForwardResult fwd = lm.model->forward_set(set, bundle);

    fs::create_directories(out_dir);
    for (size_t i = 0; i < names.size(); ++i) {
        Tensor mask = imageops::binarize(fwd.masks[i]->value, lm.cfg.mask_threshold);
        png::write_gray((fs::path(out_dir) / names[i]).string(), mask);
        if (overlay) {
            Tensor blend = set.images[i];
            int r = lm.cfg.resolution;
            for (int y = 0; y < r; ++y)
                for (int x = 0; x < r; ++x)
                    if (mask.at2(y, x) > 0.5) {
                        blend.at3(0, y, x) = 0.5 * blend.at3(0, y, x) + 0.5;
                        blend.at3(1, y, x) *= 0.5;
                        blend.at3(2, y, x) *= 0.5;
                    }
            png::write_rgb((fs::path(out_dir) / ("overlay_" + names[i])).string(), blend);
        }
    }
}

void record_fixtures(const std::string& images_dir, const std::string& prompts_file,
                     const std::string& out_path, int width, std::uint64_t seed, int resolution) {
    clip::FixtureStore store(width);

    std::vector<fs::path> files;
    for (const auto& e : fs::recursive_directory_iterator(images_dir))
        if (e.is_regular_file() && e.path().extension() == ".png") files.push_back(e.path());
    std::sort(files.begin(), files.end());
    if (files.empty()) throw DataError("no PNG images under " + images_dir);

    auto record_image = [&](const Tensor& img) {
        std::uint64_t key = clip::image_content_hash(img);
        store.insert_image(key, clip::synthetic_embedding(seed, width, key));
    };

    for (const auto& path : files) {
        // Skip mask rasters themselves; they are inputs to the masked variants.
        if (path.parent_path().filename() == "masks") continue;
        Tensor img = png::read_rgb(path.string());
        if (resolution > 0) img = imageops::resize_bilinear(img, resolution, resolution);
        record_image(img);
        if (path.parent_path().filename() == "images") {
            fs::path mask_path = path.parent_path().parent_path() / "masks" / path.filename();
            if (fs::exists(mask_path)) {
                Tensor mask = imageops::binarize(png::read_gray(mask_path.string()), 0.5);
                if (resolution > 0)
                    mask = imageops::resize_nearest(mask, resolution, resolution);
                record_image(imageops::apply_mask_rgb(img, mask));
            }
        }
    }

    std::ifstream pf(prompts_file);
    if (!pf) throw DataError("cannot open prompts file: " + prompts_file);
    std::string line;
    while (std::getline(pf, line)) {
        while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) line.pop_back();
        if (line.empty()) continue;
        store.insert_prompt(line, clip::synthetic_embedding(seed, width, fnv1a64_str(line)));
    }

    store.save(out_path);
}

}  // namespace lcco::harness
