#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace lcco {

struct ModuleToggles {
    bool isfc = true;
    bool clip_interaction = true;
    bool clip_regularization = true;
};

struct LossToggles {
    bool iou = true;
    bool cs = true;
    bool c = true;
};

/// Training hyperparameters and ablation switches.
struct TrainConfig {
    double lambda1 = 1.0;  // weight of the coarse segmentation loss
    double lambda2 = 1.0;  // weight of the classification loss
    int k = 5;             // Top-K distilled text embeddings
    std::vector<std::string> prompt_vocabulary;  // defaults to the 20 VOC classes
    std::string prompt_template = "A photo of a [CLASS]";
    int set_size_train = 5;
    double learning_rate = 2e-3;
    int steps = 100;
    std::uint64_t seed = 1;
    std::string optimizer = "adam";  // adam | sgd
    ModuleToggles modules;
    LossToggles losses;
};

/// Everything a run needs: data locations, backend choices, model sizing.
struct ExperimentConfig {
    TrainConfig train;

    std::string train_manifest;
    std::string eval_manifest;
    std::string output_dir = "out";
    int checkpoint_every = 0;  // 0 = final checkpoint only
    int n_eval = 5;

    std::string clip_backend = "fixture";  // fixture | real
    std::string clip_store;                // embedding container path (required for real)
    bool clip_strict = false;              // fixture: error on store miss instead of synthesizing
    int clip_width = 32;                   // synthetic fixture embedding width

    std::string backbone = "stub";  // stub | pretrained_resnet50
    std::string backbone_weights;   // optional checkpoint with encoder weights
    bool backbone_frozen = false;   // exclude backbone weights from training
    int resolution = 224;
    std::array<int, 3> stub_channels = {16, 12, 8};  // C1, C2, C3 for the stub

    int isfc_heads = 4;
    int fusion_heads = 1;
    double mask_threshold = 0.5;
};

const std::vector<std::string>& default_vocabulary();

/// Renders the template for one class name; validates the single [CLASS] slot.
std::string render_prompt(const std::string& tmpl, const std::string& cls);

/// Throws ConfigError on any invariant violation (k range, template slot,
/// negative lambdas, resolution granularity).
void validate_config(const ExperimentConfig& cfg);

ExperimentConfig load_config(const std::string& path);
ExperimentConfig config_from_json_text(const std::string& text, const std::string& origin);
std::string config_to_json(const ExperimentConfig& cfg);

}  // namespace lcco
