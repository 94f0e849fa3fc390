#include "lcco/config.hpp"

#include <json.hpp>

#include <fstream>

#include "lcco/errors.hpp"

using nlohmann::json;

namespace lcco {

const std::vector<std::string>& default_vocabulary() {
    static const std::vector<std::string> voc = {
        "aeroplane", "bicycle", "bird",  "boat",        "bottle", "bus",
        "car",       "cat",     "chair", "cow",         "diningtable", "dog",
        "horse",     "motorbike", "person", "pottedplant", "sheep", "sofa",
        "train",     "tvmonitor"};
    return voc;
}

std::string render_prompt(const std::string& tmpl, const std::string& cls) {
    const std::string slot = "[CLASS]";
    size_t pos = tmpl.find(slot);
    if (pos == std::string::npos)
        throw ConfigError("prompt template has no [CLASS] slot: " + tmpl);
    if (tmpl.find(slot, pos + 1) != std::string::npos)
        throw ConfigError("prompt template has more than one [CLASS] slot: " + tmpl);
    std::string out = tmpl;
    out.replace(pos, slot.size(), cls);
    return out;
}

void validate_config(const ExperimentConfig& cfg) {
    const TrainConfig& t = cfg.train;
    int p = static_cast<int>(t.prompt_vocabulary.size());
    if (p == 0) throw ConfigError("prompt vocabulary is empty");
    if (t.k < 1 || t.k > p)
        throw ConfigError("k must satisfy 1 <= k <= " + std::to_string(p) + ", got " +
                          std::to_string(t.k));
    render_prompt(t.prompt_template, "probe");  // validates the slot
    if (t.lambda1 < 0.0 || t.lambda2 < 0.0) throw ConfigError("loss weights must be nonnegative");
    if (t.set_size_train < 2) throw ConfigError("set_size_train must be at least 2");
    if (cfg.n_eval < 2) throw ConfigError("n_eval must be at least 2");
    if (cfg.resolution % 16 != 0 || cfg.resolution < 32)
        throw ConfigError("resolution must be a multiple of 16 and at least 32");
    if (cfg.clip_backend != "fixture" && cfg.clip_backend != "real")
        throw ConfigError("clip_backend must be 'fixture' or 'real'");
    if (cfg.clip_backend == "real" && cfg.clip_store.empty())
        throw ConfigError("clip_backend 'real' requires clip_store");
    if (cfg.backbone != "stub" && cfg.backbone != "pretrained_resnet50")
        throw ConfigError("backbone must be 'stub' or 'pretrained_resnet50'");
    if (cfg.backbone == "pretrained_resnet50" && cfg.resolution % 32 != 0)
        throw ConfigError("resnet50 backbone requires resolution divisible by 32");
    for (int c : cfg.stub_channels)
        if (c < 1) throw ConfigError("stub channel widths must be positive");
    if (cfg.stub_channels[0] % cfg.isfc_heads != 0)
        throw ConfigError("isfc_heads must divide the coarse channel width");
    if (cfg.clip_width % cfg.fusion_heads != 0)
        throw ConfigError("fusion_heads must divide the embedding width");
    if (cfg.mask_threshold <= 0.0 || cfg.mask_threshold >= 1.0)
        throw ConfigError("mask_threshold must lie strictly inside (0,1)");
    if (t.optimizer != "adam" && t.optimizer != "sgd")
        throw ConfigError("optimizer must be 'adam' or 'sgd'");
}

namespace {
template <typename T>
void get_if(const json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}
}  // namespace

ExperimentConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config: " + path);
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return config_from_json_text(text, path);
}

ExperimentConfig config_from_json_text(const std::string& text, const std::string& origin) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw ConfigError("config parse error in " + origin + ": " + e.what());
    }
    const std::string& path = origin;

    ExperimentConfig cfg;
    cfg.train.prompt_vocabulary = default_vocabulary();
    try {
        get_if(j, "train_manifest", cfg.train_manifest);
        get_if(j, "eval_manifest", cfg.eval_manifest);
        get_if(j, "output_dir", cfg.output_dir);
        get_if(j, "checkpoint_every", cfg.checkpoint_every);
        get_if(j, "n_eval", cfg.n_eval);
        get_if(j, "clip_backend", cfg.clip_backend);
        get_if(j, "clip_store", cfg.clip_store);
        get_if(j, "clip_strict", cfg.clip_strict);
        get_if(j, "clip_width", cfg.clip_width);
        get_if(j, "backbone", cfg.backbone);
        get_if(j, "backbone_weights", cfg.backbone_weights);
        get_if(j, "backbone_frozen", cfg.backbone_frozen);
        get_if(j, "resolution", cfg.resolution);
        if (j.contains("stub_channels")) {
            auto v = j.at("stub_channels").get<std::vector<int>>();
            if (v.size() != 3) throw ConfigError("stub_channels must have 3 entries");
            std::copy(v.begin(), v.end(), cfg.stub_channels.begin());
        }
        get_if(j, "isfc_heads", cfg.isfc_heads);
        get_if(j, "fusion_heads", cfg.fusion_heads);
        get_if(j, "mask_threshold", cfg.mask_threshold);

        TrainConfig& t = cfg.train;
        get_if(j, "lambda1", t.lambda1);
        get_if(j, "lambda2", t.lambda2);
        get_if(j, "k", t.k);
        get_if(j, "prompt_template", t.prompt_template);
        if (j.contains("vocabulary"))
            t.prompt_vocabulary = j.at("vocabulary").get<std::vector<std::string>>();
        if (j.contains("vocabulary_file")) {
            std::ifstream vf(j.at("vocabulary_file").get<std::string>());
            if (!vf) throw ConfigError("cannot open vocabulary_file");
            t.prompt_vocabulary.clear();
            std::string line;
            while (std::getline(vf, line)) {
                while (!line.empty() && (line.back() == '\r' || line.back() == ' '))
                    line.pop_back();
                if (!line.empty()) t.prompt_vocabulary.push_back(line);
            }
        }
        get_if(j, "set_size_train", t.set_size_train);
        get_if(j, "learning_rate", t.learning_rate);
        get_if(j, "steps", t.steps);
        get_if(j, "seed", t.seed);
        get_if(j, "optimizer", t.optimizer);
        if (j.contains("modules")) {
            const json& m = j.at("modules");
            get_if(m, "isfc", t.modules.isfc);
            get_if(m, "clip_interaction", t.modules.clip_interaction);
            get_if(m, "clip_regularization", t.modules.clip_regularization);
        }
        if (j.contains("losses")) {
            const json& l = j.at("losses");
            get_if(l, "iou", t.losses.iou);
            get_if(l, "cs", t.losses.cs);
            get_if(l, "c", t.losses.c);
        }
    } catch (const json::exception& e) {
        throw ConfigError("config field error in " + path + ": " + e.what());
    }
    validate_config(cfg);
    return cfg;
}

std::string config_to_json(const ExperimentConfig& cfg) {
    const TrainConfig& t = cfg.train;
    json j;
    j["train_manifest"] = cfg.train_manifest;
    j["eval_manifest"] = cfg.eval_manifest;
    j["output_dir"] = cfg.output_dir;
    j["checkpoint_every"] = cfg.checkpoint_every;
    j["n_eval"] = cfg.n_eval;
    j["clip_backend"] = cfg.clip_backend;
    j["clip_store"] = cfg.clip_store;
    j["clip_strict"] = cfg.clip_strict;
    j["clip_width"] = cfg.clip_width;
    j["backbone"] = cfg.backbone;
    j["backbone_weights"] = cfg.backbone_weights;
    j["backbone_frozen"] = cfg.backbone_frozen;
    j["resolution"] = cfg.resolution;
    j["stub_channels"] = std::vector<int>(cfg.stub_channels.begin(), cfg.stub_channels.end());
    j["isfc_heads"] = cfg.isfc_heads;
    j["fusion_heads"] = cfg.fusion_heads;
    j["mask_threshold"] = cfg.mask_threshold;
    j["lambda1"] = t.lambda1;
    j["lambda2"] = t.lambda2;
    j["k"] = t.k;
    j["prompt_template"] = t.prompt_template;
    j["vocabulary"] = t.prompt_vocabulary;
    j["set_size_train"] = t.set_size_train;
    j["learning_rate"] = t.learning_rate;
    j["steps"] = t.steps;
    j["seed"] = t.seed;
    j["optimizer"] = t.optimizer;
    j["modules"] = {{"isfc", t.modules.isfc},
                    {"clip_interaction", t.modules.clip_interaction},
                    {"clip_regularization", t.modules.clip_regularization}};
    j["losses"] = {{"iou", t.losses.iou}, {"cs", t.losses.cs}, {"c", t.losses.c}};
    return j.dump(2);
}

}  // namespace lcco
