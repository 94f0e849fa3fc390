#pragma once

#include <memory>
#include <string>
#include <vector>

#include "lcco/config.hpp"
#include "lcco/pipeline.hpp"

namespace lcco::harness {

/// Per-set evaluation row, including the fine-feature diagnostic norms.
struct SetDiagnostics {
    std::string set_id;
    int n_images = 0;
    double precision = 0.0;
    double jaccard = 0.0;
    double norm_before = 0.0;  // masked_attention_norm of F3 entering regularization
    double norm_after = 0.0;   // same after regularization
};

struct EvalReport {
    double precision_pct = 0.0;  // averaged over the evaluation pool
    double jaccard_pct = 0.0;
    int images_evaluated = 0;
    std::vector<SetDiagnostics> sets;
    std::string config_json;
    double wall_clock_seconds = 0.0;
};

std::string eval_report_to_json(const EvalReport& report);

/// Runs the full training loop: samples image sets, computes the combined
/// objective, updates every trainable parameter (CLIP stays frozen), writes
/// checkpoints and a tab-separated loss log under output_dir. Returns the
/// final checkpoint path.
std::string train(const ExperimentConfig& cfg);

/// Evaluates a checkpoint over the eval manifest: one set pool per class
/// directory, chunked into groups of n_eval with wrap-around padding; padded
/// duplicates are excluded from the metric pool. Writes eval_report.json
/// under output_dir and returns the report.
EvalReport evaluate(const ExperimentConfig& cfg, const std::string& checkpoint_path);

/// Co-segments one flat directory of PNGs (>= 2). Writes one binary mask per
/// input under out_dir, plus overlay_<name>.png blends when requested. The
/// model configuration is read from the checkpoint snapshot.
void infer(const std::string& images_dir, const std::string& checkpoint_path,
           const std::string& out_dir, bool overlay);

/// Populates a fixture store from a directory tree of PNGs and a prompt list
/// (one prompt per line) using the documented synthetic embedding scheme.
/// Images found next to masks (set-directory layout) are also recorded in
/// their background-zeroed form so strict replay covers GT class targets.
void record_fixtures(const std::string& images_dir, const std::string& prompts_file,
                     const std::string& out_path, int width, std::uint64_t seed, int resolution);

/// Builds a model whose shape matches a checkpoint snapshot and loads the
/// weights. Exposed for tests and the CLI.
struct LoadedModel {
    ExperimentConfig cfg;
    std::unique_ptr<LccoModel> model;
    std::unique_ptr<clip::ClipBackend> clip;
    clip::PromptBank bank;
};
LoadedModel load_model(const std::string& checkpoint_path);

/// Parses a config snapshot string (same schema as the config file).
ExperimentConfig parse_config_json(const std::string& text);

}  // namespace lcco::harness
