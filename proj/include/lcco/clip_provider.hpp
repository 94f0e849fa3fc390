#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "lcco/image_set.hpp"
#include "lcco/tensor.hpp"

namespace lcco::clip {

/// P rendered prompts, one per vocabulary class.
struct PromptBank {
    std::vector<std::string> vocabulary;
    std::string tmpl;
    std::vector<std::string> rendered;

    static PromptBank make(std::vector<std::string> vocabulary, std::string tmpl);
    int size() const { return static_cast<int>(rendered.size()); }
};

/// Frozen embeddings and the image-text similarity machinery for one set.
struct ClipBundle {
    Tensor h_img;  // [N,D], unit-norm rows
    Tensor h_txt;  // [P,D], unit-norm rows
    Tensor s;      // [N,P] pairwise cosine similarities
    Tensor sigma;  // [P], column sums of s over the N rows
    int d = 0;
};

/// Throws on any ClipBundle invariant violation (row norms within 1e-5,
/// s entries in [-1,1], sigma consistent within 1e-6).
void validate_bundle(const ClipBundle& b);

/// Computes s and sigma from unit-norm embedding matrices.
ClipBundle similarity(const Tensor& h_img, const Tensor& h_txt);

/// Recorded (key -> D-vector) pairs: image embeddings under a content hash,
/// text embeddings under the prompt string. Serialized as the LCFX container.
class FixtureStore {
public:
    FixtureStore() = default;
    explicit FixtureStore(int width) : width_(width) {}

    int width() const { return width_; }
    int image_count() const { return static_cast<int>(images_.size()); }
    int prompt_count() const { return static_cast<int>(prompts_.size()); }

    void insert_image(std::uint64_t content_hash, std::vector<double> embedding);
    void insert_prompt(const std::string& prompt, std::vector<double> embedding);
    const std::vector<double>* find_image(std::uint64_t content_hash) const;
    const std::vector<double>* find_prompt(const std::string& prompt) const;

    void save(const std::string& path) const;
    static FixtureStore load(const std::string& path);
    std::uint64_t content_checksum() const;

private:
    int width_ = 0;
    std::unordered_map<std::uint64_t, std::vector<double>> images_;
    std::map<std::string, std::vector<double>> prompts_;  // ordered for stable serialization
};

/// Content hash of an image raster: FNV-1a over the 8-bit quantized pixels
/// plus the shape, matching what serialization would write.
std::uint64_t image_content_hash(const Tensor& img);

/// Deterministic synthetic unit embedding for a key. splitmix64-seeded
/// Box-Muller draws, so any process (or an oracle in a test) regenerates
/// identical vectors from (seed, width, key).
std::vector<double> synthetic_embedding(std::uint64_t seed, int width, std::uint64_t key);

/// Frozen encoder interface. Implementations never expose mutable weights.
class ClipBackend {
public:
    virtual ~ClipBackend() = default;
    virtual int width() const = 0;
    virtual Tensor encode_images(const std::vector<Tensor>& images) const = 0;  // [N,D]
    virtual Tensor encode_prompts(const PromptBank& bank) const = 0;            // [P,D]
    /// Stable digest of everything that determines this backend's outputs.
    virtual std::uint64_t parameter_checksum() const = 0;
};

/// Deterministic test backend. Looks keys up in an optional recorded store
/// first; on a miss it synthesizes an embedding unless strict mode is on.
class FixtureClipBackend : public ClipBackend {
public:
    FixtureClipBackend(int width, std::uint64_t seed) : width_(width), seed_(seed), store_(width) {}
    FixtureClipBackend(FixtureStore store, bool strict, std::uint64_t seed);

    int width() const override { return width_; }
    Tensor encode_images(const std::vector<Tensor>& images) const override;
    Tensor encode_prompts(const PromptBank& bank) const override;
    std::uint64_t parameter_checksum() const override;

    FixtureStore& store() { return store_; }

private:
    std::vector<double> image_embedding(const Tensor& img) const;
    int width_;
    std::uint64_t seed_;
    FixtureStore store_;
    bool strict_ = false;
};

/// Replay backend over embeddings recorded from the actual pretrained CLIP
/// (ViT-B/16 by default; the exporter contract is documented in the README).
/// Always strict: an unknown image or prompt is an error.
class RecordedClipBackend : public ClipBackend {
public:
    explicit RecordedClipBackend(const std::string& store_path);

    int width() const override { return store_.width(); }
    Tensor encode_images(const std::vector<Tensor>& images) const override;
    Tensor encode_prompts(const PromptBank& bank) const override;
    std::uint64_t parameter_checksum() const override { return checksum_; }

private:
    FixtureStore store_;
    std::uint64_t checksum_ = 0;
};

/// Factory over the config-level backend selector.
std::unique_ptr<ClipBackend> make_backend(const std::string& kind, int width, std::uint64_t seed,
                                          const std::string& store_path, bool strict);

}  // namespace lcco::clip
