#pragma once

#include <optional>
#include <string>
#include <vector>

#include "lcco/tensor.hpp"

namespace lcco {

/// Binarization threshold for soft masks. Overridable via config.
inline constexpr double kMaskThreshold = 0.5;

/// N aligned RGB rasters sharing one common semantic object, plus optional
/// ground-truth masks. Immutable after construction.
struct ImageSet {
    std::vector<Tensor> images;    // each [3,H,W], values in [0,1]
    std::vector<Tensor> gt_masks;  // empty, or N masks [H,W] in {0,1}
    std::string set_id;
    std::string class_hint;  // metadata only, never read by the forward pass

    int size() const { return static_cast<int>(images.size()); }
    bool has_gt() const { return !gt_masks.empty(); }
    int height() const { return images.empty() ? 0 : images[0].dim(1); }
    int width() const { return images.empty() ? 0 : images[0].dim(2); }
};

/// Checks every ImageSet invariant; returns the set unchanged on success.
/// Throws DataError naming the offending index otherwise.
const ImageSet& validate_image_set(const ImageSet& s);

/// Per-image coarse-to-fine feature maps tapped from the backbone top-down
/// path. f1 is coarsest.
struct FeaturePyramid {
    Tensor f1, f2, f3;  // [C,H,W] each, spatial sizes non-decreasing f1 -> f3
};

/// Throws if spatial sizes decrease or any entry is non-finite.
void validate_pyramid(const FeaturePyramid& p);

/// Predicted soft masks for one set, plus targets when known.
struct MaskBatch {
    std::vector<Tensor> pred;         // N soft masks [H,W] in [0,1]
    std::vector<Tensor> gt;           // optional
    std::vector<Tensor> coarse_pred;  // optional, at the downsampled GT resolution
};

/// Dataset access for the on-disk layout: one directory per image set with
/// images/*.png and optional masks/*.png under matching filenames.
struct SetDirectory {
    std::string path;
    std::vector<std::string> image_names;  // sorted, without directory
    bool has_masks = false;
};

SetDirectory scan_set_directory(const std::string& dir);

/// Loads a set directory. If resolution > 0 every raster is resized to
/// resolution x resolution (bilinear images, nearest masks); 0 keeps native
/// sizes, in which case mixed sizes fail validation.
ImageSet load_image_set(const std::string& dir, int resolution,
                        const std::vector<int>* subset = nullptr);

/// Writes the set back to a directory in the dataset layout (8-bit PNGs).
void save_image_set(const ImageSet& s, const std::string& dir);

/// Reads a manifest: one set-directory path per line, blank lines and
/// #-comments skipped. Relative paths resolve against the manifest location.
std::vector<std::string> read_manifest(const std::string& manifest_path);

}  // namespace lcco
