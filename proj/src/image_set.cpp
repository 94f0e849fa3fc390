#include "lcco/image_set.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>

#include "lcco/errors.hpp"
#include "lcco/imageops.hpp"
#include "lcco/png_io.hpp"

namespace fs = std::filesystem;

namespace lcco {

const ImageSet& validate_image_set(const ImageSet& s) {
    if (s.images.empty()) throw DataError("image set '" + s.set_id + "' is empty");
    int h = s.images[0].dim(1), w = s.images[0].dim(2);
    for (size_t i = 0; i < s.images.size(); ++i) {
        const Tensor& img = s.images[i];
        if (img.rank() != 3 || img.dim(0) != 3)
            throw DataError("image " + std::to_string(i) + " in set '" + s.set_id +
                            "' is not [3,H,W]");
        if (img.dim(1) != h || img.dim(2) != w)
            throw DataError("image " + std::to_string(i) + " in set '" + s.set_id +
                            "' has size " + std::to_string(img.dim(2)) + "x" +
                            std::to_string(img.dim(1)) + ", expected " + std::to_string(w) + "x" +
                            std::to_string(h));
    }
    if (!s.gt_masks.empty()) {
        if (s.gt_masks.size() != s.images.size())
            throw DataError("mask count mismatch in set '" + s.set_id + "': " +
                            std::to_string(s.gt_masks.size()) + " masks for " +
                            std::to_string(s.images.size()) + " images");
        for (size_t i = 0; i < s.gt_masks.size(); ++i) {
            const Tensor& m = s.gt_masks[i];
            if (m.rank() != 2 || m.dim(0) != h || m.dim(1) != w)
                throw DataError("mask " + std::to_string(i) + " in set '" + s.set_id +
                                "' does not match image size");
            for (long long p = 0; p < m.size(); ++p)
                if (m[p] != 0.0 && m[p] != 1.0)
                    throw DataError("mask " + std::to_string(i) + " in set '" + s.set_id +
                                    "' is not binary");
        }
    }
    return s;
}

void validate_pyramid(const FeaturePyramid& p) {
    const Tensor* levels[3] = {&p.f1, &p.f2, &p.f3};
    for (int i = 0; i < 3; ++i) {
        if (levels[i]->rank() != 3)
            throw DataError("feature pyramid level " + std::to_string(i + 1) + " is not [C,H,W]");
        if (!levels[i]->all_finite())
            throw NumericalError("feature pyramid level " + std::to_string(i + 1) +
                                 " contains non-finite values");
    }
    if (p.f2.dim(1) < p.f1.dim(1) || p.f2.dim(2) < p.f1.dim(2) || p.f3.dim(1) < p.f2.dim(1) ||
        p.f3.dim(2) < p.f2.dim(2))
        throw DataError("feature pyramid spatial sizes must be non-decreasing from f1 to f3");
}

SetDirectory scan_set_directory(const std::string& dir) {
    SetDirectory out;
    out.path = dir;
    fs::path images = fs::path(dir) / "images";
    if (!fs::is_directory(images)) throw DataError("no images/ directory under " + dir);
    for (const auto& e : fs::directory_iterator(images))
        if (e.is_regular_file() && e.path().extension() == ".png")
            out.image_names.push_back(e.path().filename().string());
    std::sort(out.image_names.begin(), out.image_names.end());
    if (out.image_names.empty()) throw DataError("no PNG images under " + images.string());
    out.has_masks = fs::is_directory(fs::path(dir) / "masks");
    return out;
}

ImageSet load_image_set(const std::string& dir, int resolution, const std::vector<int>* subset) {
    SetDirectory sd = scan_set_directory(dir);
    std::vector<int> indices;
    if (subset) {
        indices = *subset;
    } else {
        indices.resize(sd.image_names.size());
        for (size_t i = 0; i < indices.size(); ++i) indices[i] = static_cast<int>(i);
    }

    ImageSet set;
    set.set_id = fs::path(dir).filename().string();
    set.class_hint = set.set_id;
    for (int idx : indices) {
        if (idx < 0 || idx >= static_cast<int>(sd.image_names.size()))
            throw DataError("image index out of range for set " + dir);
        const std::string& name = sd.image_names[static_cast<size_t>(idx)];
        Tensor img = png::read_rgb((fs::path(dir) / "images" / name).string());
        if (resolution > 0) img = imageops::resize_bilinear(img, resolution, resolution);
        set.images.push_back(std::move(img));
        if (sd.has_masks) {
            fs::path mp = fs::path(dir) / "masks" / name;
            if (!fs::exists(mp)) throw DataError("missing mask for " + name + " in " + dir);
            Tensor m = png::read_gray(mp.string());
            // 0 = background, 255 = object; threshold at midpoint.
            Tensor bin = imageops::binarize(m, 0.5);
            if (resolution > 0) bin = imageops::resize_nearest(bin, resolution, resolution);
            set.gt_masks.push_back(std::move(bin));
        }
    }
    validate_image_set(set);
    if (set.size() < 2)
        throw DataError("set '" + set.set_id + "' has fewer than 2 images");
    return set;
}

void save_image_set(const ImageSet& s, const std::string& dir) {
    fs::create_directories(fs::path(dir) / "images");
    if (s.has_gt()) fs::create_directories(fs::path(dir) / "masks");
    for (int i = 0; i < s.size(); ++i) {
        char name[32];
        std::snprintf(name, sizeof(name), "%04d.png", i);
        png::write_rgb((fs::path(dir) / "images" / name).string(), s.images[static_cast<size_t>(i)]);
        if (s.has_gt())
            png::write_gray((fs::path(dir) / "masks" / name).string(),
                            s.gt_masks[static_cast<size_t>(i)]);
    }
}

std::vector<std::string> read_manifest(const std::string& manifest_path) {
    std::ifstream in(manifest_path);
    if (!in) throw DataError("cannot open manifest: " + manifest_path);
    fs::path base = fs::path(manifest_path).parent_path();
    std::vector<std::string> dirs;
    std::string line;
    while (std::getline(in, line)) {
        while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) line.pop_back();
        if (line.empty() || line[0] == '#') continue;
        fs::path p(line);
        dirs.push_back(p.is_absolute() ? p.string() : (base / p).string());
    }
    if (dirs.empty()) throw DataError("manifest lists no set directories: " + manifest_path);
    return dirs;
}

}  // namespace lcco
