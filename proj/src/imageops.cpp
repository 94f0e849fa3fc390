#include "lcco/imageops.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "lcco/errors.hpp"

namespace lcco::imageops {

Tensor resize_bilinear(const Tensor& img, int out_h, int out_w) {
    if (img.rank() != 3) throw std::invalid_argument("resize_bilinear: expected [C,H,W]");
    int c = img.dim(0), h = img.dim(1), w = img.dim(2);
    if (h == out_h && w == out_w) return img;
    Tensor out({c, out_h, out_w});
    double sy = static_cast<double>(h) / out_h, sx = static_cast<double>(w) / out_w;
    for (int ch = 0; ch < c; ++ch)
        for (int oy = 0; oy < out_h; ++oy) {
            double fy = std::clamp((oy + 0.5) * sy - 0.5, 0.0, static_cast<double>(h - 1));
            int y0 = static_cast<int>(std::floor(fy));
            int y1 = std::min(y0 + 1, h - 1);
            double wy = fy - y0;
            for (int ox = 0; ox < out_w; ++ox) {
                double fx = std::clamp((ox + 0.5) * sx - 0.5, 0.0, static_cast<double>(w - 1));
                int x0 = static_cast<int>(std::floor(fx));
                int x1 = std::min(x0 + 1, w - 1);
                double wx = fx - x0;
                out.at3(ch, oy, ox) =
                    (1 - wy) * ((1 - wx) * img.at3(ch, y0, x0) + wx * img.at3(ch, y0, x1)) +
                    wy * ((1 - wx) * img.at3(ch, y1, x0) + wx * img.at3(ch, y1, x1));
            }
        }
    return out;
}

Tensor resize_nearest(const Tensor& mask, int out_h, int out_w) {
    if (mask.rank() != 2) throw std::invalid_argument("resize_nearest: expected [H,W]");
    int h = mask.dim(0), w = mask.dim(1);
    if (h == out_h && w == out_w) return mask;
    Tensor out({out_h, out_w});
    for (int oy = 0; oy < out_h; ++oy) {
        int iy = std::min(static_cast<int>(std::floor((oy + 0.5) * h / out_h)), h - 1);
        for (int ox = 0; ox < out_w; ++ox) {
            int ix = std::min(static_cast<int>(std::floor((ox + 0.5) * w / out_w)), w - 1);
            out.at2(oy, ox) = mask.at2(iy, ix);
        }
    }
    return out;
}

Tensor downsample_mask(const Tensor& mask, int out_h, int out_w) {
    if (mask.rank() != 2) throw std::invalid_argument("downsample_mask: expected [H,W]");
    int h = mask.dim(0), w = mask.dim(1);
    if (h % out_h != 0 || w % out_w != 0)
        throw DataError("downsample_mask: resolution must be an integer multiple of the target");
    int fy = h / out_h, fx = w / out_w;
    Tensor out({out_h, out_w});
    for (int oy = 0; oy < out_h; ++oy)
        for (int ox = 0; ox < out_w; ++ox) {
            double s = 0.0;
            for (int y = 0; y < fy; ++y)
                for (int x = 0; x < fx; ++x) s += mask.at2(oy * fy + y, ox * fx + x);
            out.at2(oy, ox) = (s / (fy * fx) >= 0.5) ? 1.0 : 0.0;
        }
    return out;
}

Tensor binarize(const Tensor& soft, double thresh) {
    Tensor out(soft.shape());
    for (long long i = 0; i < soft.size(); ++i) out[i] = soft[i] >= thresh ? 1.0 : 0.0;
    return out;
}

Tensor apply_mask_rgb(const Tensor& img, const Tensor& mask) {
    if (img.rank() != 3 || mask.rank() != 2 || img.dim(1) != mask.dim(0) ||
        img.dim(2) != mask.dim(1))
        throw std::invalid_argument("apply_mask_rgb: shape mismatch");
    Tensor out(img.shape());
    int h = img.dim(1), w = img.dim(2);
    for (int c = 0; c < img.dim(0); ++c)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) out.at3(c, y, x) = img.at3(c, y, x) * mask.at2(y, x);
    return out;
}

std::vector<unsigned char> to_bytes(const Tensor& t) {
    std::vector<unsigned char> bytes(static_cast<size_t>(t.size()));
    for (long long i = 0; i < t.size(); ++i) {
        double v = std::min(1.0, std::max(0.0, t[i]));
        bytes[static_cast<size_t>(i)] = static_cast<unsigned char>(std::lround(v * 255.0));
    }
    return bytes;
}

}  // namespace lcco::imageops
