#pragma once

#include <map>
#include <string>
#include <vector>

#include "ledit/ops.hpp"
#include "ledit/rng.hpp"
#include "ledit/tensor.hpp"

namespace ledit {

/// An external spatial control signal on the latent grid (sketch analog).
struct ExternalCondition {
    enum class Kind { sketch, pose_analog, canny_analog };

    Tensor grid; // H x W, entries in [0, 1]
    Kind kind = Kind::sketch;
};

inline const char* to_string(ExternalCondition::Kind k) {
    switch (k) {
        case ExternalCondition::Kind::sketch: return "sketch";
        case ExternalCondition::Kind::pose_analog: return "pose-analog";
        default: return "canny-analog";
    }
}

inline ExternalCondition::Kind condition_kind_from(const std::string& s) {
    if (s == "sketch") return ExternalCondition::Kind::sketch;
    if (s == "pose-analog") return ExternalCondition::Kind::pose_analog;
    if (s == "canny-analog") return ExternalCondition::Kind::canny_analog;
    throw ConfigError("unknown condition kind: " + s);
}

/// One place in the denoiser where adapter features are added to the hidden
/// state: a name plus the grid geometry and channel width at that depth.
struct InjectionSite {
    std::string name;
    std::size_t h = 0, w = 0;
    std::size_t width = 0;
};

/// Per-site additive features, already scaled by strength. Zero strength
/// means exact zeros everywhere.
struct AdapterFeatures {
    std::map<std::string, Tensor> by_site; // site name -> (h*w) x width
    double strength = 0.0;

    const Tensor* find(const std::string& site) const {
        auto it = by_site.find(site);
        return it == by_site.end() ? nullptr : &it->second;
    }
};

/// Fixed-weight linear condition encoder: 3x3 spatial mixing of the input
/// grid, average pooling down to each site's resolution, then a per-site
/// channel direction. No bias terms anywhere, so the encoding is linear in
/// the condition and exactly proportional to strength.
class ConditionEncoder {
  public:
    ConditionEncoder(std::size_t grid_h, std::size_t grid_w, std::vector<InjectionSite> sites,
                     std::uint64_t seed = 0xadaf7e42)
        : grid_h_(grid_h), grid_w_(grid_w), sites_(std::move(sites)) {
        RngStream rng(seed);
        for (int i = 0; i < 9; ++i) kernel_[i] = 0.3 * rng.gaussian();
        for (const auto& s : sites_) {
            Tensor dir({1, s.width});
            for (std::size_t j = 0; j < s.width; ++j) dir[j] = rng.gaussian();
            directions_[s.name] = std::move(dir);
        }
    }

    const std::vector<InjectionSite>& sites() const { return sites_; }

    /// 3x3 kernel, row-major; fixed at construction.
    const double* kernel() const { return kernel_; }

    /// Channel direction of one injection site (1 x width).
    const Tensor& direction(const std::string& site) const { return directions_.at(site); }

    AdapterFeatures encode(const ExternalCondition& c, double strength) const {
        if (c.grid.rank() != 2 || c.grid.rows() != grid_h_ || c.grid.cols() != grid_w_)
            throw ShapeError("condition grid does not match the latent grid");
        if (!(strength >= 0.0)) throw ConfigError("adapter strength must be >= 0");
        AdapterFeatures f;
        f.strength = strength;
        Tensor mixed = conv3x3(c.grid);
        for (const auto& s : sites_) {
            Tensor pooled = pool_to(mixed, s.h, s.w);
            const Tensor& dir = directions_.at(s.name);
            Tensor feat({s.h * s.w, s.width});
            for (std::size_t i = 0; i < pooled.numel(); ++i)
                for (std::size_t j = 0; j < s.width; ++j)
                    feat[i * s.width + j] = strength * pooled[i] * dir[j];
            f.by_site[s.name] = std::move(feat);
        }
        return f;
    }

  private:
    Tensor conv3x3(const Tensor& g) const {
        Tensor out({grid_h_, grid_w_});
        for (std::size_t y = 0; y < grid_h_; ++y)
            for (std::size_t x = 0; x < grid_w_; ++x) {
                double acc = 0.0;
                for (int dy = -1; dy <= 1; ++dy)
                    for (int dx = -1; dx <= 1; ++dx) {
                        const long yy = static_cast<long>(y) + dy;
                        const long xx = static_cast<long>(x) + dx;
                        if (yy < 0 || xx < 0 || yy >= static_cast<long>(grid_h_) ||
                            xx >= static_cast<long>(grid_w_))
                            continue; // zero padding
                        acc += kernel_[(dy + 1) * 3 + (dx + 1)] *
                               g[static_cast<std::size_t>(yy) * grid_w_ +
                                 static_cast<std::size_t>(xx)];
                    }
                out[y * grid_w_ + x] = acc;
            }
        return out;
    }

    Tensor pool_to(const Tensor& g, std::size_t th, std::size_t tw) const {
        if (grid_h_ % th != 0 || grid_w_ % tw != 0)
            throw ShapeError("injection site resolution does not divide the grid");
        const std::size_t fy = grid_h_ / th, fx = grid_w_ / tw;
        Tensor out({th * tw});
        for (std::size_t y = 0; y < th; ++y)
            for (std::size_t x = 0; x < tw; ++x) {
                double acc = 0.0;
                for (std::size_t dy = 0; dy < fy; ++dy)
                    for (std::size_t dx = 0; dx < fx; ++dx)
                        acc += g[(y * fy + dy) * grid_w_ + (x * fx + dx)];
                out[y * tw + x] = acc / static_cast<double>(fy * fx);
            }
        return out;
    }

    std::size_t grid_h_, grid_w_;
    std::vector<InjectionSite> sites_;
    double kernel_[9];
    std::map<std::string, Tensor> directions_;
};

/// Entrywise threshold to a {0,1} grid.
inline Tensor binarize(const Tensor& g, double threshold) {
    Tensor out = g;
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = out[i] > threshold ? 1.0 : 0.0;
    return out;
}

/// Toy edge detector: central-difference gradient magnitude summed over
/// channels, thresholded to a binary condition map. Accepts H x W or
/// H x W x C images on the latent grid.
inline ExternalCondition extract_condition(const Tensor& image, double threshold,
                                           ExternalCondition::Kind kind =
                                               ExternalCondition::Kind::sketch) {
    if (image.rank() != 2 && image.rank() != 3)
        throw ShapeError("extract_condition: expected H x W or H x W x C");
    if (!image.all_finite()) throw InputError("extract_condition: non-finite image");
    const std::size_t h = image.extent(0), w = image.extent(1);
    const std::size_t c = image.rank() == 3 ? image.extent(2) : 1;
    auto px = [&](std::size_t y, std::size_t x, std::size_t ch) {
        return image[(y * w + x) * c + ch];
    };
    auto clampi = [](long v, long lo, long hi) { return v < lo ? lo : (v > hi ? hi : v); };
    Tensor mag({h, w});
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) {
            double acc = 0.0;
            for (std::size_t ch = 0; ch < c; ++ch) {
                const std::size_t xm = static_cast<std::size_t>(clampi(static_cast<long>(x) - 1, 0,
                                                                       static_cast<long>(w) - 1));
                const std::size_t xp = static_cast<std::size_t>(clampi(static_cast<long>(x) + 1, 0,
                                                                       static_cast<long>(w) - 1));
                const std::size_t ym = static_cast<std::size_t>(clampi(static_cast<long>(y) - 1, 0,
                                                                       static_cast<long>(h) - 1));
                const std::size_t yp = static_cast<std::size_t>(clampi(static_cast<long>(y) + 1, 0,
                                                                       static_cast<long>(h) - 1));
                const double gx = 0.5 * (px(y, xp, ch) - px(y, xm, ch));
                const double gy = 0.5 * (px(yp, x, ch) - px(ym, x, ch));
                acc += gx * gx + gy * gy;
            }
            mag[y * w + x] = std::sqrt(acc);
        }
    return ExternalCondition{binarize(mag, threshold), kind};
}

} // namespace ledit
