// Independent oracles and scripted models shared by the tests.
#pragma once

#include "granseg/core_types.hpp"
#include "granseg/segmenter.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <queue>
#include <random>

namespace testing {

using namespace granseg;

inline BinaryMask make_mask(int h, int w, const std::function<bool(int, int)>& inside,
                            MaskRole role = MaskRole::ground_truth) {
    BinaryMask m(h, w, role);
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c) m.set(r, c, inside(r, c));
    return m;
}

inline BinaryMask rect(int h, int w, int r0, int c0, int r1, int c1, MaskRole role = MaskRole::ground_truth) {
    return make_mask(h, w, [&](int r, int c) { return r >= r0 && r < r1 && c >= c0 && c < c1; }, role);
}

inline BinaryMask random_blobs(std::mt19937_64& rng, int h, int w, int blobs, int max_radius) {
    BinaryMask m(h, w, MaskRole::ground_truth);
    std::uniform_int_distribution<int> rr(0, h - 1), cc(0, w - 1), rad(1, max_radius);
    for (int b = 0; b < blobs; ++b) {
        const int r0 = rr(rng), c0 = cc(rng), q = rad(rng);
        for (int r = 0; r < h; ++r)
            for (int c = 0; c < w; ++c)
                if ((r - r0) * (r - r0) + (c - c0) * (c - c0) <= q * q) m.set(r, c, true);
    }
    return m;
}

inline BinaryMask random_noise(std::mt19937_64& rng, int h, int w, double p) {
    BinaryMask m(h, w);
    std::bernoulli_distribution b(p);
    for (auto& v : m.pixels) v = b(rng) ? 1 : 0;
    return m;
}

inline Image random_image(std::mt19937_64& rng, int h, int w, const std::string& id = "img") {
    Image img(id, h, w);
    std::uniform_real_distribution<float> u(0.0f, 1.0f);
    for (auto& v : img.pixels) v = u(rng);
    return img;
}

/// Squared distance from every foreground pixel to the nearest background pixel,
/// with everything outside the raster counted as background. O(n^2) scan.
inline std::vector<long long> brute_force_sq_edt(const BinaryMask& m) {
    const int h = m.height, w = m.width;
    std::vector<long long> out(static_cast<size_t>(h) * w, 0);
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c) {
            if (!m.at(r, c)) continue;
            // nearest outside pixel: step off the closest edge
            long long best = std::min({r + 1, c + 1, h - r, w - c});
            best *= best;
            for (int rr = 0; rr < h; ++rr)
                for (int cc = 0; cc < w; ++cc)
                    if (!m.at(rr, cc)) {
                        const long long d = 1LL * (rr - r) * (rr - r) + 1LL * (cc - c) * (cc - c);
                        best = std::min(best, d);
                    }
            out[static_cast<size_t>(r) * w + c] = best;
        }
    return out;
}

/// Sizes of 4-connected components found by BFS, in order of first pixel (row-major).
inline std::vector<std::vector<int>> bfs_components(const BinaryMask& m) {
    const int h = m.height, w = m.width;
    std::vector<int> seen(static_cast<size_t>(h) * w, 0);
    std::vector<std::vector<int>> comps;
    for (int i = 0; i < h * w; ++i) {
        if (!m.pixels[i] || seen[i]) continue;
        std::vector<int> comp;
        std::queue<int> q;
        q.push(i);
        seen[i] = 1;
        while (!q.empty()) {
            const int p = q.front();
            q.pop();
            comp.push_back(p);
            const int r = p / w, c = p % w;
            const int nb[4][2] = {{r - 1, c}, {r + 1, c}, {r, c - 1}, {r, c + 1}};
            for (auto& n : nb) {
                if (n[0] < 0 || n[1] < 0 || n[0] >= h || n[1] >= w) continue;
                const int j = n[0] * w + n[1];
                if (m.pixels[j] && !seen[j]) {
                    seen[j] = 1;
                    q.push(j);
                }
            }
        }
        comps.push_back(std::move(comp));
    }
    return comps;
}

inline ProbabilityMap constant_map(int h, int w, double v) {
    return ProbabilityMap(h, w, v);
}

inline ProbabilityMap as_probability(const BinaryMask& m) {
    ProbabilityMap p(m.height, m.width);
    for (size_t i = 0; i < m.pixels.size(); ++i) p.values[i] = m.pixels[i] ? 1.0 : 0.0;
    return p;
}

/// Returns a mask made of the first round(f * |target|) target pixels in row-major
/// order, so its IoU with the target is exactly that fraction.
inline ProbabilityMap mask_with_iou(const BinaryMask& target, double f) {
    ProbabilityMap p(target.height, target.width);
    const size_t keep = static_cast<size_t>(std::llround(f * static_cast<double>(target.area())));
    size_t kept = 0;
    for (size_t i = 0; i < target.pixels.size() && kept < keep; ++i)
        if (target.pixels[i]) {
            p.values[i] = 1.0;
            ++kept;
        }
    return p;
}

/// Scripted model: after n clicks it returns a mask whose IoU with `target`
/// equals schedule(n).
class ScriptedPredictor : public Predictor {
  public:
    ScriptedPredictor(BinaryMask target, std::function<double(size_t)> schedule)
        : target_(std::move(target)), schedule_(std::move(schedule)) {}

    ProbabilityMap predict(const Image&, const ClickSet& clicks, const ProbabilityMap&,
                           std::optional<double>) const override {
        ++calls;
        return mask_with_iou(target_, schedule_(clicks.size()));
    }

    mutable size_t calls = 0;

  private:
    BinaryMask target_;
    std::function<double(size_t)> schedule_;
};

/// Always returns the same map.
class FixedPredictor : public Predictor {
  public:
    explicit FixedPredictor(ProbabilityMap m) : map_(std::move(m)) {}
    ProbabilityMap predict(const Image&, const ClickSet&, const ProbabilityMap&, std::optional<double>) const override {
        return map_;
    }

  private:
    ProbabilityMap map_;
};

/// Geometric stand-in for a trained segmenter: keeps the binarized mask prompt
/// but hands every pixel closer to a negative click than to the positive clicks
/// over to the background. Produces part-like Voronoi cells.
class VoronoiPredictor : public Predictor {
  public:
    ProbabilityMap predict(const Image& image, const ClickSet& clicks, const ProbabilityMap& prev,
                           std::optional<double>) const override {
        ProbabilityMap out(prev.height, prev.width);
        for (int r = 0; r < prev.height; ++r)
            for (int c = 0; c < prev.width; ++c) {
                if (prev.at(r, c) < 0.5) continue;
                long long pos = std::numeric_limits<long long>::max(), neg = pos;
                for (const auto& k : clicks) {
                    const long long d = 1LL * (k.row - r) * (k.row - r) + 1LL * (k.col - c) * (k.col - c);
                    (k.is_positive() ? pos : neg) = std::min(k.is_positive() ? pos : neg, d);
                }
                out.at(r, c) = neg < pos ? 0.1 : 0.9;
            }
        (void)image;
        return out;
    }
};

/// Tiny transformer configuration for fast tests.
inline SegmenterConfig tiny_config(int image_size = 32) {
    SegmenterConfig c;
    c.image_size = image_size;
    c.patch_size = 8;
    c.embed_dim = 16;
    c.depth = 2;
    c.num_heads = 2;
    c.pixel_dim = 4;
    return c;
}

/// Nudges every parameter so no tensor is exactly zero (makes gradients and
/// granularity effects observable on an untrained model).
inline void jitter(SegmenterState& s, std::uint64_t seed, double scale = 0.05) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-0.5, 0.5);
    s.params.for_each([&](const std::string&, Mat& m) {
        for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] += scale * u(rng);
    });
}

inline double max_abs_diff(const ProbabilityMap& a, const ProbabilityMap& b) {
    double d = 0.0;
    for (size_t i = 0; i < a.values.size(); ++i) d = std::max(d, std::abs(a.values[i] - b.values[i]));
    return d;
}

} // namespace testing
