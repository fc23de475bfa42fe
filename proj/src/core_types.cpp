#include "granseg/core_types.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace granseg {

Image::Image(std::string id, int height, int width)
    : id(std::move(id)), height(height), width(width),
      pixels(static_cast<size_t>(height) * width * 3, 0.0f) {}

Image::Image(std::string id, int height, int width, std::vector<float> px)
    : id(std::move(id)), height(height), width(width), pixels(std::move(px)) {
    if (pixels.size() != static_cast<size_t>(height) * width * 3)
        throw ContractViolation("image buffer does not match " + std::to_string(height) + "x" +
                                std::to_string(width) + "x3");
}

void Image::validate() const {
    if (height < 16 || width < 16)
        throw ContractViolation("image must be at least 16x16, got " + std::to_string(height) + "x" +
                                std::to_string(width));
    if (pixels.size() != static_cast<size_t>(height) * width * 3)
        throw ContractViolation("image buffer size mismatch");
    for (float v : pixels)
        if (!(v >= 0.0f && v <= 1.0f)) throw ContractViolation("image value outside [0,1]");
}

BinaryMask::BinaryMask(int height, int width, MaskRole role)
    : height(height), width(width), pixels(static_cast<size_t>(height) * width, 0), role(role) {}

size_t BinaryMask::area() const {
    return static_cast<size_t>(std::count_if(pixels.begin(), pixels.end(), [](auto v) { return v != 0; }));
}

void BinaryMask::validate() const {
    if (pixels.size() != static_cast<size_t>(height) * width) throw ContractViolation("mask buffer size mismatch");
    if ((role == MaskRole::ground_truth || role == MaskRole::proposal) && empty())
        throw EmptyMaskError("ground-truth and proposal masks must have a foreground pixel");
}

void ProbabilityMap::validate() const {
    if (values.size() != static_cast<size_t>(height) * width)
        throw ContractViolation("probability map buffer size mismatch");
    for (double v : values)
        if (!(v >= 0.0 && v <= 1.0)) throw ContractViolation("probability outside [0,1]");
}

std::string to_string(ProposalSource s) {
    switch (s) {
    case ProposalSource::loop_prediction: return "loop_prediction";
    case ProposalSource::complement: return "complement";
    case ProposalSource::ground_truth_part: return "ground_truth_part";
    }
    return "loop_prediction";
}

ProposalSource proposal_source_from_string(const std::string& s) {
    if (s == "loop_prediction") return ProposalSource::loop_prediction;
    if (s == "complement") return ProposalSource::complement;
    if (s == "ground_truth_part") return ProposalSource::ground_truth_part;
    throw ContractViolation("unknown proposal source '" + s + "'");
}

std::string to_string(Polarity p) { return p == Polarity::positive ? "positive" : "negative"; }

Polarity polarity_from_string(const std::string& s) {
    if (s == "positive") return Polarity::positive;
    if (s == "negative") return Polarity::negative;
    throw ContractViolation("unknown click polarity '" + s + "'");
}

GranularityRecord GranularityRecord::combine(double scale, double semantic, double lambda) {
    if (!(lambda >= 0.0 && lambda <= 1.0)) throw ContractViolation("lambda must lie in [0,1]");
    return {scale, semantic, (1.0 - lambda) * scale + lambda * semantic, lambda};
}

static void require_same_shape(const BinaryMask& a, const BinaryMask& b, const char* what) {
    if (!a.same_shape(b))
        throw ContractViolation(std::string(what) + ": mask shapes differ (" + std::to_string(a.height) + "x" +
                                std::to_string(a.width) + " vs " + std::to_string(b.height) + "x" +
                                std::to_string(b.width) + ")");
}

double iou(const BinaryMask& a, const BinaryMask& b) {
    require_same_shape(a, b, "iou");
    size_t inter = 0, uni = 0;
    for (size_t i = 0; i < a.pixels.size(); ++i) {
        const bool x = a.pixels[i] != 0, y = b.pixels[i] != 0;
        inter += x && y;
        uni += x || y;
    }
    if (uni == 0) return 1.0;
    return static_cast<double>(inter) / static_cast<double>(uni);
}

namespace {

// Exact 1-D squared distance transform (lower envelope of parabolas).
void edt_1d(const std::vector<long long>& f, std::vector<long long>& d, std::vector<int>& v,
            std::vector<double>& z) {
    const int n = static_cast<int>(f.size());
    constexpr long long inf = std::numeric_limits<long long>::max() / 4;
    int k = 0;
    v[0] = 0;
    z[0] = -std::numeric_limits<double>::infinity();
    z[1] = std::numeric_limits<double>::infinity();
    // First finite sample starts the envelope; infinite samples never contribute.
    int first = -1;
    for (int q = 0; q < n; ++q)
        if (f[q] < inf) {
            first = q;
            break;
        }
    if (first < 0) {
        std::fill(d.begin(), d.end(), inf);
        return;
    }
    v[0] = first;
    for (int q = first + 1; q < n; ++q) {
        if (f[q] >= inf) continue;
        auto intersect = [&](int p) {
            return (static_cast<double>(f[q] + static_cast<long long>(q) * q) -
                    static_cast<double>(f[p] + static_cast<long long>(p) * p)) /
                   (2.0 * (q - p));
        };
        double s = intersect(v[k]);
        while (s <= z[k]) {
            --k;
            s = intersect(v[k]);
        }
        ++k;
        v[k] = q;
        z[k] = s;
        z[k + 1] = std::numeric_limits<double>::infinity();
    }
    k = 0;
    for (int q = 0; q < n; ++q) {
        while (z[k + 1] < q) ++k;
        const long long dq = q - v[k];
        d[q] = dq * dq + f[v[k]];
    }
}

} // namespace

std::vector<long long> squared_distance_to_background(const BinaryMask& m) {
    // Pad by one background pixel on every side.
    const int H = m.height + 2, W = m.width + 2;
    constexpr long long inf = std::numeric_limits<long long>::max() / 4;
    std::vector<long long> grid(static_cast<size_t>(H) * W, 0);
    for (int r = 0; r < m.height; ++r)
        for (int c = 0; c < m.width; ++c)
            if (m.at(r, c)) grid[static_cast<size_t>(r + 1) * W + (c + 1)] = inf;

    const int n = std::max(H, W);
    std::vector<long long> f(n), d(n);
    std::vector<int> v(n);
    std::vector<double> z(n + 1);

    // Columns, then rows.
    f.resize(H);
    d.resize(H);
    for (int c = 0; c < W; ++c) {
        for (int r = 0; r < H; ++r) f[r] = grid[static_cast<size_t>(r) * W + c];
        edt_1d(f, d, v, z);
        for (int r = 0; r < H; ++r) grid[static_cast<size_t>(r) * W + c] = d[r];
    }
    f.resize(W);
    d.resize(W);
    for (int r = 0; r < H; ++r) {
        for (int c = 0; c < W; ++c) f[c] = grid[static_cast<size_t>(r) * W + c];
        edt_1d(f, d, v, z);
        for (int c = 0; c < W; ++c) grid[static_cast<size_t>(r) * W + c] = d[c];
    }

    std::vector<long long> out(static_cast<size_t>(m.height) * m.width);
    for (int r = 0; r < m.height; ++r)
        for (int c = 0; c < m.width; ++c)
            out[static_cast<size_t>(r) * m.width + c] = grid[static_cast<size_t>(r + 1) * W + (c + 1)];
    return out;
}

std::pair<int, int> interior_most_point(const BinaryMask& m) {
    if (m.empty()) throw EmptyMaskError("interior_most_point: mask has no foreground");
    const auto dist = squared_distance_to_background(m);
    const long long best = *std::max_element(dist.begin(), dist.end());

    long long n = 0, sum_r = 0, sum_c = 0;
    for (int r = 0; r < m.height; ++r)
        for (int c = 0; c < m.width; ++c)
            if (dist[static_cast<size_t>(r) * m.width + c] == best) {
                ++n;
                sum_r += r;
                sum_c += c;
            }
    // Compare n * distance to centroid to stay in integers.
    std::pair<int, int> pick{-1, -1};
    long long pick_score = std::numeric_limits<long long>::max();
    for (int r = 0; r < m.height; ++r)
        for (int c = 0; c < m.width; ++c) {
            if (dist[static_cast<size_t>(r) * m.width + c] != best) continue;
            const long long dr = n * r - sum_r, dc = n * c - sum_c;
            const long long score = dr * dr + dc * dc;
            if (score < pick_score) {
                pick_score = score;
                pick = {r, c};
            }
        }
    return pick;
}

std::vector<int> label_components(const BinaryMask& m, int* num_components) {
    std::vector<int> labels(m.pixels.size(), 0);
    std::vector<int> stack;
    int next = 0;
    for (int r0 = 0; r0 < m.height; ++r0)
        for (int c0 = 0; c0 < m.width; ++c0) {
            const size_t i0 = static_cast<size_t>(r0) * m.width + c0;
            if (!m.pixels[i0] || labels[i0]) continue;
            ++next;
            labels[i0] = next;
            stack.assign(1, static_cast<int>(i0));
            while (!stack.empty()) {
                const int i = stack.back();
                stack.pop_back();
                const int r = i / m.width, c = i % m.width;
                const int nb[4][2] = {{r - 1, c}, {r + 1, c}, {r, c - 1}, {r, c + 1}};
                for (const auto& p : nb) {
                    if (p[0] < 0 || p[0] >= m.height || p[1] < 0 || p[1] >= m.width) continue;
                    const size_t j = static_cast<size_t>(p[0]) * m.width + p[1];
                    if (m.pixels[j] && !labels[j]) {
                        labels[j] = next;
                        stack.push_back(static_cast<int>(j));
                    }
                }
            }
        }
    if (num_components) *num_components = next;
    return labels;
}

size_t count_components(const BinaryMask& m) {
    int n = 0;
    label_components(m, &n);
    return static_cast<size_t>(n);
}

BinaryMask largest_connected_component(const BinaryMask& m) {
    int n = 0;
    const auto labels = label_components(m, &n);
    BinaryMask out(m.height, m.width, m.role);
    if (n == 0) return out;
    std::vector<size_t> sizes(n + 1, 0);
    for (int l : labels) ++sizes[l];
    int best = 1;
    for (int l = 2; l <= n; ++l)
        if (sizes[l] > sizes[best]) best = l;
    for (size_t i = 0; i < labels.size(); ++i) out.pixels[i] = labels[i] == best ? 1 : 0;
    return out;
}

BinaryMask fill_holes(const BinaryMask& m) {
    // Flood the background from the border; anything unreached is a hole.
    std::vector<std::uint8_t> outside(m.pixels.size(), 0);
    std::vector<int> stack;
    auto seed = [&](int r, int c) {
        const size_t i = static_cast<size_t>(r) * m.width + c;
        if (!m.pixels[i] && !outside[i]) {
            outside[i] = 1;
            stack.push_back(static_cast<int>(i));
        }
    };
    for (int r = 0; r < m.height; ++r) {
        seed(r, 0);
        seed(r, m.width - 1);
    }
    for (int c = 0; c < m.width; ++c) {
        seed(0, c);
        seed(m.height - 1, c);
    }
    while (!stack.empty()) {
        const int i = stack.back();
        stack.pop_back();
        const int r = i / m.width, c = i % m.width;
        if (r > 0) seed(r - 1, c);
        if (r + 1 < m.height) seed(r + 1, c);
        if (c > 0) seed(r, c - 1);
        if (c + 1 < m.width) seed(r, c + 1);
    }
    BinaryMask out = m;
    for (size_t i = 0; i < out.pixels.size(); ++i) out.pixels[i] = outside[i] ? 0 : 1;
    return out;
}

BinaryMask mask_and(const BinaryMask& a, const BinaryMask& b) {
    require_same_shape(a, b, "mask_and");
    BinaryMask out(a.height, a.width, a.role);
    for (size_t i = 0; i < a.pixels.size(); ++i) out.pixels[i] = (a.pixels[i] && b.pixels[i]) ? 1 : 0;
    return out;
}

BinaryMask mask_and_not(const BinaryMask& a, const BinaryMask& b) {
    require_same_shape(a, b, "mask_and_not");
    BinaryMask out(a.height, a.width, a.role);
    for (size_t i = 0; i < a.pixels.size(); ++i) out.pixels[i] = (a.pixels[i] && !b.pixels[i]) ? 1 : 0;
    return out;
}

bool is_subset(const BinaryMask& inner, const BinaryMask& outer) {
    require_same_shape(inner, outer, "is_subset");
    for (size_t i = 0; i < inner.pixels.size(); ++i)
        if (inner.pixels[i] && !outer.pixels[i]) return false;
    return true;
}

} // namespace granseg
