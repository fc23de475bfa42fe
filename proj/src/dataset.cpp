#include "granseg/dataset.hpp"

#include "granseg/mask_io.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <random>

namespace granseg {

std::string to_string(ObjectKind k) {
    switch (k) {
    case ObjectKind::two_part_barbell: return "two_part_barbell";
    case ObjectKind::body_with_limbs: return "body_with_limbs";
    case ObjectKind::concentric_shapes: return "concentric_shapes";
    }
    return "two_part_barbell";
}

namespace {

using Rng = std::mt19937_64;

double uniform(Rng& rng, double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }

struct Rgb {
    double r, g, b;
};

Rgb hsv(double h, double s, double v) {
    h = std::fmod(h, 360.0);
    if (h < 0) h += 360.0;
    const double c = v * s, x = c * (1 - std::abs(std::fmod(h / 60.0, 2.0) - 1)), m = v - c;
    Rgb out{};
    switch (static_cast<int>(h / 60.0)) {
    case 0: out = {c, x, 0}; break;
    case 1: out = {x, c, 0}; break;
    case 2: out = {0, c, x}; break;
    case 3: out = {0, x, c}; break;
    case 4: out = {x, 0, c}; break;
    default: out = {c, 0, x}; break;
    }
    return {out.r + m, out.g + m, out.b + m};
}

double segment_distance(double r, double c, double r0, double c0, double r1, double c1) {
    const double dr = r1 - r0, dc = c1 - c0;
    const double len2 = dr * dr + dc * dc;
    double t = len2 > 0 ? ((r - r0) * dr + (c - c0) * dc) / len2 : 0.0;
    t = std::clamp(t, 0.0, 1.0);
    const double pr = r0 + t * dr - r, pc = c0 + t * dc - c;
    return std::sqrt(pr * pr + pc * pc);
}

template <class Pred>
BinaryMask raster(int n, Pred&& inside) {
    BinaryMask m(n, n, MaskRole::ground_truth);
    for (int r = 0; r < n; ++r)
        for (int c = 0; c < n; ++c) m.set(r, c, inside(r + 0.5, c + 0.5));
    return m;
}

bool touches_border(const BinaryMask& m) {
    for (int i = 0; i < m.height; ++i)
        if (m.at(i, 0) || m.at(i, m.width - 1) || m.at(0, i) || m.at(m.height - 1, i)) return true;
    return false;
}

/// Parts must be non-empty, single-component and away from the border.
bool valid_parts(const std::vector<BinaryMask>& parts) {
    for (const auto& p : parts)
        if (p.empty() || count_components(p) != 1 || touches_border(p)) return false;
    return !parts.empty();
}

std::vector<BinaryMask> make_barbell(int n, Rng& rng) {
    const double cr = uniform(rng, 0.42, 0.58) * n, cc = uniform(rng, 0.42, 0.58) * n;
    const double theta = uniform(rng, 0.0, std::numbers::pi);
    const double half = uniform(rng, 0.22, 0.30) * n;
    const double r1 = uniform(rng, 0.10, 0.16) * n, r2 = uniform(rng, 0.10, 0.16) * n;
    const double thick = std::max(1.6, uniform(rng, 0.04, 0.065) * n);
    const double ar = cr + half * std::sin(theta), ac = cc + half * std::cos(theta);
    const double br = cr - half * std::sin(theta), bc = cc - half * std::cos(theta);
    auto in1 = [&](double r, double c) { return std::hypot(r - ar, c - ac) <= r1; };
    auto in2 = [&](double r, double c) { return std::hypot(r - br, c - bc) <= r2; };
    BinaryMask d1 = raster(n, in1);
    BinaryMask d2 = raster(n, in2);
    BinaryMask bar = raster(n, [&](double r, double c) {
        return segment_distance(r, c, ar, ac, br, bc) <= thick && !in1(r, c) && !in2(r, c);
    });
    return {d1, bar, d2};
}

std::vector<BinaryMask> make_body(int n, Rng& rng) {
    const double cr = uniform(rng, 0.42, 0.58) * n, cc = uniform(rng, 0.42, 0.58) * n;
    const double a = uniform(rng, 0.14, 0.20) * n, b = uniform(rng, 0.10, 0.14) * n;
    const double phi = uniform(rng, 0.0, std::numbers::pi);
    auto in_torso = [&](double r, double c) {
        const double y = r - cr, x = c - cc;
        const double u = x * std::cos(phi) + y * std::sin(phi), v = -x * std::sin(phi) + y * std::cos(phi);
        return (u * u) / (a * a) + (v * v) / (b * b) <= 1.0;
    };
    std::vector<BinaryMask> parts{raster(n, in_torso)};
    BinaryMask taken = parts[0];

    const int limbs = std::uniform_int_distribution<int>(2, 4)(rng);
    const double start = uniform(rng, 0.0, 2 * std::numbers::pi);
    for (int k = 0; k < limbs; ++k) {
        const double ang = start + k * 2 * std::numbers::pi / limbs + uniform(rng, -0.25, 0.25);
        const double reach = std::max(a, b) + uniform(rng, 0.10, 0.17) * n;
        const double thick = std::max(1.6, uniform(rng, 0.035, 0.055) * n);
        const double er = cr + reach * std::sin(ang), ec = cc + reach * std::cos(ang);
        BinaryMask limb = raster(n, [&](double r, double c) { return segment_distance(r, c, cr, cc, er, ec) <= thick; });
        limb = mask_and_not(limb, taken);
        limb = largest_connected_component(limb);
        if (limb.area() < 6) continue;
        for (size_t i = 0; i < limb.pixels.size(); ++i) taken.pixels[i] |= limb.pixels[i];
        parts.push_back(limb);
    }
    return parts;
}

std::vector<BinaryMask> make_concentric(int n, Rng& rng) {
    const double cr = uniform(rng, 0.42, 0.58) * n, cc = uniform(rng, 0.42, 0.58) * n;
    const double r_in = uniform(rng, 0.08, 0.13) * n;
    const bool three = std::bernoulli_distribution(0.4)(rng);
    const double r_mid = r_in + uniform(rng, 0.06, 0.09) * n;
    const double r_out = (three ? r_mid : r_in) + uniform(rng, 0.07, 0.11) * n;
    const bool square = std::bernoulli_distribution(0.5)(rng);
    auto within = [&](double r, double c, double rad) {
        return square ? std::max(std::abs(r - cr), std::abs(c - cc)) <= rad * 0.9 : std::hypot(r - cr, c - cc) <= rad;
    };
    std::vector<BinaryMask> parts;
    parts.push_back(raster(n, [&](double r, double c) { return std::hypot(r - cr, c - cc) <= r_in; }));
    double inner = r_in;
    if (three) {
        parts.push_back(raster(n, [&](double r, double c) {
            return std::hypot(r - cr, c - cc) <= r_mid && std::hypot(r - cr, c - cc) > inner;
        }));
        inner = r_mid;
    }
    const double inner_final = inner;
    parts.push_back(raster(n, [&](double r, double c) {
        return within(r, c, r_out) && std::hypot(r - cr, c - cc) > inner_final;
    }));
    return parts;
}

void paint(Scene& s, Rng& rng) {
    const int n = s.image.height;
    // Low-saturation textured background.
    const Rgb base = hsv(uniform(rng, 0, 360), uniform(rng, 0.0, 0.25), uniform(rng, 0.3, 0.8));
    const double fr = uniform(rng, 0.05, 0.3), fc = uniform(rng, 0.05, 0.3), ph = uniform(rng, 0, 6.28);
    const double amp = uniform(rng, 0.02, 0.08), grad = uniform(rng, -0.15, 0.15);
    std::normal_distribution<double> noise(0.0, 0.02);
    for (int r = 0; r < n; ++r)
        for (int c = 0; c < n; ++c) {
            const double t = amp * std::sin(fr * r + fc * c + ph) + grad * (static_cast<double>(r) / n - 0.5);
            s.image.at(r, c, 0) = static_cast<float>(base.r + t + noise(rng));
            s.image.at(r, c, 1) = static_cast<float>(base.g + t + noise(rng));
            s.image.at(r, c, 2) = static_cast<float>(base.b + t + noise(rng));
        }
    // Saturated, well-separated hues per part with a gentle shading ramp.
    const double h0 = uniform(rng, 0, 360);
    const double step = 360.0 / static_cast<double>(s.parts.size() + 1);
    for (size_t k = 0; k < s.parts.size(); ++k) {
        const Rgb col = hsv(h0 + step * static_cast<double>(k) + uniform(rng, -10, 10), uniform(rng, 0.6, 0.95),
                            uniform(rng, 0.55, 0.95));
        const double sr = uniform(rng, -0.1, 0.1), sc = uniform(rng, -0.1, 0.1);
        for (int r = 0; r < n; ++r)
            for (int c = 0; c < n; ++c) {
                if (!s.parts[k].at(r, c)) continue;
                const double shade = sr * (static_cast<double>(r) / n - 0.5) + sc * (static_cast<double>(c) / n - 0.5);
                s.image.at(r, c, 0) = static_cast<float>(col.r + shade + noise(rng));
                s.image.at(r, c, 1) = static_cast<float>(col.g + shade + noise(rng));
                s.image.at(r, c, 2) = static_cast<float>(col.b + shade + noise(rng));
            }
    }
    for (auto& v : s.image.pixels) v = std::clamp(v, 0.0f, 1.0f);
}

} // namespace

Scene generate_scene(std::uint64_t seed, int index, const SyntheticConfig& cfg) {
    if (cfg.canvas < 16) throw ContractViolation("synthetic canvas must be at least 16 px");
    if (cfg.kinds.empty()) throw ContractViolation("synthetic config lists no object kinds");
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(index), 0x5eedu};
    Rng rng(seq);
    const int n = cfg.canvas;

    Scene s;
    s.id = "scene_" + std::to_string(seed) + "_" + std::to_string(index);
    s.kind = cfg.kinds[static_cast<size_t>(index) % cfg.kinds.size()];
    for (int attempt = 0;; ++attempt) {
        switch (s.kind) {
        case ObjectKind::two_part_barbell: s.parts = make_barbell(n, rng); break;
        case ObjectKind::body_with_limbs: s.parts = make_body(n, rng); break;
        case ObjectKind::concentric_shapes: s.parts = make_concentric(n, rng); break;
        }
        if (valid_parts(s.parts) && (s.kind != ObjectKind::body_with_limbs || s.parts.size() >= 3)) break;
        if (attempt > 200) throw Error("synthetic generator could not place a valid " + to_string(s.kind));
    }
    s.object = BinaryMask(n, n, MaskRole::ground_truth);
    for (const auto& p : s.parts)
        for (size_t i = 0; i < p.pixels.size(); ++i) s.object.pixels[i] |= p.pixels[i];
    for (auto& p : s.parts) p.role = MaskRole::ground_truth;
    const double total = static_cast<double>(s.object.area());
    for (const auto& p : s.parts) s.part_granularity.push_back(static_cast<double>(p.area()) / total);

    s.image = Image(s.id, n, n);
    paint(s, rng);
    return s;
}

std::vector<Scene> generate_scenes(std::uint64_t seed, int count, const SyntheticConfig& cfg) {
    if (count < 1) throw ContractViolation("generate_scenes: count must be >= 1");
    std::vector<Scene> out;
    out.reserve(count);
    for (int i = 0; i < count; ++i) out.push_back(generate_scene(seed, i, cfg));
    return out;
}

void export_folder(const std::vector<Scene>& scenes, const std::filesystem::path& dir) {
    namespace fs = std::filesystem;
    fs::create_directories(dir / "images");
    fs::create_directories(dir / "masks");
    for (const auto& s : scenes) {
        write_image_png(dir / "images" / (s.id + ".png"), s.image);
        write_mask_png(dir / "masks" / (s.id + ".png"), s.object);
        for (size_t k = 0; k < s.parts.size(); ++k)
            write_mask_png(dir / "parts" / s.id / (std::to_string(k) + ".png"), s.parts[k]);
    }
}

std::vector<Scene> load_folder(const std::filesystem::path& dir, int resize_to) {
    namespace fs = std::filesystem;
    if (!fs::is_directory(dir / "images") || !fs::is_directory(dir / "masks"))
        throw IoError("'" + dir.string() + "' must contain images/ and masks/");
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(dir / "images"))
        if (e.is_regular_file() && e.path().extension() == ".png") files.push_back(e.path());
    std::sort(files.begin(), files.end());

    std::vector<Scene> out;
    for (const auto& f : files) {
        Scene s;
        s.id = f.stem().string();
        s.image = read_image_png(f, s.id);
        const auto mask_path = dir / "masks" / (s.id + ".png");
        if (!fs::exists(mask_path)) throw IoError("missing mask for image '" + s.id + "'");
        s.object = read_mask_png(mask_path, MaskRole::ground_truth);
        if (!s.object.same_shape(BinaryMask(s.image.height, s.image.width)))
            throw IoError("mask for '" + s.id + "' does not match the image size");
        const auto part_dir = dir / "parts" / s.id;
        if (fs::is_directory(part_dir)) {
            std::vector<fs::path> parts;
            for (const auto& e : fs::directory_iterator(part_dir))
                if (e.path().extension() == ".png") parts.push_back(e.path());
            std::sort(parts.begin(), parts.end(), [](const fs::path& a, const fs::path& b) {
                const auto sa = a.stem().string(), sb = b.stem().string();
                return sa.size() != sb.size() ? sa.size() < sb.size() : sa < sb;
            });
            for (const auto& p : parts) s.parts.push_back(read_mask_png(p, MaskRole::ground_truth));
        }
        if (resize_to > 0 && (s.image.height != resize_to || s.image.width != resize_to)) {
            s.image = resize_bilinear(s.image, resize_to, resize_to);
            s.object = resize_nearest(s.object, resize_to, resize_to);
            for (auto& p : s.parts) p = resize_nearest(p, resize_to, resize_to);
        }
        const double total = static_cast<double>(s.object.area());
        for (const auto& p : s.parts) s.part_granularity.push_back(total > 0 ? static_cast<double>(p.area()) / total : 0.0);
        out.push_back(std::move(s));
    }
    return out;
}

} // namespace granseg
