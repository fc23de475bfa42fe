#include "granseg/segmenter.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <random>

namespace granseg {

using Eigen::VectorXd;
using json = nlohmann::json;

void SegmenterConfig::validate() const {
    if (patch_size < 1 || embed_dim < 1 || depth < 1 || num_heads < 1 || image_size < 1)
        throw ContractViolation("segmenter config: sizes must be positive");
    if (image_size % patch_size != 0) throw ContractViolation("segmenter config: image_size % patch_size != 0");
    if (embed_dim % num_heads != 0) throw ContractViolation("segmenter config: embed_dim % num_heads != 0");
    if (granularity_bins < 2) throw ContractViolation("segmenter config: need at least two granularity bins");
    if (mlp_ratio < 1 || pixel_dim < 1 || disk_radius < 1) throw ContractViolation("segmenter config: bad head sizes");
}

void to_json(json& j, const SegmenterConfig& c) {
    j = json{{"patch_size", c.patch_size}, {"embed_dim", c.embed_dim},       {"depth", c.depth},
             {"num_heads", c.num_heads},   {"image_size", c.image_size},     {"granularity_bins", c.granularity_bins},
             {"mlp_ratio", c.mlp_ratio},   {"pixel_dim", c.pixel_dim},       {"disk_radius", c.disk_radius}};
}

void from_json(const json& j, SegmenterConfig& c) {
    SegmenterConfig d;
    c.patch_size = j.value("patch_size", d.patch_size);
    c.embed_dim = j.value("embed_dim", d.embed_dim);
    c.depth = j.value("depth", d.depth);
    c.num_heads = j.value("num_heads", d.num_heads);
    c.image_size = j.value("image_size", d.image_size);
    c.granularity_bins = j.value("granularity_bins", d.granularity_bins);
    c.mlp_ratio = j.value("mlp_ratio", d.mlp_ratio);
    c.pixel_dim = j.value("pixel_dim", d.pixel_dim);
    c.disk_radius = j.value("disk_radius", d.disk_radius);
}

int granularity_bin(double g, int bins) {
    const int b = static_cast<int>(std::floor(g * (bins - 1) + 0.5));
    return std::clamp(b, 0, bins - 1);
}

SegmenterParams SegmenterParams::zeros_like() const {
    SegmenterParams z = *this;
    z.for_each([](const std::string&, Mat& m) { m.setZero(); });
    return z;
}

size_t SegmenterParams::parameter_count() const {
    size_t n = 0;
    for_each([&](const std::string&, const Mat& m) { n += static_cast<size_t>(m.size()); });
    return n;
}

// ---------------------------------------------------------------------------
// Initialization
// ---------------------------------------------------------------------------

namespace {

Mat gaussian(int rows, int cols, double stddev, std::mt19937_64& rng) {
    std::normal_distribution<double> dist(0.0, stddev);
    Mat m(rows, cols);
    for (Eigen::Index j = 0; j < m.cols(); ++j)
        for (Eigen::Index i = 0; i < m.rows(); ++i) m(i, j) = dist(rng);
    return m;
}

} // namespace

SegmenterState init_segmenter(const SegmenterConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    std::mt19937_64 rng(seed);
    const int d = cfg.embed_dim, pin = 3 * cfg.patch_area(), hidden = cfg.mlp_ratio * d;
    const double residual_scale = 1.0 / std::sqrt(2.0 * cfg.depth);

    SegmenterState s;
    s.config = cfg;
    auto& p = s.params;
    p.img_patch_w = gaussian(d, pin, 1.0 / std::sqrt(pin), rng);
    p.img_patch_b = Mat::Zero(1, d);
    p.prompt_patch_w = gaussian(d, pin, 1.0 / std::sqrt(pin), rng);
    p.prompt_patch_b = Mat::Zero(1, d);
    p.pos_embed = gaussian(cfg.tokens(), d, 0.02, rng);
    // Zero rows: an untrained granularity prompt leaves the output unchanged.
    p.gran_embed = Mat::Zero(cfg.granularity_bins, d);
    for (int l = 0; l < cfg.depth; ++l) {
        BlockParams b;
        b.ln1_g = Mat::Ones(1, d);
        b.ln1_b = Mat::Zero(1, d);
        b.wq = gaussian(d, d, 1.0 / std::sqrt(d), rng);
        b.bq = Mat::Zero(1, d);
        b.wk = gaussian(d, d, 1.0 / std::sqrt(d), rng);
        b.bk = Mat::Zero(1, d);
        b.wv = gaussian(d, d, 1.0 / std::sqrt(d), rng);
        b.bv = Mat::Zero(1, d);
        b.wo = gaussian(d, d, residual_scale / std::sqrt(d), rng);
        b.bo = Mat::Zero(1, d);
        b.ln2_g = Mat::Ones(1, d);
        b.ln2_b = Mat::Zero(1, d);
        b.fc1_w = gaussian(hidden, d, 1.0 / std::sqrt(d), rng);
        b.fc1_b = Mat::Zero(1, hidden);
        b.fc2_w = gaussian(d, hidden, residual_scale / std::sqrt(hidden), rng);
        b.fc2_b = Mat::Zero(1, d);
        p.blocks.push_back(std::move(b));
    }
    p.neck_ln_g = Mat::Ones(1, d);
    p.neck_ln_b = Mat::Zero(1, d);
    p.head_w = gaussian(cfg.patch_area(), 2 * d, 0.5 / std::sqrt(2.0 * d), rng);
    // Start near the foreground base rate so early training is not dominated by background.
    p.head_b = Mat::Constant(1, cfg.patch_area(), -2.0);
    p.dyn_w = gaussian(cfg.pixel_dim, 2 * d, 0.5 / std::sqrt(2.0 * d), rng);
    p.dyn_b = Mat::Zero(1, cfg.pixel_dim);
    p.pixel_w = gaussian(cfg.pixel_dim, 6, 1.0 / std::sqrt(6.0), rng);
    p.pixel_b = Mat::Zero(1, cfg.pixel_dim);

    p.for_each([&](const std::string& name, const Mat&) { s.trainable.insert(name); });
    return s;
}

// ---------------------------------------------------------------------------
// Forward
// ---------------------------------------------------------------------------

namespace {

constexpr double kLayerNormEps = 1e-5;
constexpr double kGeluC = 0.7978845608028654; // sqrt(2 / pi)
constexpr double kGeluA = 0.044715;

Mat layer_norm(const Mat& x, const Mat& g, const Mat& b, ForwardTrace::LayerNormCache& cache) {
    const Eigen::Index n = x.rows(), d = x.cols();
    cache.xhat.resize(n, d);
    cache.inv_std.resize(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const double mean = x.row(i).mean();
        const double var = (x.row(i).array() - mean).square().mean();
        const double inv = 1.0 / std::sqrt(var + kLayerNormEps);
        cache.inv_std(i) = inv;
        cache.xhat.row(i) = (x.row(i).array() - mean) * inv;
    }
    Mat y = cache.xhat.array().rowwise() * g.row(0).array();
    y.rowwise() += b.row(0);
    return y;
}

Mat layer_norm_backward(const Mat& dy, const ForwardTrace::LayerNormCache& cache, const Mat& g, Mat* dg, Mat* db) {
    if (dg) *dg += (dy.array() * cache.xhat.array()).colwise().sum().matrix();
    if (db) *db += dy.colwise().sum();
    const Mat dxhat = dy.array().rowwise() * g.row(0).array();
    const double d = static_cast<double>(dy.cols());
    Mat dx(dy.rows(), dy.cols());
    for (Eigen::Index i = 0; i < dy.rows(); ++i) {
        const double mean_dxhat = dxhat.row(i).sum() / d;
        const double mean_dxhat_xhat = dxhat.row(i).dot(cache.xhat.row(i)) / d;
        dx.row(i) = cache.inv_std(i) *
                    (dxhat.row(i).array() - mean_dxhat - cache.xhat.row(i).array() * mean_dxhat_xhat).matrix();
    }
    return dx;
}

inline double gelu(double x) { return 0.5 * x * (1.0 + std::tanh(kGeluC * (x + kGeluA * x * x * x))); }

inline double gelu_grad(double x) {
    const double t = std::tanh(kGeluC * (x + kGeluA * x * x * x));
    return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * kGeluC * (1.0 + 3.0 * kGeluA * x * x);
}

/// y = x W^T + b
Mat linear(const Mat& x, const Mat& w, const Mat& b) {
    Mat y = x * w.transpose();
    y.rowwise() += b.row(0);
    return y;
}

struct Layout {
    int size, patch, grid, tokens, area;
    explicit Layout(const SegmenterConfig& c)
        : size(c.image_size), patch(c.patch_size), grid(c.grid()), tokens(c.tokens()), area(c.patch_area()) {}
    int token_of(int r, int c) const { return (r / patch) * grid + c / patch; }
    int offset_of(int r, int c) const { return (r % patch) * patch + c % patch; }
};

/// 2x2 average pooling over the token grid, broadcast back to every member token.
Mat pool_broadcast(const Mat& z, int grid) {
    Mat out(z.rows(), z.cols());
    for (int gr = 0; gr < grid; gr += 2)
        for (int gc = 0; gc < grid; gc += 2) {
            Eigen::RowVectorXd acc = Eigen::RowVectorXd::Zero(z.cols());
            int cnt = 0;
            for (int dr = 0; dr < 2 && gr + dr < grid; ++dr)
                for (int dc = 0; dc < 2 && gc + dc < grid; ++dc) {
                    acc += z.row((gr + dr) * grid + gc + dc);
                    ++cnt;
                }
            acc /= cnt;
            for (int dr = 0; dr < 2 && gr + dr < grid; ++dr)
                for (int dc = 0; dc < 2 && gc + dc < grid; ++dc) out.row((gr + dr) * grid + gc + dc) = acc;
        }
    return out;
}

// The broadcast-average is symmetric, so its adjoint is the same operator.
Mat pool_broadcast_backward(const Mat& dout, int grid) { return pool_broadcast(dout, grid); }

void check_inputs(const SegmenterConfig& cfg, const Image& image, const PromptBundle& prompts) {
    const int s = cfg.image_size;
    if (image.height != s || image.width != s)
        throw ContractViolation("segmenter expects " + std::to_string(s) + "x" + std::to_string(s) + " images, got " +
                                std::to_string(image.height) + "x" + std::to_string(image.width));
    if (image.pixels.size() != static_cast<size_t>(s) * s * 3) throw ContractViolation("image buffer size mismatch");
    if (prompts.disk_map.height != s || prompts.disk_map.width != s)
        throw ContractViolation("disk map shape does not match the image");
    if (prompts.prev_mask.height != s || prompts.prev_mask.width != s ||
        prompts.prev_mask.values.size() != static_cast<size_t>(s) * s)
        throw ContractViolation("previous mask shape does not match the image");
    if (prompts.granularity && !(*prompts.granularity >= 0.0 && *prompts.granularity <= 1.0))
        throw ContractViolation("granularity must lie in [0,1]");
}

} // namespace

ProbabilityMap forward(const SegmenterState& state, const Image& image, const PromptBundle& prompts) {
    ForwardTrace trace;
    return forward(state, image, prompts, trace);
}

ProbabilityMap forward(const SegmenterState& state, const Image& image, const PromptBundle& prompts,
                       ForwardTrace& t) {
    const auto& cfg = state.config;
    const auto& p = state.params;
    check_inputs(cfg, image, prompts);
    const Layout L(cfg);
    const int d = cfg.embed_dim, heads = cfg.num_heads, dh = cfg.head_dim();
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    const size_t hw = static_cast<size_t>(L.size) * L.size;

    // Patch and pixel features.
    t.img_patches.resize(L.tokens, 3 * L.area);
    t.prompt_patches.resize(L.tokens, 3 * L.area);
    t.pixel_feats.resize(static_cast<Eigen::Index>(hw), 6);
    for (int r = 0; r < L.size; ++r)
        for (int c = 0; c < L.size; ++c) {
            const int n = L.token_of(r, c), o = L.offset_of(r, c);
            const Eigen::Index pix = static_cast<Eigen::Index>(r) * L.size + c;
            const double pos = prompts.disk_map.at(0, r, c), neg = prompts.disk_map.at(1, r, c);
            const double prev = prompts.prev_mask.at(r, c);
            for (int ch = 0; ch < 3; ++ch) {
                t.img_patches(n, ch * L.area + o) = image.at(r, c, ch);
                t.pixel_feats(pix, ch) = image.at(r, c, ch);
            }
            t.prompt_patches(n, o) = pos;
            t.prompt_patches(n, L.area + o) = neg;
            t.prompt_patches(n, 2 * L.area + o) = prev;
            t.pixel_feats(pix, 3) = pos;
            t.pixel_feats(pix, 4) = neg;
            t.pixel_feats(pix, 5) = prev;
        }

    Mat x = linear(t.img_patches, p.img_patch_w, p.img_patch_b) + linear(t.prompt_patches, p.prompt_patch_w, p.prompt_patch_b) +
            p.pos_embed;
    t.bin = -1;
    if (prompts.granularity) {
        t.bin = granularity_bin(*prompts.granularity, cfg.granularity_bins);
        x.rowwise() += p.gran_embed.row(t.bin);
    }

    t.blocks.resize(p.blocks.size());
    for (size_t l = 0; l < p.blocks.size(); ++l) {
        const auto& b = p.blocks[l];
        auto& bt = t.blocks[l];
        bt.x_in = x;
        bt.h1 = layer_norm(x, b.ln1_g, b.ln1_b, bt.ln1);
        bt.q = linear(bt.h1, b.wq, b.bq);
        bt.k = linear(bt.h1, b.wk, b.bk);
        bt.v = linear(bt.h1, b.wv, b.bv);
        if (b.lora_q) {
            bt.qa = bt.h1 * b.lora_q->a.transpose();
            bt.q.noalias() += bt.qa * b.lora_q->b.transpose();
        }
        if (b.lora_k) {
            bt.ka = bt.h1 * b.lora_k->a.transpose();
            bt.k.noalias() += bt.ka * b.lora_k->b.transpose();
        }
        bt.attn.resize(L.tokens, d);
        bt.probs.resize(heads);
        for (int h = 0; h < heads; ++h) {
            Mat s = (bt.q.middleCols(h * dh, dh) * bt.k.middleCols(h * dh, dh).transpose()) * scale;
            for (Eigen::Index i = 0; i < s.rows(); ++i) {
                const double mx = s.row(i).maxCoeff();
                s.row(i) = (s.row(i).array() - mx).exp().matrix();
                s.row(i) /= s.row(i).sum();
            }
            bt.attn.middleCols(h * dh, dh) = s * bt.v.middleCols(h * dh, dh);
            bt.probs[h] = std::move(s);
        }
        bt.x2 = x + linear(bt.attn, b.wo, b.bo);
        bt.h2 = layer_norm(bt.x2, b.ln2_g, b.ln2_b, bt.ln2);
        bt.m1 = linear(bt.h2, b.fc1_w, b.fc1_b);
        bt.a1 = bt.m1.unaryExpr([](double v) { return gelu(v); });
        x = bt.x2 + linear(bt.a1, b.fc2_w, b.fc2_b);
    }

    // Neck: native-scale tokens alongside a 2x2-pooled coarse scale.
    const Mat z = layer_norm(x, p.neck_ln_g, p.neck_ln_b, t.neck_ln);
    t.cat.resize(L.tokens, 2 * d);
    t.cat.leftCols(d) = z;
    t.cat.rightCols(d) = pool_broadcast(z, L.grid);

    t.head_logits = linear(t.cat, p.head_w, p.head_b);
    t.dyn = linear(t.cat, p.dyn_w, p.dyn_b);
    t.phi = linear(t.pixel_feats, p.pixel_w, p.pixel_b);

    ProbabilityMap out(L.size, L.size);
    t.prob.resize(hw);
    for (int r = 0; r < L.size; ++r)
        for (int c = 0; c < L.size; ++c) {
            const int n = L.token_of(r, c), o = L.offset_of(r, c);
            const Eigen::Index pix = static_cast<Eigen::Index>(r) * L.size + c;
            const double logit = t.head_logits(n, o) + t.dyn.row(n).dot(t.phi.row(pix));
            const double prob = 1.0 / (1.0 + std::exp(-logit));
            t.prob[pix] = prob;
            out.values[pix] = prob;
        }
    return out;
}

// ---------------------------------------------------------------------------
// Backward
// ---------------------------------------------------------------------------

void backward(const SegmenterState& state, const ForwardTrace& t, const std::vector<double>& dprob,
              SegmenterParams& g) {
    const auto& cfg = state.config;
    const auto& p = state.params;
    const Layout L(cfg);
    const int d = cfg.embed_dim, heads = cfg.num_heads, dh = cfg.head_dim();
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    if (dprob.size() != t.prob.size()) throw ContractViolation("backward: gradient size does not match the trace");
    auto want = [&](const std::string& name) { return state.is_trainable(name); };

    Mat d_head = Mat::Zero(L.tokens, L.area);
    Mat d_dyn = Mat::Zero(L.tokens, cfg.pixel_dim);
    Mat d_phi(static_cast<Eigen::Index>(dprob.size()), cfg.pixel_dim);
    for (int r = 0; r < L.size; ++r)
        for (int c = 0; c < L.size; ++c) {
            const int n = L.token_of(r, c), o = L.offset_of(r, c);
            const Eigen::Index pix = static_cast<Eigen::Index>(r) * L.size + c;
            const double pr = t.prob[pix];
            const double dl = dprob[pix] * pr * (1.0 - pr);
            d_head(n, o) = dl;
            d_dyn.row(n) += dl * t.phi.row(pix);
            d_phi.row(pix) = dl * t.dyn.row(n);
        }
    if (want("head.pixel.w")) g.pixel_w += d_phi.transpose() * t.pixel_feats;
    if (want("head.pixel.b")) g.pixel_b += d_phi.colwise().sum();
    if (want("head.w")) g.head_w += d_head.transpose() * t.cat;
    if (want("head.b")) g.head_b += d_head.colwise().sum();
    if (want("head.dyn.w")) g.dyn_w += d_dyn.transpose() * t.cat;
    if (want("head.dyn.b")) g.dyn_b += d_dyn.colwise().sum();

    const Mat d_cat = d_head * p.head_w + d_dyn * p.dyn_w;
    const Mat dz = d_cat.leftCols(d) + pool_broadcast_backward(d_cat.rightCols(d), L.grid);
    Mat dx = layer_norm_backward(dz, t.neck_ln, p.neck_ln_g, want("neck.ln.g") ? &g.neck_ln_g : nullptr,
                                 want("neck.ln.b") ? &g.neck_ln_b : nullptr);

    for (size_t li = p.blocks.size(); li-- > 0;) {
        const auto& b = p.blocks[li];
        auto& gb = g.blocks[li];
        const auto& bt = t.blocks[li];
        const std::string pre = "blocks." + std::to_string(li) + ".";

        // MLP branch.
        if (want(pre + "mlp.fc2.w")) gb.fc2_w += dx.transpose() * bt.a1;
        if (want(pre + "mlp.fc2.b")) gb.fc2_b += dx.colwise().sum();
        Mat dm1 = dx * b.fc2_w;
        dm1.array() *= bt.m1.unaryExpr([](double v) { return gelu_grad(v); }).array();
        if (want(pre + "mlp.fc1.w")) gb.fc1_w += dm1.transpose() * bt.h2;
        if (want(pre + "mlp.fc1.b")) gb.fc1_b += dm1.colwise().sum();
        const Mat dh2 = dm1 * b.fc1_w;
        Mat dx2 = dx + layer_norm_backward(dh2, bt.ln2, b.ln2_g, want(pre + "ln2.g") ? &gb.ln2_g : nullptr,
                                           want(pre + "ln2.b") ? &gb.ln2_b : nullptr);

        // Attention branch.
        if (want(pre + "attn.o.w")) gb.wo += dx2.transpose() * bt.attn;
        if (want(pre + "attn.o.b")) gb.bo += dx2.colwise().sum();
        const Mat d_attn = dx2 * b.wo;
        Mat dq(L.tokens, d), dk(L.tokens, d), dv(L.tokens, d);
        for (int h = 0; h < heads; ++h) {
            const Mat& P = bt.probs[h];
            const auto d_out = d_attn.middleCols(h * dh, dh);
            dv.middleCols(h * dh, dh) = P.transpose() * d_out;
            Mat dp = d_out * bt.v.middleCols(h * dh, dh).transpose();
            const VectorXd row_dot = (dp.array() * P.array()).rowwise().sum();
            Mat ds = P.array() * (dp.colwise() - row_dot).array();
            dq.middleCols(h * dh, dh) = (ds * bt.k.middleCols(h * dh, dh)) * scale;
            dk.middleCols(h * dh, dh) = (ds.transpose() * bt.q.middleCols(h * dh, dh)) * scale;
        }
        Mat dh1 = dq * b.wq + dk * b.wk + dv * b.wv;
        if (want(pre + "attn.q.w")) gb.wq += dq.transpose() * bt.h1;
        if (want(pre + "attn.q.b")) gb.bq += dq.colwise().sum();
        if (want(pre + "attn.k.w")) gb.wk += dk.transpose() * bt.h1;
        if (want(pre + "attn.k.b")) gb.bk += dk.colwise().sum();
        if (want(pre + "attn.v.w")) gb.wv += dv.transpose() * bt.h1;
        if (want(pre + "attn.v.b")) gb.bv += dv.colwise().sum();
        auto lora_backward = [&](const std::optional<LoraAdapter>& ad, std::optional<LoraAdapter>& gad,
                                 const Mat& dout, const Mat& proj, const std::string& name) {
            if (!ad) return;
            const Mat dproj = dout * ad->b; // tokens x r
            if (want(name + ".lora_b")) gad->b += dout.transpose() * proj;
            if (want(name + ".lora_a")) gad->a += dproj.transpose() * bt.h1;
            dh1 += dproj * ad->a;
        };
        lora_backward(b.lora_q, gb.lora_q, dq, bt.qa, pre + "attn.q");
        lora_backward(b.lora_k, gb.lora_k, dk, bt.ka, pre + "attn.k");
        dx = dx2 + layer_norm_backward(dh1, bt.ln1, b.ln1_g, want(pre + "ln1.g") ? &gb.ln1_g : nullptr,
                                       want(pre + "ln1.b") ? &gb.ln1_b : nullptr);
    }

    if (want("pos_embed")) g.pos_embed += dx;
    if (t.bin >= 0 && want("gran_embed")) g.gran_embed.row(t.bin) += dx.colwise().sum();
    if (want("img_patch.w")) g.img_patch_w += dx.transpose() * t.img_patches;
    if (want("img_patch.b")) g.img_patch_b += dx.colwise().sum();
    if (want("prompt_patch.w")) g.prompt_patch_w += dx.transpose() * t.prompt_patches;
    if (want("prompt_patch.b")) g.prompt_patch_b += dx.colwise().sum();
}

BinaryMask binarize(const ProbabilityMap& p, double threshold) {
    if (!(threshold > 0.0 && threshold < 1.0)) throw ContractViolation("binarize: threshold must lie in (0,1)");
    BinaryMask m(p.height, p.width, MaskRole::prediction);
    for (size_t i = 0; i < p.values.size(); ++i) m.pixels[i] = p.values[i] >= threshold ? 1 : 0;
    return m;
}

PromptBundle make_prompts(const ClickSet& clicks, const ProbabilityMap& prev, std::optional<double> granularity,
                          int height, int width, int disk_radius) {
    ClickSimConfig cc;
    cc.disk_radius = disk_radius;
    PromptBundle b;
    b.disk_map = encode_disk_map(clicks, height, width, cc);
    b.prev_mask = prev.values.empty() ? ProbabilityMap(height, width) : prev;
    b.granularity = granularity;
    return b;
}

ProbabilityMap Segmenter::predict(const Image& image, const ClickSet& clicks, const ProbabilityMap& prev,
                                  std::optional<double> granularity) const {
    const int s = state_.config.image_size;
    return forward(state_, image, make_prompts(clicks, prev, granularity, s, s, state_.config.disk_radius));
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

namespace {

constexpr char kMagic[8] = {'G', 'S', 'E', 'G', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

} // namespace

void save_params(const SegmenterState& state, const std::filesystem::path& path) {
    json header;
    header["kind"] = "full";
    header["config"] = state.config;
    header["lora_rank"] = state.lora_rank;
    header["trainable"] = state.trainable;
    json tensors = json::array();
    state.params.for_each([&](const std::string& name, const Mat& m) {
        tensors.push_back({{"name", name}, {"rows", m.rows()}, {"cols", m.cols()}});
    });
    header["tensors"] = tensors;
    const std::string text = header.dump();

    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write checkpoint '" + path.string() + "'");
    out.write(kMagic, sizeof kMagic);
    out.write(reinterpret_cast<const char*>(&kVersion), sizeof kVersion);
    const std::uint64_t len = text.size();
    out.write(reinterpret_cast<const char*>(&len), sizeof len);
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    state.params.for_each([&](const std::string&, const Mat& m) {
        out.write(reinterpret_cast<const char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(double)));
    });
    if (!out) throw IoError("short write to checkpoint '" + path.string() + "'");
}

SegmenterState load_params(const std::filesystem::path& path, const SegmenterConfig* expected) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint '" + path.string() + "'");
    char magic[8];
    std::uint32_t version = 0;
    std::uint64_t len = 0;
    in.read(magic, sizeof magic);
    in.read(reinterpret_cast<char*>(&version), sizeof version);
    in.read(reinterpret_cast<char*>(&len), sizeof len);
    if (!in || std::memcmp(magic, kMagic, sizeof kMagic) != 0)
        throw IoError("'" + path.string() + "' is not a segmenter checkpoint");
    if (version != kVersion) throw IoError("unsupported checkpoint version " + std::to_string(version));
    if (len > (1u << 26)) throw IoError("corrupt checkpoint header in '" + path.string() + "'");
    std::string text(len, '\0');
    in.read(text.data(), static_cast<std::streamsize>(len));
    json header;
    try {
        header = json::parse(text);
    } catch (const json::exception& e) {
        throw IoError("corrupt checkpoint header in '" + path.string() + "': " + e.what());
    }
    if (header.value("kind", "") != "full")
        throw IoError("'" + path.string() + "' is an adapter checkpoint; load it on top of a base model");

    const SegmenterConfig cfg = header.at("config").get<SegmenterConfig>();
    if (expected && !(cfg == *expected))
        throw ConfigMismatch("checkpoint '" + path.string() + "' was written for config " + json(cfg).dump() +
                             ", expected " + json(*expected).dump());

    SegmenterState state = init_segmenter(cfg, 0);
    state.lora_rank = header.value("lora_rank", 0);
    if (state.lora_rank > 0)
        for (auto& b : state.params.blocks) {
            b.lora_q = LoraAdapter{Mat::Zero(state.lora_rank, cfg.embed_dim), Mat::Zero(cfg.embed_dim, state.lora_rank)};
            b.lora_k = b.lora_q;
        }
    state.trainable = header.at("trainable").get<std::set<std::string>>();

    const auto& tensors = header.at("tensors");
    size_t index = 0;
    state.params.for_each([&](const std::string& name, Mat& m) {
        if (index >= tensors.size() || tensors[index].at("name") != name)
            throw IoError("checkpoint tensor list does not match the model layout at '" + name + "'");
        if (tensors[index].at("rows") != m.rows() || tensors[index].at("cols") != m.cols())
            throw IoError("checkpoint tensor '" + name + "' has the wrong shape");
        in.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(double)));
        ++index;
    });
    if (index != tensors.size()) throw IoError("checkpoint holds extra tensors");
    if (!in) throw IoError("truncated checkpoint '" + path.string() + "'");
    return state;
}

} // namespace granseg
