#pragma once

#include "granseg/clicksim.hpp"
#include "granseg/core_types.hpp"

#include <Eigen/Dense>
#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace granseg {

using Mat = Eigen::MatrixXd;

struct SegmenterConfig {
    int patch_size = 8;
    int embed_dim = 96;
    int depth = 4;
    int num_heads = 4;
    int image_size = 128;
    int granularity_bins = 11;
    int mlp_ratio = 4;
    /// Width of the per-pixel feature used by the fine branch of the head.
    int pixel_dim = 16;
    /// Disk radius used to encode clicks for this model.
    int disk_radius = 3;

    void validate() const;
    int grid() const { return image_size / patch_size; }
    int tokens() const { return grid() * grid(); }
    int head_dim() const { return embed_dim / num_heads; }
    int patch_area() const { return patch_size * patch_size; }

    friend bool operator==(const SegmenterConfig&, const SegmenterConfig&) = default;
};

void to_json(nlohmann::json& j, const SegmenterConfig& c);
void from_json(const nlohmann::json& j, SegmenterConfig& c);

/// round(g * (bins - 1)) with halves rounded up, clamped to [0, bins - 1].
int granularity_bin(double g, int bins);

struct PromptBundle {
    DiskMap disk_map;
    /// All-zero on the first interaction.
    ProbabilityMap prev_mask;
    /// nullopt disables the granularity prompt.
    std::optional<double> granularity;
};

struct LoraAdapter {
    Mat a; // r x d, Gaussian init
    Mat b; // d x r, zero init
};

/// Linear layers store weights as (out x in): y = W x + b.
struct BlockParams {
    Mat ln1_g, ln1_b;
    Mat wq, bq, wk, bk, wv, bv, wo, bo;
    std::optional<LoraAdapter> lora_q, lora_k;
    Mat ln2_g, ln2_b;
    Mat fc1_w, fc1_b, fc2_w, fc2_b;
};

struct SegmenterParams {
    Mat img_patch_w, img_patch_b;
    Mat prompt_patch_w, prompt_patch_b;
    Mat pos_embed;  // tokens x d
    Mat gran_embed; // bins x d
    std::vector<BlockParams> blocks;
    Mat neck_ln_g, neck_ln_b;
    Mat head_w, head_b; // patch_area x 2d
    Mat dyn_w, dyn_b;   // pixel_dim x 2d
    Mat pixel_w, pixel_b; // pixel_dim x 6

    /// Visits every tensor with its stable dotted name, in a fixed order.
    template <class F>
    void for_each(F&& f);
    template <class F>
    void for_each(F&& f) const;

    /// Same structure, every tensor zero.
    SegmenterParams zeros_like() const;
    size_t parameter_count() const;
};

/// Parameters plus the set of tensor names an optimizer may update.
struct SegmenterState {
    SegmenterConfig config;
    SegmenterParams params;
    std::set<std::string> trainable;
    int lora_rank = 0;

    bool adapted() const { return lora_rank > 0; }
    bool is_trainable(const std::string& name) const { return trainable.count(name) != 0; }
};

SegmenterState init_segmenter(const SegmenterConfig& cfg, std::uint64_t seed);

/// Intermediate activations kept for the backward pass.
struct ForwardTrace {
    struct LayerNormCache {
        Mat xhat;
        Eigen::VectorXd inv_std;
    };
    struct Block {
        Mat x_in, h1, q, k, v, qa, ka, attn, x2, h2, m1, a1;
        std::vector<Mat> probs;
        LayerNormCache ln1, ln2;
    };
    Mat img_patches, prompt_patches, pixel_feats;
    int bin = -1;
    std::vector<Block> blocks;
    LayerNormCache neck_ln;
    Mat cat, head_logits, dyn, phi;
    std::vector<double> prob;
};

ProbabilityMap forward(const SegmenterState& state, const Image& image, const PromptBundle& prompts);
ProbabilityMap forward(const SegmenterState& state, const Image& image, const PromptBundle& prompts,
                       ForwardTrace& trace);

/// Accumulates parameter gradients given dLoss/dProbability for every pixel.
/// Gradients are only produced for tensors in state.trainable.
void backward(const SegmenterState& state, const ForwardTrace& trace, const std::vector<double>& dprob,
              SegmenterParams& grads);

BinaryMask binarize(const ProbabilityMap& p, double threshold);

void save_params(const SegmenterState& state, const std::filesystem::path& path);
/// Throws IoError for missing/corrupt files and ConfigMismatch when `expected`
/// is given and differs from the stored configuration.
SegmenterState load_params(const std::filesystem::path& path, const SegmenterConfig* expected = nullptr);

PromptBundle make_prompts(const ClickSet& clicks, const ProbabilityMap& prev, std::optional<double> granularity,
                          int height, int width, int disk_radius);

/// Anything that maps (image, clicks, previous mask, granularity) to a probability map.
class Predictor {
  public:
    virtual ~Predictor() = default;
    virtual ProbabilityMap predict(const Image& image, const ClickSet& clicks, const ProbabilityMap& prev,
                                   std::optional<double> granularity) const = 0;
};

/// Inference wrapper over frozen parameters; safe for concurrent readers.
class Segmenter : public Predictor {
  public:
    explicit Segmenter(SegmenterState state) : state_(std::move(state)) {}

    ProbabilityMap predict(const Image& image, const ClickSet& clicks, const ProbabilityMap& prev,
                           std::optional<double> granularity) const override;

    const SegmenterState& state() const { return state_; }
    const SegmenterConfig& config() const { return state_.config; }

  private:
    SegmenterState state_;
};

// ---------------------------------------------------------------------------

template <class F>
void SegmenterParams::for_each(F&& f) {
    f("img_patch.w", img_patch_w);
    f("img_patch.b", img_patch_b);
    f("prompt_patch.w", prompt_patch_w);
    f("prompt_patch.b", prompt_patch_b);
    f("pos_embed", pos_embed);
    f("gran_embed", gran_embed);
    for (size_t l = 0; l < blocks.size(); ++l) {
        auto& b = blocks[l];
        const std::string p = "blocks." + std::to_string(l) + ".";
        f(p + "ln1.g", b.ln1_g);
        f(p + "ln1.b", b.ln1_b);
        f(p + "attn.q.w", b.wq);
        f(p + "attn.q.b", b.bq);
        if (b.lora_q) {
            f(p + "attn.q.lora_a", b.lora_q->a);
            f(p + "attn.q.lora_b", b.lora_q->b);
        }
        f(p + "attn.k.w", b.wk);
        f(p + "attn.k.b", b.bk);
        if (b.lora_k) {
            f(p + "attn.k.lora_a", b.lora_k->a);
            f(p + "attn.k.lora_b", b.lora_k->b);
        }
        f(p + "attn.v.w", b.wv);
        f(p + "attn.v.b", b.bv);
        f(p + "attn.o.w", b.wo);
        f(p + "attn.o.b", b.bo);
        f(p + "ln2.g", b.ln2_g);
        f(p + "ln2.b", b.ln2_b);
        f(p + "mlp.fc1.w", b.fc1_w);
        f(p + "mlp.fc1.b", b.fc1_b);
        f(p + "mlp.fc2.w", b.fc2_w);
        f(p + "mlp.fc2.b", b.fc2_b);
    }
    f("neck.ln.g", neck_ln_g);
    f("neck.ln.b", neck_ln_b);
    f("head.w", head_w);
    f("head.b", head_b);
    f("head.dyn.w", dyn_w);
    f("head.dyn.b", dyn_b);
    f("head.pixel.w", pixel_w);
    f("head.pixel.b", pixel_b);
}

template <class F>
void SegmenterParams::for_each(F&& f) const {
    const_cast<SegmenterParams*>(this)->for_each(
        [&](const std::string& name, Mat& m) { f(name, static_cast<const Mat&>(m)); });
}

} // namespace granseg
