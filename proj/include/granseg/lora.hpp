#pragma once

#include "granseg/segmenter.hpp"

#include <cstdint>
#include <filesystem>

namespace granseg {

/// A frozen d x d projection W plus a trainable low-rank update B A.
struct LoraLayer {
    Mat w; // d x d, frozen
    Mat a; // r x d
    Mat b; // d x r

    int rank() const { return static_cast<int>(a.rows()); }
    int dim() const { return static_cast<int>(w.rows()); }

    /// A ~ N(0, init_std^2), B = 0. Requires rank < d.
    static LoraLayer wrap(Mat w, int rank, double init_std, std::uint64_t seed);
};

/// W x + B (A x)
Eigen::VectorXd lora_forward(const LoraLayer& layer, const Eigen::VectorXd& x);

struct LoraConfig {
    int rank = 8;
    /// Standard deviation of the Gaussian init of A; <= 0 means 1 / rank.
    double init_std = 0.0;
    /// Also fine-tune the prompt patch embedding.
    bool train_prompt_patch = false;
    std::uint64_t seed = 0;
};

/// Wraps the Q and K projections of every attention block. Afterwards only the
/// adapters and the granularity embedding table are trainable.
SegmenterState inject_lora(SegmenterState model, const LoraConfig& cfg);

/// Number of weights held by the adapters alone (all A and B matrices).
size_t adapter_parameter_count(const SegmenterState& state);

/// Writes only the adapter matrices and the tensors trained alongside them.
void save_adapter(const SegmenterState& state, const std::filesystem::path& path);
/// Loads an adapter checkpoint on top of an un-adapted base model.
SegmenterState load_adapter(const SegmenterState& base, const std::filesystem::path& path);

} // namespace granseg
