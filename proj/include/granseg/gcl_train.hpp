#pragma once

#include "granseg/core_types.hpp"
#include "granseg/dataset.hpp"
#include "granseg/proposal_store.hpp"
#include "granseg/segmenter.hpp"

#include <cstdint>
#include <functional>
#include <optional>
#include <ostream>
#include <random>
#include <vector>

namespace granseg {

struct TrainConfig {
    int epochs = 12;
    double lr = 1e-3;
    int lr_decay_epoch = 10;
    double lr_decay_factor = 0.1;
    int max_iter_clicks = 3;
    double focal_gamma = 2.0;
    int batch_size = 8;
    std::uint64_t seed = 0;

    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    /// Random flips/transposes of each example.
    bool augment = true;
    /// 0 means (dataset size / batch_size), at least one.
    int steps_per_epoch = 0;
    SamplingMode sampling = SamplingMode::inverse;
    /// Probability that an example is a whole stored object prompted at granularity 1.0
    /// instead of a sampled proposal. Needs object masks in the store.
    double object_replay = 0.35;

    void validate() const;

    /// 55 epochs of Adam at 5e-5, divided by ten from epoch 50 on, up to 3 iterative clicks.
    static TrainConfig full_scale();
};

/// Learning rate for a 0-based epoch index under the step schedule.
double lr_at(const TrainConfig& cfg, int epoch);

/// Clamp applied to predictions before the loss.
inline constexpr double kNflClamp = 1e-6;
inline constexpr double kNflEps = 1e-12;

/// Normalized focal loss: -sum(w_i log p_t,i) / max(sum(w_i), eps) with w_i = (1 - p_t,i)^gamma.
double nfl_loss(const ProbabilityMap& pred, const BinaryMask& target, double gamma);

/// Loss plus dLoss/dpred for every pixel. The normalizer is differentiated too.
double nfl_loss_grad(const ProbabilityMap& pred, const BinaryMask& target, double gamma, std::vector<double>& dpred);

/// Adam over the trainable tensors of a SegmenterState.
class Adam {
  public:
    Adam(const SegmenterState& state, double beta1, double beta2, double eps);

    /// Applies one update with the given learning rate; non-trainable tensors are untouched.
    void step(SegmenterState& state, const SegmenterParams& grads, double lr);
    long steps() const { return t_; }

  private:
    double beta1_, beta2_, eps_;
    long t_ = 0;
    SegmenterParams m_, v_;
};

/// Applies one of the eight flips/transposes of the square (t in [0,8)).
Image dihedral(const Image& img, int t);
BinaryMask dihedral(const BinaryMask& m, int t);

struct StepInfo {
    double loss = 0.0;
    /// Number of clicks drawn for this example.
    int k = 0;
    ClickSet clicks;
};

/// One iterative-sampling example: k ~ U{1..max_iter_clicks}; the first k-1 forwards
/// only derive clicks and the mask prompt, the last one is differentiated.
/// Gradients are added into `grads` when it is non-null.
StepInfo iterative_training_step(const Image& image, const BinaryMask& target, std::optional<double> granularity,
                                 const SegmenterState& state, const TrainConfig& cfg, std::mt19937_64& rng,
                                 SegmenterParams* grads);

/// Same step for a stored proposal; the granularity prompt is the record's combined value.
StepInfo iterative_training_step(const Image& image, const Proposal& proposal, const StoreRecord& record,
                                 const SegmenterState& state, const TrainConfig& cfg, std::mt19937_64& rng,
                                 SegmenterParams* grads);

struct MetricsLine {
    int epoch = 0;
    long step = 0;
    double loss = 0.0;
    double lr = 0.0;
};

struct TrainResult {
    SegmenterState state;
    std::vector<double> epoch_losses;
    std::vector<MetricsLine> log;
};

struct TrainHooks {
    /// Receives every metrics line as JSON text.
    std::ostream* metrics = nullptr;
    std::function<void(int epoch, double mean_loss)> on_epoch;
};

/// Granularity-controllable fine-tuning over a proposal store. Requires an adapted model.
TrainResult train(const ProposalStore& store, SegmenterState model, const TrainConfig& cfg,
                  const TrainHooks& hooks = {});

/// Same, over records already held in memory together with their masks and images.
struct TrainingSet {
    std::vector<StoreRecord> records;
    std::vector<BinaryMask> masks;
    std::vector<const Image*> images;
    /// Whole objects available for replay.
    std::vector<BinaryMask> objects;
    std::vector<const Image*> object_images;
};
TrainingSet load_training_set(const ProposalStore& store, std::vector<Image>& image_storage);
TrainResult train(const TrainingSet& set, SegmenterState model, const TrainConfig& cfg, const TrainHooks& hooks = {});

/// Object-level training of an un-adapted model with the granularity prompt disabled.
TrainResult pretrain_object_level(const std::vector<Scene>& scenes, SegmenterState model, const TrainConfig& cfg,
                                  const TrainHooks& hooks = {});

} // namespace granseg
