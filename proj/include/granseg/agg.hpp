#pragma once

#include "granseg/clicksim.hpp"
#include "granseg/core_types.hpp"
#include "granseg/dataset.hpp"
#include "granseg/granulometry.hpp"
#include "granseg/proposal_store.hpp"
#include "granseg/segmenter.hpp"

#include <cstdint>
#include <functional>
#include <vector>

namespace granseg {

struct LoopConfig {
    int min_iters = 3;
    int max_iters = 6;
    double binarize_threshold = 0.5;
    std::uint64_t rng_seed = 0;

    void validate() const;
};

struct PostProcessConfig {
    size_t min_area = 16;
    /// A proposal overlapping an already kept one at least this much is dropped.
    double dedup_iou = 0.95;
};

struct LoopResult {
    std::vector<Proposal> proposals;
    /// One positive click followed by the negatives the simulator placed.
    ClickSet clicks;
    /// Iteration budget drawn from [min_iters, max_iters].
    int iterations_drawn = 0;
};

/// Multi-granularity loop simulation on one object: a random positive click with
/// the object mask as mask prompt, then repeated negative clicks sampled inside
/// the current prediction, each prediction becoming a candidate proposal.
LoopResult loop_simulate(const Image& image, const BinaryMask& gt, const std::string& object_id,
                         const Predictor& model, const LoopConfig& cfg, const ClickSimConfig& click_cfg);

/// Appends gt & !P for every input proposal.
std::vector<Proposal> add_complements(const std::vector<Proposal>& proposals, const BinaryMask& gt);

/// Clip to gt, fill holes, clip again, keep the largest component, then drop empty, whole-object,
/// tiny and near-duplicate proposals (first occurrence wins).
std::vector<Proposal> post_process(const std::vector<Proposal>& proposals, const BinaryMask& gt,
                                   const PostProcessConfig& cfg = {});

struct MinedProposal {
    std::string image_id;
    Proposal proposal;
    GranularityRecord granularity;
};

struct AggConfig {
    LoopConfig loop;
    ClickSimConfig clicks;
    PostProcessConfig post;
    EstimatorConfig estimator;
};

/// Full mask engine + granularity estimator over a set of scenes. Each object
/// gets its own seed derived from cfg.loop.rng_seed and its index.
std::vector<MinedProposal> mine_proposals(const std::vector<Scene>& scenes, const Predictor& model,
                                          const AggConfig& cfg,
                                          const std::function<void(size_t done, size_t total)>& progress = {});

/// Ground-truth parts of every scene, scored by the same estimator (source = ground_truth_part).
std::vector<MinedProposal> ground_truth_proposals(const std::vector<Scene>& scenes, const Predictor& model,
                                                  const EstimatorConfig& cfg);

/// Writes every mined proposal into the store, plus the image and object mask it came from.
void write_to_store(ProposalStore& store, const std::vector<Scene>& scenes, const std::vector<MinedProposal>& mined);

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

} // namespace granseg
