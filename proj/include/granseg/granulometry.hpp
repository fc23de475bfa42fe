#pragma once

#include "granseg/core_types.hpp"
#include "granseg/segmenter.hpp"

namespace granseg {

enum class ClickAnchor {
    /// Interior-most point of the proposal.
    proposal,
    /// Interior-most point of the whole object.
    object,
};

struct EstimatorConfig {
    double lambda = 0.5;
    /// Below this the object-level peak difference counts as flat.
    double epsilon = 1e-8;
    ClickAnchor anchor = ClickAnchor::proposal;

    void validate() const;
};

/// Area(P) / Area(G).
double scale_granularity(const Proposal& p, const BinaryMask& gt);

/// Probability map of the object-level model with one positive click at the
/// anchor point and the object mask as mask prompt.
ProbabilityMap semantic_probability_map(const Image& image, const Proposal& p, const BinaryMask& gt,
                                        const Predictor& model, ClickAnchor anchor = ClickAnchor::proposal);

/// max - min of `m` over the foreground of `region`.
double peak_difference(const ProbabilityMap& m, const BinaryMask& region);

/// peak_difference(m, P) / peak_difference(m, G); 1.0 when the denominator is below epsilon.
double semantic_granularity(const ProbabilityMap& m, const Proposal& p, const BinaryMask& gt,
                            const EstimatorConfig& cfg);

GranularityRecord estimate(const Image& image, const Proposal& p, const BinaryMask& gt, const Predictor& model,
                           const EstimatorConfig& cfg);

} // namespace granseg
