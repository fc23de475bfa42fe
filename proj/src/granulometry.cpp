#include "granseg/granulometry.hpp"

#include <algorithm>
#include <limits>

namespace granseg {

void EstimatorConfig::validate() const {
    if (!(lambda >= 0.0 && lambda <= 1.0)) throw ContractViolation("estimator lambda must lie in [0,1]");
    if (!(epsilon > 0.0)) throw ContractViolation("estimator epsilon must be positive");
}

namespace {

void require_part_of(const Proposal& p, const BinaryMask& gt) {
    if (gt.empty()) throw EmptyMaskError("object mask is empty");
    if (p.mask.empty()) throw EmptyMaskError("proposal '" + p.proposal_id + "' is empty");
    if (!is_subset(p.mask, gt)) throw ContractViolation("proposal '" + p.proposal_id + "' leaves its object mask");
}

} // namespace

double scale_granularity(const Proposal& p, const BinaryMask& gt) {
    if (gt.empty()) throw EmptyMaskError("scale_granularity: object mask is empty");
    if (!is_subset(p.mask, gt)) throw ContractViolation("scale_granularity: proposal leaves its object mask");
    return static_cast<double>(p.mask.area()) / static_cast<double>(gt.area());
}

ProbabilityMap semantic_probability_map(const Image& image, const Proposal& p, const BinaryMask& gt,
                                        const Predictor& model, ClickAnchor anchor) {
    if (p.mask.empty()) throw EmptyMaskError("semantic_probability_map: proposal is empty");
    const auto [row, col] = interior_most_point(anchor == ClickAnchor::proposal ? p.mask : gt);
    ProbabilityMap prompt(gt.height, gt.width);
    for (size_t i = 0; i < gt.pixels.size(); ++i) prompt.values[i] = gt.pixels[i] ? 1.0 : 0.0;
    return model.predict(image, {Click{row, col, Polarity::positive}}, prompt, std::nullopt);
}

double peak_difference(const ProbabilityMap& m, const BinaryMask& region) {
    if (m.height != region.height || m.width != region.width)
        throw ContractViolation("peak_difference: shape mismatch");
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (size_t i = 0; i < region.pixels.size(); ++i)
        if (region.pixels[i]) {
            lo = std::min(lo, m.values[i]);
            hi = std::max(hi, m.values[i]);
        }
    if (lo > hi) throw EmptyMaskError("peak_difference: region is empty");
    return hi - lo;
}

double semantic_granularity(const ProbabilityMap& m, const Proposal& p, const BinaryMask& gt,
                            const EstimatorConfig& cfg) {
    require_part_of(p, gt);
    const double denom = peak_difference(m, gt);
    if (denom < cfg.epsilon) return 1.0;
    return peak_difference(m, p.mask) / denom;
}

GranularityRecord estimate(const Image& image, const Proposal& p, const BinaryMask& gt, const Predictor& model,
                           const EstimatorConfig& cfg) {
    cfg.validate();
    require_part_of(p, gt);
    const double scale = scale_granularity(p, gt);
    const ProbabilityMap m = semantic_probability_map(image, p, gt, model, cfg.anchor);
    const double semantic = semantic_granularity(m, p, gt, cfg);
    return GranularityRecord::combine(scale, semantic, cfg.lambda);
}

} // namespace granseg
