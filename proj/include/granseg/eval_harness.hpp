#pragma once

#include "granseg/core_types.hpp"
#include "granseg/dataset.hpp"
#include "granseg/segmenter.hpp"

#include <json.hpp>

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace granseg {

struct EvalConfig {
    std::vector<double> iou_thresholds{0.85, 0.90};
    int max_clicks = 20;
    double binarize_threshold = 0.5;
    std::vector<double> granularity_sweep = default_sweep();
    /// Click counts reported in the IoU-granularity curves.
    std::vector<int> curve_ks{1, 3, 5};

    void validate() const;
    /// 0.0, 0.1, ..., 1.0
    static std::vector<double> default_sweep();
};

/// One evaluation target: an object or a part, with the image it lives in.
struct EvalInstance {
    std::string id;
    const Image* image = nullptr;
    BinaryMask target;
};

/// Whole objects of every scene.
std::vector<EvalInstance> object_instances(const std::vector<Scene>& scenes);
/// Every part whose area ratio is at most `max_granularity`.
std::vector<EvalInstance> part_instances(const std::vector<Scene>& scenes, double max_granularity);

struct InstanceResult {
    std::string instance_id;
    /// One entry per threshold, in EvalConfig order.
    std::vector<int> noc;
    /// IoU after each click; stops once the highest threshold is reached.
    std::vector<double> ious;
    std::optional<double> granularity;

    /// IoU after k clicks; runs that stopped early keep their last value.
    double iou_at(int k) const;
};

InstanceResult evaluate_instance(const Image& image, const BinaryMask& target, const Predictor& model,
                                 std::optional<double> granularity, const EvalConfig& cfg,
                                 const std::string& instance_id = {});

struct EvalSummary {
    size_t instances = 0;
    std::vector<double> mean_noc; // per threshold
    double mean_iou1 = 0.0;
};

std::vector<InstanceResult> evaluate_dataset(const std::vector<EvalInstance>& instances, const Predictor& model,
                                             std::optional<double> granularity, const EvalConfig& cfg);
EvalSummary summarize(const std::vector<InstanceResult>& results, const EvalConfig& cfg);

struct SweepResult {
    std::vector<double> sweep;
    /// runs[i][j]: instance i at sweep value j.
    std::vector<std::vector<InstanceResult>> runs;
    /// Per threshold: mean over instances of the minimum NoC across the sweep.
    std::vector<double> mean_optimal_noc;
    /// Per instance and threshold: sweep value achieving the minimum NoC (ties to the larger value).
    std::vector<std::vector<double>> optimal_noc_granularity;
    /// Per instance: sweep value maximizing IoU@1 (ties to the larger value).
    std::vector<double> optimal_iou1_granularity;
    /// Per sweep value: mean IoU@1 over instances.
    std::vector<double> mean_iou1;
};

SweepResult evaluate_sweep(const std::vector<EvalInstance>& instances, const Predictor& model, const EvalConfig& cfg);

struct CurveRow {
    std::string instance_id;
    double granularity = 0.0;
    int k = 0;
    double iou = 0.0;
    int clicks_used = 0;
};

/// |sweep| rows per (instance, k).
std::vector<CurveRow> curve_rows(const SweepResult& sweep, const EvalConfig& cfg);
/// Header: instance_id,granularity,k,iou,clicks_used
void write_curve_csv(const std::filesystem::path& path, const std::vector<CurveRow>& rows);

struct GranularityHistogram {
    std::vector<double> bins;
    std::vector<size_t> counts;

    size_t total() const;
    /// Fraction of instances whose optimum is >= g.
    double fraction_at_least(double g) const;
};

/// Counts of the per-instance IoU@1-optimal granularity over the sweep values.
GranularityHistogram optimal_granularity_histogram(const SweepResult& sweep);

/// Spearman rank correlation with average ranks for ties; 0 when either side is constant.
double spearman(const std::vector<double>& x, const std::vector<double>& y);

/// Predicted foreground area after the first click at every sweep value: result[i][j]
/// is instance i at cfg.granularity_sweep[j].
std::vector<std::vector<double>> granularity_area_response(const std::vector<EvalInstance>& instances,
                                                           const Predictor& model, const EvalConfig& cfg);

nlohmann::json summary_json(const EvalSummary& s, const EvalConfig& cfg);
nlohmann::json summary_json(const SweepResult& s, const EvalConfig& cfg);

} // namespace granseg
