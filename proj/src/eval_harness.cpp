#include "granseg/eval_harness.hpp"

#include "granseg/clicksim.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

namespace granseg {

void EvalConfig::validate() const {
    if (max_clicks < 1) throw ContractViolation("eval config: max_clicks must be >= 1");
    if (iou_thresholds.empty()) throw ContractViolation("eval config: need at least one IoU threshold");
    for (double t : iou_thresholds)
        if (!(t > 0.0 && t < 1.0)) throw ContractViolation("eval config: thresholds must lie in (0,1)");
    if (!(binarize_threshold > 0.0 && binarize_threshold < 1.0))
        throw ContractViolation("eval config: binarize threshold must lie in (0,1)");
    for (double g : granularity_sweep)
        if (!(g >= 0.0 && g <= 1.0)) throw ContractViolation("eval config: sweep values must lie in [0,1]");
    for (int k : curve_ks)
        if (k < 1 || k > max_clicks) throw ContractViolation("eval config: curve k outside [1, max_clicks]");
}

std::vector<double> EvalConfig::default_sweep() {
    std::vector<double> s;
    for (int i = 0; i <= 10; ++i) s.push_back(i / 10.0);
    return s;
}

std::vector<EvalInstance> object_instances(const std::vector<Scene>& scenes) {
    std::vector<EvalInstance> out;
    for (const auto& s : scenes) out.push_back({s.id, &s.image, s.object});
    return out;
}

std::vector<EvalInstance> part_instances(const std::vector<Scene>& scenes, double max_granularity) {
    std::vector<EvalInstance> out;
    for (const auto& s : scenes)
        for (size_t k = 0; k < s.parts.size(); ++k)
            if (s.part_granularity[k] <= max_granularity)
                out.push_back({s.id + "_part" + std::to_string(k), &s.image, s.parts[k]});
    return out;
}

double InstanceResult::iou_at(int k) const {
    if (ious.empty() || k < 1) throw ContractViolation("iou_at: no IoU recorded for that click count");
    return ious[std::min(static_cast<size_t>(k), ious.size()) - 1];
}

InstanceResult evaluate_instance(const Image& image, const BinaryMask& target, const Predictor& model,
                                 std::optional<double> granularity, const EvalConfig& cfg,
                                 const std::string& instance_id) {
    cfg.validate();
    if (target.empty()) throw EmptyMaskError("evaluate_instance: target '" + instance_id + "' is empty");
    InstanceResult r;
    r.instance_id = instance_id;
    r.granularity = granularity;
    r.noc.assign(cfg.iou_thresholds.size(), cfg.max_clicks);
    std::vector<bool> reached(cfg.iou_thresholds.size(), false);
    const double stop_at = *std::max_element(cfg.iou_thresholds.begin(), cfg.iou_thresholds.end());

    ClickSet clicks{first_click(target)};
    ProbabilityMap prev(target.height, target.width);
    for (int n = 1; n <= cfg.max_clicks; ++n) {
        prev = model.predict(image, clicks, prev, granularity);
        const BinaryMask pred = binarize(prev, cfg.binarize_threshold);
        const double v = iou(pred, target);
        r.ious.push_back(v);
        for (size_t t = 0; t < cfg.iou_thresholds.size(); ++t)
            if (!reached[t] && v >= cfg.iou_thresholds[t]) {
                reached[t] = true;
                r.noc[t] = n;
            }
        if (v >= stop_at || n == cfg.max_clicks) break;
        clicks.push_back(next_click_from_error(pred, target)); // v < 1 so an error region exists
    }
    return r;
}

std::vector<InstanceResult> evaluate_dataset(const std::vector<EvalInstance>& instances, const Predictor& model,
                                             std::optional<double> granularity, const EvalConfig& cfg) {
    std::vector<InstanceResult> out;
    out.reserve(instances.size());
    for (const auto& in : instances) out.push_back(evaluate_instance(*in.image, in.target, model, granularity, cfg, in.id));
    return out;
}

EvalSummary summarize(const std::vector<InstanceResult>& results, const EvalConfig& cfg) {
    EvalSummary s;
    s.instances = results.size();
    s.mean_noc.assign(cfg.iou_thresholds.size(), 0.0);
    if (results.empty()) return s;
    for (const auto& r : results) {
        for (size_t t = 0; t < s.mean_noc.size(); ++t) s.mean_noc[t] += r.noc[t];
        s.mean_iou1 += r.iou_at(1);
    }
    for (double& v : s.mean_noc) v /= static_cast<double>(results.size());
    s.mean_iou1 /= static_cast<double>(results.size());
    return s;
}

SweepResult evaluate_sweep(const std::vector<EvalInstance>& instances, const Predictor& model, const EvalConfig& cfg) {
    cfg.validate();
    if (instances.empty()) throw ContractViolation("evaluate_sweep: dataset is empty");
    if (cfg.granularity_sweep.empty()) throw ContractViolation("evaluate_sweep: sweep is empty");
    SweepResult s;
    s.sweep = cfg.granularity_sweep;
    const size_t nt = cfg.iou_thresholds.size(), ns = s.sweep.size();
    s.mean_optimal_noc.assign(nt, 0.0);
    s.mean_iou1.assign(ns, 0.0);
    for (const auto& in : instances) {
        std::vector<InstanceResult> row;
        for (double g : s.sweep) row.push_back(evaluate_instance(*in.image, in.target, model, g, cfg, in.id));

        // Ties go to the larger granularity, whatever order the sweep lists them in.
        const auto better = [&](size_t cand, size_t best, auto key) {
            return key(cand) < key(best) || (key(cand) == key(best) && s.sweep[cand] > s.sweep[best]);
        };
        std::vector<double> opt(nt);
        for (size_t t = 0; t < nt; ++t) {
            size_t best = 0;
            for (size_t j = 1; j < ns; ++j)
                if (better(j, best, [&](size_t i) { return static_cast<double>(row[i].noc[t]); })) best = j;
            opt[t] = s.sweep[best];
            s.mean_optimal_noc[t] += row[best].noc[t];
        }
        size_t best = 0;
        for (size_t j = 1; j < ns; ++j)
            if (better(j, best, [&](size_t i) { return -row[i].iou_at(1); })) best = j;
        s.optimal_iou1_granularity.push_back(s.sweep[best]);
        s.optimal_noc_granularity.push_back(std::move(opt));
        for (size_t j = 0; j < ns; ++j) s.mean_iou1[j] += row[j].iou_at(1);
        s.runs.push_back(std::move(row));
    }
    const double n = static_cast<double>(instances.size());
    for (double& v : s.mean_optimal_noc) v /= n;
    for (double& v : s.mean_iou1) v /= n;
    return s;
}

std::vector<CurveRow> curve_rows(const SweepResult& sweep, const EvalConfig& cfg) {
    std::vector<CurveRow> rows;
    for (const auto& runs : sweep.runs)
        for (int k : cfg.curve_ks)
            for (size_t j = 0; j < sweep.sweep.size(); ++j) {
                const auto& r = runs[j];
                rows.push_back({r.instance_id, sweep.sweep[j], k, r.iou_at(k),
                                static_cast<int>(std::min(static_cast<size_t>(k), r.ious.size()))});
            }
    return rows;
}

void write_curve_csv(const std::filesystem::path& path, const std::vector<CurveRow>& rows) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw IoError("cannot write curve file '" + path.string() + "'");
    out << "instance_id,granularity,k,iou,clicks_used\n";
    out.precision(10);
    for (const auto& r : rows)
        out << r.instance_id << ',' << r.granularity << ',' << r.k << ',' << r.iou << ',' << r.clicks_used << '\n';
    if (!out) throw IoError("short write to '" + path.string() + "'");
}

size_t GranularityHistogram::total() const {
    size_t n = 0;
    for (size_t c : counts) n += c;
    return n;
}

double GranularityHistogram::fraction_at_least(double g) const {
    const size_t n = total();
    if (n == 0) return 0.0;
    size_t hit = 0;
    for (size_t i = 0; i < bins.size(); ++i)
        if (bins[i] >= g - 1e-12) hit += counts[i];
    return static_cast<double>(hit) / static_cast<double>(n);
}

GranularityHistogram optimal_granularity_histogram(const SweepResult& sweep) {
    GranularityHistogram h;
    if (sweep.runs.empty()) return h;
    h.bins = sweep.sweep;
    h.counts.assign(h.bins.size(), 0);
    for (double g : sweep.optimal_iou1_granularity)
        for (size_t i = 0; i < h.bins.size(); ++i)
            if (h.bins[i] == g) {
                ++h.counts[i];
                break;
            }
    return h;
}

namespace {

std::vector<double> average_ranks(const std::vector<double>& v) {
    std::vector<size_t> idx(v.size());
    for (size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    std::sort(idx.begin(), idx.end(), [&](size_t a, size_t b) { return v[a] < v[b]; });
    std::vector<double> rank(v.size());
    for (size_t i = 0; i < idx.size();) {
        size_t j = i;
        while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
        const double r = 0.5 * static_cast<double>(i + j) + 1.0;
        for (size_t k = i; k <= j; ++k) rank[idx[k]] = r;
        i = j + 1;
    }
    return rank;
}

} // namespace

double spearman(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size()) throw ContractViolation("spearman: length mismatch");
    if (x.size() < 2) throw ContractViolation("spearman: need at least two points");
    const auto rx = average_ranks(x), ry = average_ranks(y);
    const double n = static_cast<double>(x.size());
    double mx = 0, my = 0;
    for (size_t i = 0; i < rx.size(); ++i) {
        mx += rx[i];
        my += ry[i];
    }
    mx /= n;
    my /= n;
    double sxy = 0, sxx = 0, syy = 0;
    for (size_t i = 0; i < rx.size(); ++i) {
        sxy += (rx[i] - mx) * (ry[i] - my);
        sxx += (rx[i] - mx) * (rx[i] - mx);
        syy += (ry[i] - my) * (ry[i] - my);
    }
    if (sxx == 0.0 || syy == 0.0) return 0.0;
    return sxy / std::sqrt(sxx * syy);
}

std::vector<std::vector<double>> granularity_area_response(const std::vector<EvalInstance>& instances,
                                                           const Predictor& model, const EvalConfig& cfg) {
    cfg.validate();
    std::vector<std::vector<double>> out;
    for (const auto& in : instances) {
        const ClickSet clicks{first_click(in.target)};
        const ProbabilityMap empty(in.target.height, in.target.width);
        std::vector<double> areas;
        for (double g : cfg.granularity_sweep)
            areas.push_back(static_cast<double>(
                binarize(model.predict(*in.image, clicks, empty, g), cfg.binarize_threshold).area()));
        out.push_back(std::move(areas));
    }
    return out;
}

namespace {

std::string noc_key(double t) {
    return "noc@" + std::to_string(static_cast<int>(std::lround(t * 100)));
}

} // namespace

nlohmann::json summary_json(const EvalSummary& s, const EvalConfig& cfg) {
    nlohmann::json j = {{"instances", s.instances}, {"mean_iou@1", s.mean_iou1}, {"max_clicks", cfg.max_clicks}};
    for (size_t t = 0; t < cfg.iou_thresholds.size(); ++t) j[noc_key(cfg.iou_thresholds[t])] = s.mean_noc[t];
    return j;
}

nlohmann::json summary_json(const SweepResult& s, const EvalConfig& cfg) {
    nlohmann::json j = {{"instances", s.runs.size()}, {"max_clicks", cfg.max_clicks}, {"sweep", s.sweep},
                        {"mean_iou@1_per_granularity", s.mean_iou1}};
    for (size_t t = 0; t < cfg.iou_thresholds.size(); ++t)
        j["optimal_" + noc_key(cfg.iou_thresholds[t])] = s.mean_optimal_noc[t];
    const auto h = optimal_granularity_histogram(s);
    j["optimal_granularity_histogram"] = {{"bins", h.bins}, {"counts", h.counts}};
    return j;
}

} // namespace granseg
