#include "granseg/clicksim.hpp"

#include <algorithm>
#include <numeric>
#include <random>

namespace granseg {

void ClickSimConfig::validate() const {
    if (disk_radius < 1) throw ContractViolation("disk_radius must be >= 1");
    if (d_min < 1) throw ContractViolation("d_min must be >= 1");
}

double DiskMap::channel_sum(int channel) const {
    const auto begin = values.begin() + static_cast<std::ptrdiff_t>(channel) * height * width;
    return std::accumulate(begin, begin + static_cast<std::ptrdiff_t>(height) * width, 0.0);
}

DiskMap encode_disk_map(const ClickSet& clicks, int height, int width, const ClickSimConfig& cfg) {
    cfg.validate();
    DiskMap map(height, width);
    const int rad = cfg.disk_radius;
    const long long r2 = static_cast<long long>(rad) * rad;
    for (const auto& click : clicks) {
        if (click.row < 0 || click.row >= height || click.col < 0 || click.col >= width)
            throw ContractViolation("click (" + std::to_string(click.row) + "," + std::to_string(click.col) +
                                    ") outside " + std::to_string(height) + "x" + std::to_string(width));
        const int channel = click.is_positive() ? 0 : 1;
        for (int r = std::max(0, click.row - rad); r <= std::min(height - 1, click.row + rad); ++r)
            for (int c = std::max(0, click.col - rad); c <= std::min(width - 1, click.col + rad); ++c) {
                const long long dr = r - click.row, dc = c - click.col;
                if (dr * dr + dc * dc <= r2) map.at(channel, r, c) = 1.0f;
            }
    }
    return map;
}

Click first_click(const BinaryMask& gt) {
    if (gt.empty()) throw EmptyMaskError("first_click: target mask is empty");
    const auto [row, col] = interior_most_point(gt);
    return {row, col, Polarity::positive};
}

Click next_click_from_error(const BinaryMask& pred, const BinaryMask& gt) {
    if (!pred.same_shape(gt)) throw ContractViolation("next_click_from_error: shape mismatch");
    const BinaryMask fn = mask_and_not(gt, pred);
    const BinaryMask fp = mask_and_not(pred, gt);
    if (fn.empty() && fp.empty()) throw NoErrorRegion("next_click_from_error: prediction equals target");

    const BinaryMask fn_big = largest_connected_component(fn);
    const BinaryMask fp_big = largest_connected_component(fp);
    const bool positive = fn_big.area() >= fp_big.area();
    const auto [row, col] = interior_most_point(positive ? fn_big : fp_big);
    return {row, col, positive ? Polarity::positive : Polarity::negative};
}

std::optional<Click> sample_negative_in_mask(const ProbabilityMap& current, const ClickSet& existing,
                                             double threshold, const ClickSimConfig& cfg, std::uint64_t rng_seed) {
    cfg.validate();
    const long long dmin2 = static_cast<long long>(cfg.d_min) * cfg.d_min;
    std::vector<int> admissible;
    for (int r = 0; r < current.height; ++r)
        for (int c = 0; c < current.width; ++c) {
            if (!(current.at(r, c) >= threshold)) continue;
            const Click candidate{r, c, Polarity::negative};
            const bool far = std::all_of(existing.begin(), existing.end(),
                                         [&](const Click& e) { return squared_distance(candidate, e) >= dmin2; });
            if (far) admissible.push_back(r * current.width + c);
        }
    if (admissible.empty()) return std::nullopt;
    std::mt19937_64 rng(rng_seed);
    std::uniform_int_distribution<size_t> pick(0, admissible.size() - 1);
    const int idx = admissible[pick(rng)];
    return Click{idx / current.width, idx % current.width, Polarity::negative};
}

} // namespace granseg
