#include "granseg/agg.hpp"

#include <map>
#include <random>

namespace granseg {

void LoopConfig::validate() const {
    if (min_iters < 1 || min_iters > max_iters) throw ContractViolation("loop config: need 1 <= min_iters <= max_iters");
    if (!(binarize_threshold > 0.0 && binarize_threshold < 1.0))
        throw ContractViolation("loop config: threshold must lie in (0,1)");
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
    // splitmix64 over the pair
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

LoopResult loop_simulate(const Image& image, const BinaryMask& gt, const std::string& object_id,
                         const Predictor& model, const LoopConfig& cfg, const ClickSimConfig& click_cfg) {
    cfg.validate();
    click_cfg.validate();
    if (gt.empty()) throw EmptyMaskError("loop_simulate: object mask is empty");

    LoopResult out;
    std::mt19937_64 rng(derive_seed(cfg.rng_seed, 0));
    out.iterations_drawn = std::uniform_int_distribution<int>(cfg.min_iters, cfg.max_iters)(rng);

    std::vector<size_t> inside;
    for (size_t i = 0; i < gt.pixels.size(); ++i)
        if (gt.pixels[i]) inside.push_back(i);
    const size_t pick = inside[std::uniform_int_distribution<size_t>(0, inside.size() - 1)(rng)];
    out.clicks.push_back({static_cast<int>(pick / gt.width), static_cast<int>(pick % gt.width), Polarity::positive});

    ProbabilityMap prompt(gt.height, gt.width);
    for (size_t i = 0; i < gt.pixels.size(); ++i) prompt.values[i] = gt.pixels[i] ? 1.0 : 0.0;
    ProbabilityMap current = model.predict(image, out.clicks, prompt, std::nullopt);

    for (int t = 1; t <= out.iterations_drawn; ++t) {
        const auto neg = sample_negative_in_mask(current, out.clicks, cfg.binarize_threshold, click_cfg,
                                                 derive_seed(cfg.rng_seed, static_cast<std::uint64_t>(t)));
        if (!neg) break;
        out.clicks.push_back(*neg);
        current = model.predict(image, out.clicks, current, std::nullopt);
        Proposal p;
        p.mask = binarize(current, cfg.binarize_threshold);
        p.mask.role = MaskRole::proposal;
        p.parent_object_id = object_id;
        p.proposal_id = object_id + "_loop" + std::to_string(t);
        p.source = ProposalSource::loop_prediction;
        out.proposals.push_back(std::move(p));
    }
    return out;
}

std::vector<Proposal> add_complements(const std::vector<Proposal>& proposals, const BinaryMask& gt) {
    std::vector<Proposal> out = proposals;
    for (const auto& p : proposals) {
        Proposal c;
        c.mask = mask_and_not(gt, p.mask);
        c.mask.role = MaskRole::proposal;
        c.parent_object_id = p.parent_object_id;
        c.proposal_id = p.proposal_id + "_comp";
        c.source = ProposalSource::complement;
        out.push_back(std::move(c));
    }
    return out;
}

std::vector<Proposal> post_process(const std::vector<Proposal>& proposals, const BinaryMask& gt,
                                   const PostProcessConfig& cfg) {
    std::vector<Proposal> kept;
    for (const auto& p : proposals) {
        Proposal q = p;
        // re-clip after filling so holes of the object itself stay open
        q.mask = largest_connected_component(mask_and(fill_holes(mask_and(p.mask, gt)), gt));
        q.mask.role = MaskRole::proposal;
        const size_t area = q.mask.area();
        if (area == 0 || area < cfg.min_area || q.mask == gt) continue;
        bool duplicate = false;
        for (const auto& k : kept)
            if (iou(k.mask, q.mask) >= cfg.dedup_iou) {
                duplicate = true;
                break;
            }
        if (!duplicate) kept.push_back(std::move(q));
    }
    return kept;
}

std::vector<MinedProposal> mine_proposals(const std::vector<Scene>& scenes, const Predictor& model,
                                          const AggConfig& cfg,
                                          const std::function<void(size_t, size_t)>& progress) {
    std::vector<MinedProposal> out;
    for (size_t i = 0; i < scenes.size(); ++i) {
        const auto& scene = scenes[i];
        LoopConfig loop = cfg.loop;
        loop.rng_seed = derive_seed(cfg.loop.rng_seed, 1000 + i);
        const auto sim = loop_simulate(scene.image, scene.object, scene.id, model, loop, cfg.clicks);
        const auto kept = post_process(add_complements(sim.proposals, scene.object), scene.object, cfg.post);
        for (const auto& p : kept)
            out.push_back({scene.id, p, estimate(scene.image, p, scene.object, model, cfg.estimator)});
        if (progress) progress(i + 1, scenes.size());
    }
    return out;
}

std::vector<MinedProposal> ground_truth_proposals(const std::vector<Scene>& scenes, const Predictor& model,
                                                  const EstimatorConfig& cfg) {
    std::vector<MinedProposal> out;
    for (const auto& scene : scenes)
        for (size_t k = 0; k < scene.parts.size(); ++k) {
            Proposal p;
            p.mask = scene.parts[k];
            p.mask.role = MaskRole::proposal;
            p.parent_object_id = scene.id;
            p.proposal_id = scene.id + "_gt" + std::to_string(k);
            p.source = ProposalSource::ground_truth_part;
            const auto g = estimate(scene.image, p, scene.object, model, cfg);
            out.push_back({scene.id, std::move(p), g});
        }
    return out;
}

void write_to_store(ProposalStore& store, const std::vector<Scene>& scenes, const std::vector<MinedProposal>& mined) {
    std::map<std::string, const Scene*> by_id;
    for (const auto& s : scenes) by_id[s.id] = &s;
    for (const auto& m : mined) {
        const auto it = by_id.find(m.image_id);
        if (it == by_id.end()) throw ContractViolation("mined proposal refers to unknown image '" + m.image_id + "'");
        store.put_image(it->second->image);
        store.put_object(m.image_id, it->second->object);
        StoreRecord r;
        r.image_id = m.image_id;
        r.object_id = m.proposal.parent_object_id;
        r.proposal_id = m.proposal.proposal_id;
        r.granularity = m.granularity;
        r.source = m.proposal.source;
        store.append(r, m.proposal.mask);
    }
}

} // namespace granseg
