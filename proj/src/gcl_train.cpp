#include "granseg/gcl_train.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

namespace granseg {

void TrainConfig::validate() const {
    if (epochs < 1) throw ContractViolation("train config: epochs must be >= 1");
    if (lr_decay_epoch > epochs) throw ContractViolation("train config: lr_decay_epoch must not exceed epochs");
    if (max_iter_clicks < 1) throw ContractViolation("train config: max_iter_clicks must be >= 1");
    if (batch_size < 1) throw ContractViolation("train config: batch_size must be >= 1");
    if (!(lr > 0.0)) throw ContractViolation("train config: lr must be positive");
    if (focal_gamma < 0.0) throw ContractViolation("train config: focal_gamma must be >= 0");
    if (steps_per_epoch < 0) throw ContractViolation("train config: steps_per_epoch must be >= 0");
    if (!(object_replay >= 0.0 && object_replay <= 1.0))
        throw ContractViolation("train config: object_replay must lie in [0,1]");
}

TrainConfig TrainConfig::full_scale() {
    TrainConfig c;
    c.epochs = 55;
    c.lr = 5e-5;
    c.lr_decay_epoch = 50;
    c.lr_decay_factor = 0.1;
    c.max_iter_clicks = 3;
    c.focal_gamma = 2.0;
    c.augment = false;
    c.object_replay = 0.0;
    return c;
}

double lr_at(const TrainConfig& cfg, int epoch) {
    return epoch >= cfg.lr_decay_epoch ? cfg.lr * cfg.lr_decay_factor : cfg.lr;
}

namespace {

void check_shapes(const ProbabilityMap& pred, const BinaryMask& target) {
    if (pred.height != target.height || pred.width != target.width || pred.values.size() != target.pixels.size())
        throw ContractViolation("nfl_loss: prediction and target shapes differ");
}

} // namespace

double nfl_loss(const ProbabilityMap& pred, const BinaryMask& target, double gamma) {
    check_shapes(pred, target);
    double num = 0.0, den = 0.0;
    for (size_t i = 0; i < pred.values.size(); ++i) {
        const double p = std::clamp(pred.values[i], kNflClamp, 1.0 - kNflClamp);
        const double pt = target.pixels[i] ? p : 1.0 - p;
        const double w = std::pow(1.0 - pt, gamma);
        num += w * std::log(pt);
        den += w;
    }
    return -num / std::max(den, kNflEps);
}

double nfl_loss_grad(const ProbabilityMap& pred, const BinaryMask& target, double gamma, std::vector<double>& dpred) {
    check_shapes(pred, target);
    const size_t n = pred.values.size();
    std::vector<double> pt(n), w(n), dw(n);
    double num = 0.0, den = 0.0;
    for (size_t i = 0; i < n; ++i) {
        const double p = std::clamp(pred.values[i], kNflClamp, 1.0 - kNflClamp);
        pt[i] = target.pixels[i] ? p : 1.0 - p;
        const double q = 1.0 - pt[i];
        w[i] = std::pow(q, gamma);
        dw[i] = gamma == 0.0 ? 0.0 : -gamma * std::pow(q, gamma - 1.0); // dw/dpt
        num += w[i] * std::log(pt[i]);
        den += w[i];
    }
    const bool floor_active = den < kNflEps;
    const double s = std::max(den, kNflEps);
    dpred.assign(n, 0.0);
    for (size_t i = 0; i < n; ++i) {
        const double v = pred.values[i];
        if (v < kNflClamp || v > 1.0 - kNflClamp) continue; // clamp is flat there
        const double dnum = dw[i] * std::log(pt[i]) + w[i] / pt[i];
        const double dden = floor_active ? 0.0 : dw[i];
        const double dpt = -(dnum * s - num * dden) / (s * s);
        dpred[i] = target.pixels[i] ? dpt : -dpt;
    }
    return -num / s;
}

// ---------------------------------------------------------------------------

Adam::Adam(const SegmenterState& state, double beta1, double beta2, double eps)
    : beta1_(beta1), beta2_(beta2), eps_(eps), m_(state.params.zeros_like()), v_(state.params.zeros_like()) {}

void Adam::step(SegmenterState& state, const SegmenterParams& grads, double lr) {
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    std::map<std::string, const Mat*> g;
    grads.for_each([&](const std::string& name, const Mat& t) { g[name] = &t; });
    std::map<std::string, Mat*> m, v;
    m_.for_each([&](const std::string& name, Mat& t) { m[name] = &t; });
    v_.for_each([&](const std::string& name, Mat& t) { v[name] = &t; });
    state.params.for_each([&](const std::string& name, Mat& w) {
        if (!state.is_trainable(name)) return;
        const Mat& gr = *g.at(name);
        Mat& mm = *m.at(name);
        Mat& vv = *v.at(name);
        mm = beta1_ * mm + (1.0 - beta1_) * gr;
        vv = beta2_ * vv + (1.0 - beta2_) * gr.cwiseProduct(gr);
        w.array() -= lr * (mm.array() / c1) / ((vv.array() / c2).sqrt() + eps_);
    });
}

// ---------------------------------------------------------------------------

namespace {

// Source coordinate for output (r, c) under transform t on an n x n raster.
std::pair<int, int> dihedral_source(int r, int c, int h, int w, int t) {
    if (t & 4) std::swap(r, c);
    if (t & 1) c = w - 1 - c;
    if (t & 2) r = h - 1 - r;
    return {r, c};
}

void check_dihedral(int h, int w, int t) {
    if (t < 0 || t >= 8) throw ContractViolation("dihedral: transform index must lie in [0,8)");
    if ((t & 4) && h != w) throw ContractViolation("dihedral: transposes need a square raster");
}

} // namespace

Image dihedral(const Image& img, int t) {
    check_dihedral(img.height, img.width, t);
    Image out(img.id, img.height, img.width);
    for (int r = 0; r < img.height; ++r)
        for (int c = 0; c < img.width; ++c) {
            const auto [sr, sc] = dihedral_source(r, c, img.height, img.width, t);
            for (int ch = 0; ch < 3; ++ch) out.at(r, c, ch) = img.at(sr, sc, ch);
        }
    return out;
}

BinaryMask dihedral(const BinaryMask& m, int t) {
    check_dihedral(m.height, m.width, t);
    BinaryMask out(m.height, m.width, m.role);
    for (int r = 0; r < m.height; ++r)
        for (int c = 0; c < m.width; ++c) {
            const auto [sr, sc] = dihedral_source(r, c, m.height, m.width, t);
            out.set(r, c, m.at(sr, sc));
        }
    return out;
}

// ---------------------------------------------------------------------------

StepInfo iterative_training_step(const Image& image, const BinaryMask& target, std::optional<double> granularity,
                                 const SegmenterState& state, const TrainConfig& cfg, std::mt19937_64& rng,
                                 SegmenterParams* grads) {
    if (target.empty()) throw EmptyMaskError("training target is empty");
    const int h = target.height, w = target.width;
    const int radius = state.config.disk_radius;

    StepInfo info;
    info.k = std::uniform_int_distribution<int>(1, cfg.max_iter_clicks)(rng);
    info.clicks.push_back(first_click(target));
    ProbabilityMap prev(h, w);
    for (int step = 2; step <= info.k; ++step) {
        prev = forward(state, image, make_prompts(info.clicks, prev, granularity, h, w, radius));
        try {
            info.clicks.push_back(next_click_from_error(binarize(prev, 0.5), target));
        } catch (const NoErrorRegion&) {
            // already perfect: keep the current clicks
        }
    }

    ForwardTrace trace;
    const ProbabilityMap pred = forward(state, image, make_prompts(info.clicks, prev, granularity, h, w, radius), trace);
    if (grads) {
        std::vector<double> dpred;
        info.loss = nfl_loss_grad(pred, target, cfg.focal_gamma, dpred);
        backward(state, trace, dpred, *grads);
    } else {
        info.loss = nfl_loss(pred, target, cfg.focal_gamma);
    }
    return info;
}

StepInfo iterative_training_step(const Image& image, const Proposal& proposal, const StoreRecord& record,
                                 const SegmenterState& state, const TrainConfig& cfg, std::mt19937_64& rng,
                                 SegmenterParams* grads) {
    if (!state.adapted()) throw ContractViolation("granularity training needs an adapted model");
    return iterative_training_step(image, proposal.mask, record.granularity.combined, state, cfg, rng, grads);
}

namespace {

void zero(SegmenterParams& p) {
    p.for_each([](const std::string&, Mat& m) { m.setZero(); });
}

void scale(SegmenterParams& p, double s) {
    p.for_each([&](const std::string&, Mat& m) { m *= s; });
}

void emit(const TrainHooks& hooks, TrainResult& result, const MetricsLine& line) {
    result.log.push_back(line);
    if (hooks.metrics) {
        nlohmann::json j = {{"epoch", line.epoch}, {"step", line.step}, {"loss", line.loss}, {"lr", line.lr}};
        *hooks.metrics << j.dump() << '\n';
        hooks.metrics->flush();
    }
}

// Shared optimizer loop. `draw` picks an example index, `run` trains on it.
template <class Draw, class Run>
TrainResult run_training(SegmenterState model, const TrainConfig& cfg, size_t dataset_size, Draw&& draw, Run&& run,
                         std::mt19937_64& rng, const TrainHooks& hooks) {
    TrainResult result;
    result.state = std::move(model);
    Adam adam(result.state, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);
    SegmenterParams grads = result.state.params.zeros_like();
    const int steps = cfg.steps_per_epoch > 0
                          ? cfg.steps_per_epoch
                          : std::max(1, static_cast<int>(dataset_size / static_cast<size_t>(cfg.batch_size)));
    long global = 0;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        const double lr = lr_at(cfg, epoch);
        double epoch_loss = 0.0;
        for (int s = 0; s < steps; ++s) {
            zero(grads);
            double batch_loss = 0.0;
            for (int b = 0; b < cfg.batch_size; ++b) batch_loss += run(draw(rng), result.state, rng, grads);
            scale(grads, 1.0 / cfg.batch_size);
            adam.step(result.state, grads, lr);
            batch_loss /= cfg.batch_size;
            epoch_loss += batch_loss;
            emit(hooks, result, {epoch, ++global, batch_loss, lr});
        }
        result.epoch_losses.push_back(epoch_loss / steps);
        if (hooks.on_epoch) hooks.on_epoch(epoch, result.epoch_losses.back());
    }
    return result;
}

} // namespace

TrainingSet load_training_set(const ProposalStore& store, std::vector<Image>& image_storage) {
    TrainingSet set;
    std::vector<ScanDiagnostic> errors;
    set.records = store.scan_all(&errors);
    if (set.records.empty()) throw EmptyStoreError("proposal store '" + store.root().string() + "' has no records");
    std::map<std::string, size_t> index;
    for (const auto& r : set.records)
        if (!index.count(r.image_id)) index[r.image_id] = index.size();
    const auto object_ids = store.object_ids();
    for (const auto& id : object_ids)
        if (!index.count(id)) index[id] = index.size();
    image_storage.assign(index.size(), Image{});
    for (const auto& [id, i] : index) image_storage[i] = store.load_image(id);
    for (const auto& id : object_ids) {
        set.objects.push_back(store.load_object(id));
        set.object_images.push_back(&image_storage[index.at(id)]);
    }
    for (const auto& r : set.records) {
        set.masks.push_back(store.load_mask(r));
        set.images.push_back(&image_storage[index.at(r.image_id)]);
        if (!set.masks.back().same_shape(BinaryMask(set.images.back()->height, set.images.back()->width)))
            throw ContractViolation("store mask '" + r.mask_path + "' does not match its image size");
    }
    return set;
}

namespace {

double train_one(const Image& image, const BinaryMask& target, std::optional<double> g, const SegmenterState& state,
                 const TrainConfig& cfg, std::mt19937_64& rng, SegmenterParams& grads) {
    if (cfg.augment) {
        const int t = std::uniform_int_distribution<int>(0, 7)(rng);
        return iterative_training_step(dihedral(image, t), dihedral(target, t), g, state, cfg, rng, &grads).loss;
    }
    return iterative_training_step(image, target, g, state, cfg, rng, &grads).loss;
}

} // namespace

TrainResult train(const TrainingSet& set, SegmenterState model, const TrainConfig& cfg, const TrainHooks& hooks) {
    cfg.validate();
    if (set.records.empty()) throw EmptyStoreError("cannot train on an empty proposal store");
    if (!model.adapted()) throw ContractViolation("granularity training needs an adapted model");
    if (cfg.object_replay > 0.0 && set.objects.empty())
        throw ContractViolation("object replay requested but the store holds no object masks");
    const GranularitySampler sampler(set.records, model.config.granularity_bins, cfg.sampling);
    std::mt19937_64 rng(cfg.seed);
    // Indices past the record list address replayed objects.
    const size_t n = set.records.size();
    const auto draw = [&](std::mt19937_64& r) {
        if (cfg.object_replay > 0.0 && std::uniform_real_distribution<double>(0.0, 1.0)(r) < cfg.object_replay)
            return n + std::uniform_int_distribution<size_t>(0, set.objects.size() - 1)(r);
        return sampler.draw(r);
    };
    return run_training(
        std::move(model), cfg, n, draw,
        [&](size_t i, const SegmenterState& state, std::mt19937_64& r, SegmenterParams& grads) {
            if (i >= n) return train_one(*set.object_images[i - n], set.objects[i - n], 1.0, state, cfg, r, grads);
            return train_one(*set.images[i], set.masks[i], set.records[i].granularity.combined, state, cfg, r, grads);
        },
        rng, hooks);
}

TrainResult train(const ProposalStore& store, SegmenterState model, const TrainConfig& cfg, const TrainHooks& hooks) {
    std::vector<Image> images;
    const TrainingSet set = load_training_set(store, images);
    return train(set, std::move(model), cfg, hooks);
}

TrainResult pretrain_object_level(const std::vector<Scene>& scenes, SegmenterState model, const TrainConfig& cfg,
                                  const TrainHooks& hooks) {
    cfg.validate();
    if (scenes.empty()) throw ContractViolation("pretraining needs at least one scene");
    if (model.adapted()) throw ContractViolation("object-level pretraining expects an un-adapted model");
    std::mt19937_64 rng(cfg.seed);
    // Epoch-style pass: a fresh permutation each time the previous one is used up.
    std::vector<size_t> order(scenes.size());
    size_t cursor = order.size();
    const auto draw = [&](std::mt19937_64& r) {
        if (cursor == order.size()) {
            std::iota(order.begin(), order.end(), size_t{0});
            std::shuffle(order.begin(), order.end(), r);
            cursor = 0;
        }
        return order[cursor++];
    };
    return run_training(
        std::move(model), cfg, scenes.size(), draw,
        [&](size_t i, const SegmenterState& state, std::mt19937_64& r, SegmenterParams& grads) {
            return train_one(scenes[i].image, scenes[i].object, std::nullopt, state, cfg, r, grads);
        },
        rng, hooks);
}

} // namespace granseg
