// Command-line front end: one subcommand per pipeline stage plus the session service.

#include "granseg/agg.hpp"
#include "granseg/dataset.hpp"
#include "granseg/eval_harness.hpp"
#include "granseg/gcl_train.hpp"
#include "granseg/lora.hpp"
#include "granseg/proposal_store.hpp"
#include "granseg/segmenter.hpp"
#include "granseg/serve.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <atomic>
#include <csignal>
#include <fstream>
#include <iostream>

using namespace granseg;

namespace {

struct ModelFlags {
    SegmenterConfig config;
    std::uint64_t seed = 0;

    void add(CLI::App* app) {
        app->add_option("--image-size", config.image_size, "Model input side in pixels")->capture_default_str();
        app->add_option("--patch-size", config.patch_size)->capture_default_str();
        app->add_option("--embed-dim", config.embed_dim)->capture_default_str();
        app->add_option("--depth", config.depth)->capture_default_str();
        app->add_option("--heads", config.num_heads)->capture_default_str();
        app->add_option("--bins", config.granularity_bins, "Granularity embedding bins")->capture_default_str();
        app->add_option("--init-seed", seed, "Parameter initialization seed")->capture_default_str();
    }
};

struct TrainFlags {
    TrainConfig cfg;
    std::string metrics;
    bool full_schedule = false;
    bool no_augment = false;

    void add(CLI::App* app, bool replay) {
        app->add_option("--epochs", cfg.epochs)->capture_default_str();
        app->add_option("--lr", cfg.lr)->capture_default_str();
        app->add_option("--lr-decay-epoch", cfg.lr_decay_epoch)->capture_default_str();
        app->add_option("--lr-decay-factor", cfg.lr_decay_factor)->capture_default_str();
        app->add_option("--max-iter-clicks", cfg.max_iter_clicks)->capture_default_str();
        app->add_option("--gamma", cfg.focal_gamma, "Focal exponent of the loss")->capture_default_str();
        app->add_option("--batch-size", cfg.batch_size)->capture_default_str();
        app->add_option("--steps-per-epoch", cfg.steps_per_epoch, "0 = dataset size / batch size")
            ->capture_default_str();
        app->add_option("--seed", cfg.seed)->capture_default_str();
        app->add_flag("--no-augment", no_augment, "Disable random flips and transposes");
        app->add_flag("--full-schedule", full_schedule,
                      "55 epochs at 5e-5, decayed tenfold at epoch 50 (explicit flags still win)");
        if (replay)
            app->add_option("--object-replay", cfg.object_replay,
                            "Probability of replaying a whole object at granularity 1.0")
                ->capture_default_str();
        app->add_option("--metrics", metrics, "Append per-step JSON lines to this file");
    }

    TrainConfig resolve(const CLI::App* app) const {
        TrainConfig c = cfg;
        if (full_schedule) {
            const TrainConfig p = TrainConfig::full_scale();
            if (!app->count("--epochs")) c.epochs = p.epochs;
            if (!app->count("--lr")) c.lr = p.lr;
            if (!app->count("--lr-decay-epoch")) c.lr_decay_epoch = p.lr_decay_epoch;
            if (!app->count("--lr-decay-factor")) c.lr_decay_factor = p.lr_decay_factor;
            if (!app->count("--object-replay")) c.object_replay = p.object_replay;
            c.augment = false;
        }
        if (no_augment) c.augment = false;
        if (!app->count("--lr-decay-epoch") && !full_schedule) c.lr_decay_epoch = std::min(c.lr_decay_epoch, c.epochs);
        return c;
    }
};

TrainHooks make_hooks(const std::string& metrics, std::ofstream& file) {
    TrainHooks hooks;
    if (!metrics.empty()) {
        file.open(metrics, std::ios::app);
        if (!file) throw IoError("cannot open metrics file '" + metrics + "'");
        hooks.metrics = &file;
    }
    hooks.on_epoch = [](int epoch, double loss) { std::cerr << "epoch " << epoch << " mean loss " << loss << "\n"; };
    return hooks;
}

SegmenterState load_model(const std::string& ckpt, const std::string& adapter) {
    SegmenterState base = load_params(ckpt);
    return adapter.empty() ? base : load_adapter(base, adapter);
}

void print_json(const nlohmann::json& j) {
    std::cout << j.dump(2) << "\n";
}

std::atomic<SessionServer*> g_server{nullptr};

extern "C" void on_signal(int) {
    if (auto* s = g_server.load()) s->stop();
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Granularity-controllable interactive segmentation"};
    app.set_config("--config", "", "TOML/INI file with values for any flag");
    app.require_subcommand(1);

    // synth
    auto* synth = app.add_subcommand("synth", "Export seeded synthetic scenes to a data folder");
    std::string synth_out;
    int synth_count = 100, synth_canvas = 128;
    std::uint64_t synth_seed = 1;
    synth->add_option("--out", synth_out)->required();
    synth->add_option("--count", synth_count)->capture_default_str()->check(CLI::PositiveNumber);
    synth->add_option("--canvas", synth_canvas)->capture_default_str();
    synth->add_option("--seed", synth_seed)->capture_default_str();

    // pretrain
    auto* pretrain = app.add_subcommand("pretrain", "Object-level training of a fresh segmenter");
    std::string pre_data, pre_out;
    ModelFlags pre_model;
    TrainFlags pre_train;
    pretrain->add_option("--data", pre_data)->required()->check(CLI::ExistingDirectory);
    pretrain->add_option("--out", pre_out)->required();
    pre_model.add(pretrain);
    pre_train.add(pretrain, false);

    // agg-generate
    auto* agg = app.add_subcommand("agg-generate", "Mine part proposals and their granularity into a store");
    std::string agg_ckpt, agg_data, agg_store;
    AggConfig agg_cfg;
    bool agg_gt = false;
    agg->add_option("--ckpt", agg_ckpt, "Object-level base checkpoint")->envname("GRANSEG_CKPT")->required();
    agg->add_option("--data", agg_data)->required()->check(CLI::ExistingDirectory);
    agg->add_option("--store", agg_store)->required();
    agg->add_option("--seed", agg_cfg.loop.rng_seed)->capture_default_str();
    agg->add_option("--min-iters", agg_cfg.loop.min_iters)->capture_default_str();
    agg->add_option("--max-iters", agg_cfg.loop.max_iters)->capture_default_str();
    agg->add_option("--lambda", agg_cfg.estimator.lambda)->capture_default_str()->check(CLI::Range(0.0, 1.0));
    agg->add_option("--d-min", agg_cfg.clicks.d_min)->capture_default_str();
    agg->add_option("--min-area", agg_cfg.post.min_area)->capture_default_str();
    agg->add_flag("--with-gt-parts", agg_gt, "Also store annotated parts found under parts/");

    // gcl
    auto* gcl = app.add_subcommand("gcl", "Granularity-controllable fine-tuning with low-rank adapters");
    std::string gcl_base, gcl_store, gcl_out, gcl_sampling = "inverse";
    std::optional<double> gcl_lambda;
    LoraConfig lora;
    TrainFlags gcl_train;
    gcl->add_option("--base", gcl_base)->envname("GRANSEG_CKPT")->required();
    gcl->add_option("--store", gcl_store)->required()->check(CLI::ExistingDirectory);
    gcl->add_option("--out", gcl_out, "Adapter checkpoint")->required();
    gcl->add_option("--rank", lora.rank)->capture_default_str();
    gcl->add_option("--lambda", gcl_lambda, "Recombine stored scale/semantic granularity with this weight")
        ->check(CLI::Range(0.0, 1.0));
    gcl->add_option("--sampling", gcl_sampling)->capture_default_str()->check(CLI::IsMember({"inverse", "uniform"}));
    gcl->add_flag("--train-prompt-patch", lora.train_prompt_patch, "Also fine-tune the prompt patch embedding");
    gcl_train.add(gcl, true);

    // eval
    auto* eval = app.add_subcommand("eval", "Click-protocol evaluation and granularity sweeps");
    std::string eval_ckpt, eval_adapter, eval_data, eval_curves, eval_summary;
    std::optional<double> eval_g;
    bool eval_sweep = false;
    std::optional<double> eval_parts;
    EvalConfig eval_cfg;
    eval->add_option("--ckpt", eval_ckpt)->envname("GRANSEG_CKPT")->required();
    eval->add_option("--adapter", eval_adapter, "Adapter checkpoint applied on top of --ckpt");
    eval->add_option("--data", eval_data)->required()->check(CLI::ExistingDirectory);
    auto* g_opt = eval->add_option("--granularity", eval_g)->check(CLI::Range(0.0, 1.0));
    auto* sweep_opt = eval->add_flag("--sweep", eval_sweep, "Evaluate every sweep granularity");
    g_opt->excludes(sweep_opt);
    eval->add_option("--curves", eval_curves, "IoU-granularity curve CSV (needs --sweep)")->needs(sweep_opt);
    eval->add_option("--summary", eval_summary, "Write the JSON summary here as well");
    eval->add_option("--parts", eval_parts, "Evaluate annotated parts up to this granularity instead of objects");
    eval->add_option("--max-clicks", eval_cfg.max_clicks)->capture_default_str();
    eval->add_option("--thresholds", eval_cfg.iou_thresholds)->capture_default_str();
    eval->add_option("--curve-k", eval_cfg.curve_ks)->capture_default_str();

    // serve
    auto* serve = app.add_subcommand("serve", "Start the interactive session service");
    std::string serve_ckpt, serve_adapter, serve_host = "127.0.0.1";
    int serve_port = 8080, serve_ttl = 30;
    serve->add_option("--ckpt", serve_ckpt)->envname("GRANSEG_CKPT")->required();
    serve->add_option("--adapter", serve_adapter);
    serve->add_option("--port", serve_port)->capture_default_str();
    serve->add_option("--host", serve_host)->capture_default_str();
    serve->add_option("--ttl-minutes", serve_ttl)->capture_default_str()->check(CLI::PositiveNumber);

    CLI11_PARSE(app, argc, argv);

    try {
        if (*synth) {
            SyntheticConfig cfg;
            cfg.canvas = synth_canvas;
            export_folder(generate_scenes(synth_seed, synth_count, cfg), synth_out);
            std::cerr << "wrote " << synth_count << " scenes to " << synth_out << "\n";
        } else if (*pretrain) {
            pre_model.config.validate();
            const auto scenes = load_folder(pre_data, pre_model.config.image_size);
            std::ofstream metrics;
            const auto hooks = make_hooks(pre_train.metrics, metrics);
            auto result = pretrain_object_level(scenes, init_segmenter(pre_model.config, pre_model.seed),
                                                pre_train.resolve(pretrain), hooks);
            save_params(result.state, pre_out);
            print_json({{"epoch_losses", result.epoch_losses}, {"checkpoint", pre_out}});
        } else if (*agg) {
            const SegmenterState base = load_params(agg_ckpt);
            if (base.adapted()) throw ContractViolation("agg-generate needs an object-level base checkpoint");
            const auto scenes = load_folder(agg_data, base.config.image_size);
            const Segmenter model(base);
            auto mined = mine_proposals(scenes, model, agg_cfg, [](size_t done, size_t total) {
                if (done == total || done % 25 == 0) std::cerr << "mined " << done << "/" << total << " objects\n";
            });
            if (agg_gt) {
                const auto gt = ground_truth_proposals(scenes, model, agg_cfg.estimator);
                mined.insert(mined.end(), gt.begin(), gt.end());
            }
            ProposalStore store(agg_store);
            write_to_store(store, scenes, mined);
            print_json({{"objects", scenes.size()}, {"records", mined.size()}, {"store", agg_store}});
        } else if (*gcl) {
            const SegmenterState base = load_params(gcl_base);
            TrainConfig cfg = gcl_train.resolve(gcl);
            cfg.sampling = sampling_mode_from_string(gcl_sampling);
            lora.seed = cfg.seed;
            std::vector<Image> images;
            TrainingSet set = load_training_set(ProposalStore(gcl_store), images);
            if (gcl_lambda)
                for (auto& r : set.records)
                    r.granularity = GranularityRecord::combine(r.granularity.scale_granularity,
                                                               r.granularity.semantic_granularity, *gcl_lambda);
            std::ofstream metrics;
            const auto hooks = make_hooks(gcl_train.metrics, metrics);
            auto result = train(set, inject_lora(base, lora), cfg, hooks);
            save_adapter(result.state, gcl_out);
            print_json({{"epoch_losses", result.epoch_losses}, {"adapter", gcl_out}});
        } else if (*eval) {
            std::erase_if(eval_cfg.curve_ks, [&](int k) { return k > eval_cfg.max_clicks; });
            const Segmenter model(load_model(eval_ckpt, eval_adapter));
            if (eval_sweep && !model.state().adapted())
                throw ContractViolation("--sweep needs an adapted model (pass --adapter)");
            const auto scenes = load_folder(eval_data, model.config().image_size);
            const auto instances = eval_parts ? part_instances(scenes, *eval_parts) : object_instances(scenes);
            if (instances.empty()) throw ContractViolation("no evaluation instances found");
            nlohmann::json summary;
            if (eval_sweep) {
                const auto sweep = evaluate_sweep(instances, model, eval_cfg);
                if (!eval_curves.empty()) write_curve_csv(eval_curves, curve_rows(sweep, eval_cfg));
                summary = summary_json(sweep, eval_cfg);
            } else {
                std::optional<double> g = eval_g;
                if (!g && model.state().adapted()) g = 1.0;
                summary = summary_json(summarize(evaluate_dataset(instances, model, g, eval_cfg), eval_cfg), eval_cfg);
                summary["granularity"] = g ? nlohmann::json(*g) : nlohmann::json(nullptr);
            }
            if (!eval_summary.empty()) {
                std::ofstream out(eval_summary);
                if (!out) throw IoError("cannot write summary '" + eval_summary + "'");
                out << summary.dump(2) << "\n";
            }
            print_json(summary);
        } else if (*serve) {
            auto model = std::make_shared<const Segmenter>(load_model(serve_ckpt, serve_adapter));
            SessionManager sessions(model, std::chrono::minutes(serve_ttl));
            SessionServer server(sessions);
            g_server = &server;
            std::signal(SIGINT, on_signal);
            std::signal(SIGTERM, on_signal);
            std::cerr << "listening on " << serve_host << ":" << serve_port << "\n";
            if (!server.listen(serve_host, serve_port)) throw IoError("cannot bind " + serve_host + ":" + std::to_string(serve_port));
            g_server = nullptr;
        }
    } catch (const IoError& e) {
        std::cerr << "I/O error: " << e.what() << "\n";
        return 3;
    } catch (const ConfigMismatch& e) {
        std::cerr << "configuration mismatch: " << e.what() << "\n";
        return 4;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
