#include "granseg/lora.hpp"

#include <cstring>
#include <fstream>
#include <map>
#include <random>

namespace granseg {

using json = nlohmann::json;

LoraLayer LoraLayer::wrap(Mat w, int rank, double init_std, std::uint64_t seed) {
    if (w.rows() != w.cols()) throw ContractViolation("lora: base weight must be square");
    if (rank < 1 || rank >= w.rows()) throw ContractViolation("lora: rank must satisfy 1 <= r < d");
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> dist(0.0, init_std > 0.0 ? init_std : 1.0 / rank);
    LoraLayer layer;
    layer.a.resize(rank, w.cols());
    for (Eigen::Index j = 0; j < layer.a.cols(); ++j)
        for (Eigen::Index i = 0; i < rank; ++i) layer.a(i, j) = dist(rng);
    layer.b = Mat::Zero(w.rows(), rank);
    layer.w = std::move(w);
    return layer;
}

Eigen::VectorXd lora_forward(const LoraLayer& layer, const Eigen::VectorXd& x) {
    if (x.size() != layer.w.cols())
        throw ContractViolation("lora_forward: input length " + std::to_string(x.size()) + " != " +
                                std::to_string(layer.w.cols()));
    return layer.w * x + layer.b * (layer.a * x);
}

SegmenterState inject_lora(SegmenterState model, const LoraConfig& cfg) {
    if (model.adapted()) throw ContractViolation("inject_lora: model already carries adapters");
    std::uint64_t seed = cfg.seed;
    for (auto& block : model.params.blocks) {
        auto q = LoraLayer::wrap(block.wq, cfg.rank, cfg.init_std, seed++);
        auto k = LoraLayer::wrap(block.wk, cfg.rank, cfg.init_std, seed++);
        block.lora_q = LoraAdapter{std::move(q.a), std::move(q.b)};
        block.lora_k = LoraAdapter{std::move(k.a), std::move(k.b)};
    }
    model.lora_rank = cfg.rank;
    model.trainable.clear();
    model.params.for_each([&](const std::string& name, const Mat&) {
        if (name.find(".lora_") != std::string::npos || name == "gran_embed") model.trainable.insert(name);
        if (cfg.train_prompt_patch && name.rfind("prompt_patch.", 0) == 0) model.trainable.insert(name);
    });
    return model;
}

size_t adapter_parameter_count(const SegmenterState& state) {
    size_t n = 0;
    state.params.for_each([&](const std::string& name, const Mat& m) {
        if (name.find(".lora_") != std::string::npos) n += static_cast<size_t>(m.size());
    });
    return n;
}

namespace {
constexpr char kAdapterMagic[8] = {'G', 'S', 'E', 'G', 'A', 'D', 'P', 'T'};
}

void save_adapter(const SegmenterState& state, const std::filesystem::path& path) {
    if (!state.adapted()) throw ContractViolation("save_adapter: model has no adapters");
    json header;
    header["kind"] = "adapter";
    header["config"] = state.config;
    header["lora_rank"] = state.lora_rank;
    header["trainable"] = state.trainable;
    json names = json::array();
    state.params.for_each([&](const std::string& name, const Mat& m) {
        if (state.is_trainable(name)) names.push_back({{"name", name}, {"rows", m.rows()}, {"cols", m.cols()}});
    });
    header["tensors"] = names;
    const std::string text = header.dump();

    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write adapter '" + path.string() + "'");
    out.write(kAdapterMagic, sizeof kAdapterMagic);
    const std::uint64_t len = text.size();
    out.write(reinterpret_cast<const char*>(&len), sizeof len);
    out.write(text.data(), static_cast<std::streamsize>(len));
    state.params.for_each([&](const std::string& name, const Mat& m) {
        if (state.is_trainable(name))
            out.write(reinterpret_cast<const char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(double)));
    });
    if (!out) throw IoError("short write to adapter '" + path.string() + "'");
}

SegmenterState load_adapter(const SegmenterState& base, const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open adapter '" + path.string() + "'");
    char magic[8];
    std::uint64_t len = 0;
    in.read(magic, sizeof magic);
    in.read(reinterpret_cast<char*>(&len), sizeof len);
    if (!in || std::memcmp(magic, kAdapterMagic, sizeof magic) != 0 || len > (1u << 26))
        throw IoError("'" + path.string() + "' is not an adapter checkpoint");
    std::string text(len, '\0');
    in.read(text.data(), static_cast<std::streamsize>(len));
    json header;
    try {
        header = json::parse(text);
    } catch (const json::exception& e) {
        throw IoError("corrupt adapter header: " + std::string(e.what()));
    }
    const auto cfg = header.at("config").get<SegmenterConfig>();
    if (!(cfg == base.config)) throw ConfigMismatch("adapter was trained for a different base configuration");

    LoraConfig lc;
    lc.rank = header.at("lora_rank").get<int>();
    SegmenterState state = inject_lora(base, lc);
    state.trainable = header.at("trainable").get<std::set<std::string>>();

    std::map<std::string, Mat*> by_name;
    state.params.for_each([&](const std::string& name, Mat& m) { by_name[name] = &m; });
    for (const auto& t : header.at("tensors")) {
        const auto name = t.at("name").get<std::string>();
        auto it = by_name.find(name);
        if (it == by_name.end()) throw IoError("adapter tensor '" + name + "' does not exist in the model");
        Mat& m = *it->second;
        if (t.at("rows") != m.rows() || t.at("cols") != m.cols())
            throw IoError("adapter tensor '" + name + "' has the wrong shape");
        in.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(double)));
    }
    if (!in) throw IoError("truncated adapter '" + path.string() + "'");
    return state;
}

} // namespace granseg
