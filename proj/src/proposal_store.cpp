#include "granseg/proposal_store.hpp"

#include "granseg/mask_io.hpp"
#include "granseg/segmenter.hpp"

#include <json.hpp>

#include <algorithm>
#include <fstream>

namespace granseg {

using json = nlohmann::json;

std::string record_to_line(const StoreRecord& r) {
    json j = {{"image_id", r.image_id},
              {"object_id", r.object_id},
              {"proposal_id", r.proposal_id},
              {"granularity",
               {{"scale_granularity", r.granularity.scale_granularity},
                {"semantic_granularity", r.granularity.semantic_granularity},
                {"combined", r.granularity.combined},
                {"lambda", r.granularity.lambda}}},
              {"mask_path", r.mask_path},
              {"source", to_string(r.source)}};
    return j.dump();
}

StoreRecord record_from_line(const std::string& line) {
    try {
        const json j = json::parse(line);
        StoreRecord r;
        r.image_id = j.at("image_id").get<std::string>();
        r.object_id = j.at("object_id").get<std::string>();
        r.proposal_id = j.at("proposal_id").get<std::string>();
        const auto& g = j.at("granularity");
        r.granularity.scale_granularity = g.at("scale_granularity").get<double>();
        r.granularity.semantic_granularity = g.at("semantic_granularity").get<double>();
        r.granularity.combined = g.at("combined").get<double>();
        r.granularity.lambda = g.at("lambda").get<double>();
        r.mask_path = j.at("mask_path").get<std::string>();
        r.source = proposal_source_from_string(j.at("source").get<std::string>());
        if (!(r.granularity.combined >= 0.0 && r.granularity.combined <= 1.0))
            throw ContractViolation("combined granularity outside [0,1]");
        return r;
    } catch (const json::exception& e) {
        throw ContractViolation(std::string("malformed store record: ") + e.what());
    }
}

ProposalStore::ProposalStore(std::filesystem::path root) : root_(std::move(root)) {
    std::filesystem::create_directories(root_ / "masks");
    std::filesystem::create_directories(root_ / "images");
}

void ProposalStore::put_object(const std::string& image_id, const BinaryMask& object) {
    write_mask_png(root_ / "objects" / (image_id + ".png"), object);
}

std::vector<std::string> ProposalStore::object_ids() const {
    std::vector<std::string> ids;
    const auto dir = root_ / "objects";
    if (!std::filesystem::is_directory(dir)) return ids;
    for (const auto& e : std::filesystem::directory_iterator(dir))
        if (e.path().extension() == ".png") ids.push_back(e.path().stem().string());
    std::sort(ids.begin(), ids.end());
    return ids;
}

BinaryMask ProposalStore::load_object(const std::string& image_id) const {
    return read_mask_png(root_ / "objects" / (image_id + ".png"), MaskRole::ground_truth);
}

void ProposalStore::put_image(const Image& image) {
    const auto path = root_ / "images" / (image.id + ".png");
    if (!std::filesystem::exists(path)) write_image_png(path, image);
}

StoreRecord ProposalStore::append(StoreRecord record, const BinaryMask& mask) {
    if (record.mask_path.empty()) record.mask_path = "masks/" + record.proposal_id + ".png";
    write_mask_png(root_ / record.mask_path, mask);
    append(record);
    return record;
}

void ProposalStore::append(const StoreRecord& record) {
    std::ofstream out(index_path(), std::ios::app);
    if (!out) throw IoError("cannot append to '" + index_path().string() + "'");
    out << record_to_line(record) << '\n';
    out.flush();
    if (!out) throw IoError("short write to '" + index_path().string() + "'");
}

void ProposalStore::scan(const std::function<void(const StoreRecord&)>& on_record,
                         const std::function<void(const ScanDiagnostic&)>& on_error) const {
    std::ifstream in(index_path());
    if (!in) return; // no index yet: empty store
    std::string line;
    size_t number = 0;
    while (std::getline(in, line)) {
        ++number;
        if (line.empty()) continue;
        try {
            on_record(record_from_line(line));
        } catch (const ContractViolation& e) {
            if (on_error) on_error({number, e.what()});
        }
    }
}

std::vector<StoreRecord> ProposalStore::scan_all(std::vector<ScanDiagnostic>* errors) const {
    std::vector<StoreRecord> out;
    scan([&](const StoreRecord& r) { out.push_back(r); },
         [&](const ScanDiagnostic& d) {
             if (errors) errors->push_back(d);
         });
    return out;
}

BinaryMask ProposalStore::load_mask(const StoreRecord& record) const {
    auto m = read_mask_png(root_ / record.mask_path, MaskRole::proposal);
    if (m.empty()) throw EmptyMaskError("store mask '" + record.mask_path + "' is empty");
    return m;
}

Image ProposalStore::load_image(const std::string& image_id) const {
    return read_image_png(root_ / "images" / (image_id + ".png"), image_id);
}

SamplingMode sampling_mode_from_string(const std::string& s) {
    if (s == "inverse") return SamplingMode::inverse;
    if (s == "uniform") return SamplingMode::uniform;
    throw ContractViolation("unknown sampling mode '" + s + "' (expected inverse|uniform)");
}

SamplerState build_sampler_state(const std::vector<StoreRecord>& records, int bins) {
    SamplerState s;
    s.bin_counts.assign(static_cast<size_t>(bins), 0);
    for (const auto& r : records) {
        const int b = granularity_bin(r.granularity.combined, bins);
        s.record_bins.push_back(b);
        ++s.bin_counts[static_cast<size_t>(b)];
    }
    return s;
}

GranularitySampler::GranularitySampler(const std::vector<StoreRecord>& records, int bins, SamplingMode mode)
    : state_(build_sampler_state(records, bins)) {
    if (records.empty()) throw EmptyStoreError("cannot sample from an empty proposal store");
    probabilities_.resize(records.size());
    for (size_t i = 0; i < records.size(); ++i)
        probabilities_[i] =
            mode == SamplingMode::inverse ? 1.0 / static_cast<double>(state_.bin_counts[state_.record_bins[i]]) : 1.0;
    double total = 0.0;
    for (double w : probabilities_) total += w;
    double acc = 0.0;
    cumulative_.resize(records.size());
    for (size_t i = 0; i < records.size(); ++i) {
        probabilities_[i] /= total;
        acc += probabilities_[i];
        cumulative_[i] = acc;
    }
    cumulative_.back() = 1.0;
}

size_t GranularitySampler::draw(std::mt19937_64& rng) const {
    const double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
    const auto it = std::upper_bound(cumulative_.begin(), cumulative_.end(), u);
    return std::min(static_cast<size_t>(it - cumulative_.begin()), cumulative_.size() - 1);
}

const StoreRecord& sample(const SamplerState& state, const std::vector<StoreRecord>& records, std::uint64_t rng_seed,
                          SamplingMode mode) {
    if (records.empty()) throw EmptyStoreError("cannot sample from an empty proposal store");
    if (state.record_bins.size() != records.size())
        throw ContractViolation("sampler state was built for a different record list");
    const GranularitySampler sampler(records, static_cast<int>(state.bin_counts.size()), mode);
    std::mt19937_64 rng(rng_seed);
    return records[sampler.draw(rng)];
}

} // namespace granseg
