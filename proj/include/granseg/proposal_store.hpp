#pragma once

#include "granseg/core_types.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

namespace granseg {

/// One line of the store index.
struct StoreRecord {
    std::string image_id;
    std::string object_id;
    std::string proposal_id;
    GranularityRecord granularity;
    /// Relative to the store root, e.g. "masks/<proposal_id>.png".
    std::string mask_path;
    ProposalSource source = ProposalSource::loop_prediction;

    friend bool operator==(const StoreRecord& a, const StoreRecord& b) {
        return a.image_id == b.image_id && a.object_id == b.object_id && a.proposal_id == b.proposal_id &&
               a.granularity.scale_granularity == b.granularity.scale_granularity &&
               a.granularity.semantic_granularity == b.granularity.semantic_granularity &&
               a.granularity.combined == b.granularity.combined && a.granularity.lambda == b.granularity.lambda &&
               a.mask_path == b.mask_path && a.source == b.source;
    }
};

std::string record_to_line(const StoreRecord& r);
/// Throws ContractViolation on malformed input.
StoreRecord record_from_line(const std::string& line);

struct ScanDiagnostic {
    size_t line_number = 0; // 1-based
    std::string message;
};

/// On-disk layout:
///   index.jsonl          one JSON record per line, append-only
///   masks/<id>.png       proposal masks, 8-bit {0,255}
///   images/<id>.png      source images referenced by image_id
///   objects/<id>.png     whole-object mask of each image (not indexed)
class ProposalStore {
  public:
    /// Creates the directory layout if needed; existing records are kept.
    explicit ProposalStore(std::filesystem::path root);

    const std::filesystem::path& root() const { return root_; }
    std::filesystem::path index_path() const { return root_ / "index.jsonl"; }

    /// Writes images/<id>.png unless it already exists.
    void put_image(const Image& image);
    /// Writes objects/<image_id>.png (overwrites).
    void put_object(const std::string& image_id, const BinaryMask& object);
    /// Image ids with a stored object mask, sorted.
    std::vector<std::string> object_ids() const;
    BinaryMask load_object(const std::string& image_id) const;

    /// Writes the mask file, then appends the index line (flushed per line).
    StoreRecord append(StoreRecord record, const BinaryMask& mask);
    /// Appends an index line for a record whose mask is already on disk.
    void append(const StoreRecord& record);

    /// Visits records in insertion order; unreadable lines are reported and skipped.
    void scan(const std::function<void(const StoreRecord&)>& on_record,
              const std::function<void(const ScanDiagnostic&)>& on_error = {}) const;
    std::vector<StoreRecord> scan_all(std::vector<ScanDiagnostic>* errors = nullptr) const;

    BinaryMask load_mask(const StoreRecord& record) const;
    Image load_image(const std::string& image_id) const;

  private:
    std::filesystem::path root_;
};

enum class SamplingMode {
    /// Each record weighted by 1 / (number of records in its granularity bin).
    inverse,
    /// Every record equally likely.
    uniform,
};

SamplingMode sampling_mode_from_string(const std::string& s);

struct SamplerState {
    std::vector<size_t> bin_counts;
    std::vector<int> record_bins;
};

SamplerState build_sampler_state(const std::vector<StoreRecord>& records, int bins);

/// Seeded draw of one record index according to `mode`.
class GranularitySampler {
  public:
    GranularitySampler(const std::vector<StoreRecord>& records, int bins, SamplingMode mode = SamplingMode::inverse);

    size_t draw(std::mt19937_64& rng) const;
    double probability(size_t record) const { return probabilities_[record]; }
    const SamplerState& state() const { return state_; }
    size_t size() const { return probabilities_.size(); }

  private:
    SamplerState state_;
    std::vector<double> probabilities_;
    std::vector<double> cumulative_;
};

/// Convenience single draw; throws EmptyStoreError for an empty record list.
const StoreRecord& sample(const SamplerState& state, const std::vector<StoreRecord>& records, std::uint64_t rng_seed,
                          SamplingMode mode = SamplingMode::inverse);

} // namespace granseg
