#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace granseg {

// ---------------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------------

class Error : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

/// A caller broke a documented precondition (shape mismatch, out-of-range value...).
class ContractViolation : public Error {
  public:
    using Error::Error;
};

class EmptyMaskError : public Error {
  public:
    using Error::Error;
};

/// Prediction and target agree everywhere, so no corrective click exists.
class NoErrorRegion : public Error {
  public:
    using Error::Error;
};

class IoError : public Error {
  public:
    using Error::Error;
};

class ConfigMismatch : public Error {
  public:
    using Error::Error;
};

class EmptyStoreError : public Error {
  public:
    using Error::Error;
};

// ---------------------------------------------------------------------------
// Rasters
// ---------------------------------------------------------------------------

/// RGB image, interleaved row-major, channel values in [0,1].
struct Image {
    std::string id;
    int height = 0;
    int width = 0;
    std::vector<float> pixels;

    Image() = default;
    Image(std::string id, int height, int width);
    Image(std::string id, int height, int width, std::vector<float> pixels);

    float at(int row, int col, int channel) const {
        return pixels[(static_cast<size_t>(row) * width + col) * 3 + channel];
    }
    float& at(int row, int col, int channel) {
        return pixels[(static_cast<size_t>(row) * width + col) * 3 + channel];
    }

    /// Throws ContractViolation unless h,w >= 16 and every value is in [0,1].
    void validate() const;
};

enum class MaskRole { ground_truth, proposal, prediction };

struct BinaryMask {
    int height = 0;
    int width = 0;
    std::vector<std::uint8_t> pixels; // 0 or 1
    MaskRole role = MaskRole::prediction;

    BinaryMask() = default;
    BinaryMask(int height, int width, MaskRole role = MaskRole::prediction);

    bool at(int row, int col) const { return pixels[static_cast<size_t>(row) * width + col] != 0; }
    void set(int row, int col, bool v) { pixels[static_cast<size_t>(row) * width + col] = v ? 1 : 0; }
    size_t size() const { return pixels.size(); }

    size_t area() const;
    bool empty() const { return area() == 0; }
    bool same_shape(const BinaryMask& o) const { return height == o.height && width == o.width; }

    /// Throws EmptyMaskError for empty ground-truth/proposal masks.
    void validate() const;

    /// Pixel equality; the role tag is ignored.
    friend bool operator==(const BinaryMask& a, const BinaryMask& b) {
        return a.height == b.height && a.width == b.width && a.pixels == b.pixels;
    }
};

struct ProbabilityMap {
    int height = 0;
    int width = 0;
    std::vector<double> values;

    ProbabilityMap() = default;
    ProbabilityMap(int height, int width, double fill = 0.0)
        : height(height), width(width), values(static_cast<size_t>(height) * width, fill) {}

    double at(int row, int col) const { return values[static_cast<size_t>(row) * width + col]; }
    double& at(int row, int col) { return values[static_cast<size_t>(row) * width + col]; }

    void validate() const;
};

// ---------------------------------------------------------------------------
// Prompts and proposals
// ---------------------------------------------------------------------------

enum class Polarity { positive, negative };

struct Click {
    int row = 0;
    int col = 0;
    Polarity polarity = Polarity::positive;

    bool is_positive() const { return polarity == Polarity::positive; }
    friend bool operator==(const Click&, const Click&) = default;
};

using ClickSet = std::vector<Click>;

enum class ProposalSource { loop_prediction, complement, ground_truth_part };

std::string to_string(ProposalSource s);
ProposalSource proposal_source_from_string(const std::string& s);
std::string to_string(Polarity p);
Polarity polarity_from_string(const std::string& s);

struct Proposal {
    BinaryMask mask;
    std::string parent_object_id;
    std::string proposal_id;
    ProposalSource source = ProposalSource::loop_prediction;
};

struct GranularityRecord {
    double scale_granularity = 1.0;
    double semantic_granularity = 1.0;
    double combined = 1.0;
    double lambda = 0.5;

    /// combined = (1 - lambda) * scale + lambda * semantic.
    static GranularityRecord combine(double scale, double semantic, double lambda);
};

// ---------------------------------------------------------------------------
// Raster operations
// ---------------------------------------------------------------------------

/// |a & b| / |a | b|, 1.0 when both are empty.
double iou(const BinaryMask& a, const BinaryMask& b);

/// Foreground pixel with maximal Euclidean distance to the background (pixels
/// outside the raster count as background). Ties go to the pixel nearest the
/// centroid of the tied set, then to the smallest (row, col).
std::pair<int, int> interior_most_point(const BinaryMask& m);

/// Exact squared Euclidean distance from each pixel to the nearest background
/// pixel, with the outside of the raster treated as background. 0 on background.
std::vector<long long> squared_distance_to_background(const BinaryMask& m);

/// 4-connected component labels, 0 for background, components numbered from 1
/// in row-major order of their first pixel.
std::vector<int> label_components(const BinaryMask& m, int* num_components = nullptr);

BinaryMask largest_connected_component(const BinaryMask& m);
BinaryMask fill_holes(const BinaryMask& m);

BinaryMask mask_and(const BinaryMask& a, const BinaryMask& b);
BinaryMask mask_and_not(const BinaryMask& a, const BinaryMask& b);
bool is_subset(const BinaryMask& inner, const BinaryMask& outer);
size_t count_components(const BinaryMask& m);

} // namespace granseg
