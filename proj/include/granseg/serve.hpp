#pragma once

#include "granseg/core_types.hpp"
#include "granseg/segmenter.hpp"

#include <chrono>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>

namespace granseg {

/// Machine-readable service errors. `code` travels in the response body.
class ServiceError : public Error {
  public:
    ServiceError(int http_status, std::string code, const std::string& message)
        : Error(message), status(http_status), code(std::move(code)) {}
    int status;
    std::string code;
};

using Clock = std::chrono::system_clock;

struct SessionSummary {
    std::string session_id;
    int height = 0;
    int width = 0;
    ClickSet clicks;
    double granularity = 1.0;
    size_t mask_area = 0;
    Clock::time_point created_at, updated_at;
};

/// In-memory interactive sessions over one frozen model.
///
/// Clicks arrive in original image coordinates and are mapped onto the model
/// raster; masks are returned at the original size. A session's mask always
/// equals a chained replay of its click list from an empty mask prompt at its
/// current granularity.
class SessionManager {
  public:
    explicit SessionManager(std::shared_ptr<const Segmenter> model, std::chrono::seconds ttl = std::chrono::minutes(30),
                            std::function<Clock::time_point()> now = [] { return Clock::now(); });

    std::string create(const Image& image);
    BinaryMask add_click(const std::string& id, const Click& click);
    BinaryMask set_granularity(const std::string& id, double value);
    BinaryMask undo(const std::string& id);
    void reset(const std::string& id);
    SessionSummary summary(const std::string& id);
    /// Current mask at the original image size.
    BinaryMask mask(const std::string& id);
    void remove(const std::string& id);

    /// Drops sessions idle for longer than the TTL; returns how many.
    size_t evict_expired();
    size_t size() const;

    /// Mask a fresh session would hold after these clicks at this granularity.
    BinaryMask replay(const Image& image, const ClickSet& clicks, double granularity) const;

    const Segmenter& model() const { return *model_; }

  private:
    struct Session {
        std::mutex mutex;
        std::string id;
        Image original;
        Image scaled;
        ClickSet clicks; // original coordinates
        double granularity = 1.0;
        ProbabilityMap prev; // model raster
        BinaryMask last_mask; // original size
        Clock::time_point created_at, updated_at;
    };

    std::shared_ptr<Session> find(const std::string& id);
    Click to_model(const Session& s, const Click& c) const;
    std::optional<double> prompt(double granularity) const;
    BinaryMask to_original(const Session& s, const ProbabilityMap& p) const;
    void step(Session& s, const ClickSet& model_clicks) const;
    void rerun(Session& s) const;

    std::shared_ptr<const Segmenter> model_;
    std::chrono::seconds ttl_;
    std::function<Clock::time_point()> now_;
    mutable std::mutex mutex_;
    std::map<std::string, std::shared_ptr<Session>> sessions_;
    std::uint64_t counter_ = 0;
};

/// RLE wire form: {"format":"rle","height":h,"width":w,"counts":[...]}; runs
/// alternate starting with background over row-major pixels.
std::string mask_to_json(const BinaryMask& m, bool png);

/// HTTP front end for a SessionManager.
class SessionServer {
  public:
    explicit SessionServer(SessionManager& sessions);
    ~SessionServer();

    /// Binds and serves until stop(); returns false if binding failed.
    bool listen(const std::string& host, int port);
    /// Binds an ephemeral port and returns it (or -1); call serve() afterwards.
    int bind_any(const std::string& host);
    bool serve();
    void stop();
    void wait_until_ready() const;

  private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

} // namespace granseg
