#include "granseg/serve.hpp"

#include "granseg/mask_io.hpp"

#include <httplib.h>
#include <json.hpp>

#include <cmath>
#include <ctime>
#include <iomanip>
#include <random>
#include <sstream>

namespace granseg {

using json = nlohmann::json;

SessionManager::SessionManager(std::shared_ptr<const Segmenter> model, std::chrono::seconds ttl,
                               std::function<Clock::time_point()> now)
    : model_(std::move(model)), ttl_(ttl), now_(std::move(now)) {
    if (!model_) throw ContractViolation("session manager needs a model");
}

std::string SessionManager::create(const Image& image) {
    try {
        image.validate();
    } catch (const Error& e) {
        throw ServiceError(400, "invalid_image", e.what());
    }
    evict_expired();
    const int s = model_->config().image_size;
    auto session = std::make_shared<Session>();
    session->original = image;
    session->scaled = image.height == s && image.width == s ? image : resize_bilinear(image, s, s);
    session->prev = ProbabilityMap(s, s);
    session->last_mask = BinaryMask(image.height, image.width);
    session->created_at = session->updated_at = now_();

    std::lock_guard lock(mutex_);
    static thread_local std::mt19937_64 rng(std::random_device{}());
    std::ostringstream id;
    id << std::hex << std::setfill('0') << std::setw(16) << rng() << std::setw(4) << (++counter_ & 0xffff);
    session->id = id.str();
    sessions_[session->id] = session;
    return session->id;
}

std::shared_ptr<SessionManager::Session> SessionManager::find(const std::string& id) {
    std::lock_guard lock(mutex_);
    const auto it = sessions_.find(id);
    if (it == sessions_.end()) throw ServiceError(404, "unknown_session", "no session '" + id + "'");
    return it->second;
}

Click SessionManager::to_model(const Session& s, const Click& c) const {
    const int n = model_->config().image_size;
    const auto map = [n](int v, int extent) {
        return std::min(n - 1, static_cast<int>((static_cast<double>(v) + 0.5) * n / extent));
    };
    return {map(c.row, s.original.height), map(c.col, s.original.width), c.polarity};
}

std::optional<double> SessionManager::prompt(double granularity) const {
    // A base model was trained without the granularity prompt.
    if (!model_->state().adapted()) return std::nullopt;
    return granularity;
}

BinaryMask SessionManager::to_original(const Session& s, const ProbabilityMap& p) const {
    auto m = resize_nearest(binarize(p, 0.5), s.original.height, s.original.width);
    m.role = MaskRole::prediction;
    return m;
}

void SessionManager::step(Session& s, const ClickSet& model_clicks) const {
    s.prev = model_->predict(s.scaled, model_clicks, s.prev, prompt(s.granularity));
    s.last_mask = to_original(s, s.prev);
}

void SessionManager::rerun(Session& s) const {
    const int n = model_->config().image_size;
    s.prev = ProbabilityMap(n, n);
    s.last_mask = BinaryMask(s.original.height, s.original.width);
    ClickSet prefix;
    for (const auto& c : s.clicks) {
        prefix.push_back(to_model(s, c));
        step(s, prefix);
    }
}

BinaryMask SessionManager::add_click(const std::string& id, const Click& click) {
    auto s = find(id);
    std::lock_guard lock(s->mutex);
    if (click.row < 0 || click.col < 0 || click.row >= s->original.height || click.col >= s->original.width)
        throw ServiceError(400, "click_out_of_bounds",
                           "click (" + std::to_string(click.row) + "," + std::to_string(click.col) +
                               ") outside a " + std::to_string(s->original.height) + "x" +
                               std::to_string(s->original.width) + " image");
    s->clicks.push_back(click);
    ClickSet model_clicks;
    for (const auto& c : s->clicks) model_clicks.push_back(to_model(*s, c));
    step(*s, model_clicks);
    s->updated_at = now_();
    return s->last_mask;
}

BinaryMask SessionManager::set_granularity(const std::string& id, double value) {
    if (!(value >= 0.0 && value <= 1.0)) throw ServiceError(400, "invalid_granularity", "granularity must lie in [0,1]");
    auto s = find(id);
    std::lock_guard lock(s->mutex);
    s->granularity = value;
    rerun(*s);
    s->updated_at = now_();
    return s->last_mask;
}

BinaryMask SessionManager::undo(const std::string& id) {
    auto s = find(id);
    std::lock_guard lock(s->mutex);
    if (s->clicks.empty()) throw ServiceError(409, "nothing_to_undo", "session has no clicks");
    s->clicks.pop_back();
    rerun(*s);
    s->updated_at = now_();
    return s->last_mask;
}

void SessionManager::reset(const std::string& id) {
    auto s = find(id);
    std::lock_guard lock(s->mutex);
    s->clicks.clear();
    rerun(*s);
    s->updated_at = now_();
}

SessionSummary SessionManager::summary(const std::string& id) {
    auto s = find(id);
    std::lock_guard lock(s->mutex);
    return {s->id, s->original.height, s->original.width, s->clicks, s->granularity, s->last_mask.area(),
            s->created_at, s->updated_at};
}

BinaryMask SessionManager::mask(const std::string& id) {
    auto s = find(id);
    std::lock_guard lock(s->mutex);
    return s->last_mask;
}

void SessionManager::remove(const std::string& id) {
    std::lock_guard lock(mutex_);
    if (!sessions_.erase(id)) throw ServiceError(404, "unknown_session", "no session '" + id + "'");
}

size_t SessionManager::evict_expired() {
    const auto cutoff = now_() - ttl_;
    std::lock_guard lock(mutex_);
    size_t n = 0;
    for (auto it = sessions_.begin(); it != sessions_.end();) {
        bool stale;
        {
            std::lock_guard session_lock(it->second->mutex);
            stale = it->second->updated_at < cutoff;
        }
        if (stale) {
            it = sessions_.erase(it);
            ++n;
        } else {
            ++it;
        }
    }
    return n;
}

size_t SessionManager::size() const {
    std::lock_guard lock(mutex_);
    return sessions_.size();
}

BinaryMask SessionManager::replay(const Image& image, const ClickSet& clicks, double granularity) const {
    Session s;
    const int n = model_->config().image_size;
    s.original = image;
    s.scaled = image.height == n && image.width == n ? image : resize_bilinear(image, n, n);
    s.clicks = clicks;
    s.granularity = granularity;
    rerun(s);
    return s.last_mask;
}

// ---------------------------------------------------------------------------

namespace {

std::string iso8601(Clock::time_point t) {
    const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(t.time_since_epoch()).count();
    const std::time_t secs = static_cast<std::time_t>(ms / 1000);
    std::tm tm{};
    gmtime_r(&secs, &tm);
    std::ostringstream out;
    out << std::put_time(&tm, "%Y-%m-%dT%H:%M:%S") << '.' << std::setw(3) << std::setfill('0') << (ms % 1000) << 'Z';
    return out.str();
}

json mask_json(const BinaryMask& m, bool png) {
    if (png) return {{"format", "png"}, {"height", m.height}, {"width", m.width}, {"data", base64_encode(encode_mask_png(m))}};
    return {{"format", "rle"}, {"height", m.height}, {"width", m.width}, {"counts", rle_encode(m)}};
}

json parse_body(const httplib::Request& req) {
    try {
        json j = json::parse(req.body);
        if (!j.is_object()) throw ServiceError(400, "malformed_body", "request body must be a JSON object");
        return j;
    } catch (const json::exception& e) {
        throw ServiceError(400, "malformed_body", std::string("invalid JSON: ") + e.what());
    }
}

template <class T>
T field(const json& j, const char* name) {
    if (!j.contains(name)) throw ServiceError(400, "malformed_body", std::string("missing field '") + name + "'");
    try {
        return j.at(name).get<T>();
    } catch (const json::exception&) {
        throw ServiceError(400, "malformed_body", std::string("field '") + name + "' has the wrong type");
    }
}

void reply(httplib::Response& res, int status, const json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
}

} // namespace

std::string mask_to_json(const BinaryMask& m, bool png) {
    return mask_json(m, png).dump();
}

struct SessionServer::Impl {
    SessionManager& sessions;
    httplib::Server server;

    explicit Impl(SessionManager& s) : sessions(s) {}

    template <class F>
    auto guarded(F&& f) {
        return [this, f = std::forward<F>(f)](const httplib::Request& req, httplib::Response& res) {
            try {
                sessions.evict_expired();
                f(req, res);
            } catch (const ServiceError& e) {
                reply(res, e.status, {{"error", {{"code", e.code}, {"message", e.what()}}}});
            } catch (const ContractViolation& e) {
                reply(res, 400, {{"error", {{"code", "invalid_request"}, {"message", e.what()}}}});
            } catch (const std::exception& e) {
                reply(res, 500, {{"error", {{"code", "internal_error"}, {"message", e.what()}}}});
            }
        };
    }

    static bool want_png(const httplib::Request& req) {
        return req.has_param("mask") && req.get_param_value("mask") == "png";
    }

    void routes() {
        server.Post("/sessions", guarded([this](const httplib::Request& req, httplib::Response& res) {
                        const json body = parse_body(req);
                        Image image;
                        try {
                            image = decode_image_png(base64_decode(field<std::string>(body, "image")));
                        } catch (const IoError& e) {
                            throw ServiceError(400, "invalid_image", e.what());
                        }
                        const std::string id = sessions.create(image);
                        reply(res, 201, {{"session_id", id}, {"h", image.height}, {"w", image.width}});
                    }));
        server.Post(R"(/sessions/([^/]+)/clicks)", guarded([this](const httplib::Request& req, httplib::Response& res) {
                        const json body = parse_body(req);
                        Click c;
                        c.row = field<int>(body, "row");
                        c.col = field<int>(body, "col");
                        try {
                            c.polarity = polarity_from_string(field<std::string>(body, "polarity"));
                        } catch (const ContractViolation& e) {
                            throw ServiceError(400, "malformed_body", e.what());
                        }
                        const auto m = sessions.add_click(req.matches[1], c);
                        reply(res, 200, {{"mask", mask_json(m, want_png(req))}});
                    }));
        server.Put(R"(/sessions/([^/]+)/granularity)",
                   guarded([this](const httplib::Request& req, httplib::Response& res) {
                       const json body = parse_body(req);
                       const auto m = sessions.set_granularity(req.matches[1], field<double>(body, "value"));
                       reply(res, 200, {{"mask", mask_json(m, want_png(req))}});
                   }));
        server.Post(R"(/sessions/([^/]+)/undo)", guarded([this](const httplib::Request& req, httplib::Response& res) {
                        const auto m = sessions.undo(req.matches[1]);
                        reply(res, 200, {{"mask", mask_json(m, want_png(req))}});
                    }));
        server.Post(R"(/sessions/([^/]+)/reset)", guarded([this](const httplib::Request& req, httplib::Response& res) {
                        sessions.reset(req.matches[1]);
                        reply(res, 200, json::object());
                    }));
        server.Get(R"(/sessions/([^/]+))", guarded([this](const httplib::Request& req, httplib::Response& res) {
                       const auto s = sessions.summary(req.matches[1]);
                       json clicks = json::array();
                       for (const auto& c : s.clicks)
                           clicks.push_back({{"row", c.row}, {"col", c.col}, {"polarity", to_string(c.polarity)}});
                       reply(res, 200,
                             {{"session_id", s.session_id},
                              {"h", s.height},
                              {"w", s.width},
                              {"clicks", clicks},
                              {"granularity", s.granularity},
                              {"mask_area", s.mask_area},
                              {"created_at", iso8601(s.created_at)},
                              {"updated_at", iso8601(s.updated_at)}});
                   }));
        server.Delete(R"(/sessions/([^/]+))", guarded([this](const httplib::Request& req, httplib::Response& res) {
                          sessions.remove(req.matches[1]);
                          reply(res, 200, json::object());
                      }));
    }
};

SessionServer::SessionServer(SessionManager& sessions) : impl_(std::make_unique<Impl>(sessions)) {
    impl_->routes();
}

SessionServer::~SessionServer() {
    stop();
}

bool SessionServer::listen(const std::string& host, int port) {
    return impl_->server.listen(host, port);
}

int SessionServer::bind_any(const std::string& host) {
    return impl_->server.bind_to_any_port(host);
}

bool SessionServer::serve() {
    return impl_->server.listen_after_bind();
}

void SessionServer::stop() {
    if (impl_) impl_->server.stop();
}

void SessionServer::wait_until_ready() const {
    impl_->server.wait_until_ready();
}

} // namespace granseg
