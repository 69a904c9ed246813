#include "chamber/historian.hpp"

#include "chamber/timefmt.hpp"
#include "httplib.h"

#include <cmath>

namespace chamber::historian {

namespace sv = supervisory;
using nlohmann::json;

// ---- live hub ---------------------------------------------------------------

std::optional<TelemetrySample> LiveHub::Subscription::next(std::chrono::milliseconds timeout) {
    std::unique_lock lock(mutex_);
    cv_.wait_for(lock, timeout, [&] { return closed_ || !queue_.empty(); });
    if (queue_.empty()) return std::nullopt;
    TelemetrySample s = std::move(queue_.front());
    queue_.pop_front();
    return s;
}

bool LiveHub::Subscription::closed() const {
    std::lock_guard lock(const_cast<std::mutex&>(mutex_));
    return closed_;
}

std::shared_ptr<LiveHub::Subscription> LiveHub::subscribe(std::string chamber_filter) {
    auto s = std::make_shared<Subscription>();
    s->chamber_ = std::move(chamber_filter);
    std::lock_guard lock(mutex_);
    subs_.push_back(s);
    return s;
}

void LiveHub::unsubscribe(const std::shared_ptr<Subscription>& s) {
    std::lock_guard lock(mutex_);
    std::erase(subs_, s);
}

void LiveHub::publish(const TelemetrySample& sample) {
    std::lock_guard lock(mutex_);
    for (auto& s : subs_) {
        if (!s->chamber_.empty() && s->chamber_ != sample.chamber) continue;
        std::lock_guard sl(s->mutex_);
        if (s->queue_.size() >= 1000) s->queue_.pop_front();
        s->queue_.push_back(sample);
        s->cv_.notify_one();
    }
}

void LiveHub::close() {
    std::lock_guard lock(mutex_);
    for (auto& s : subs_) {
        std::lock_guard sl(s->mutex_);
        s->closed_ = true;
        s->cv_.notify_all();
    }
}

std::size_t LiveHub::subscribers() const {
    std::lock_guard lock(mutex_);
    return subs_.size();
}

// ---- helpers ----------------------------------------------------------------

namespace {

struct HttpError : std::runtime_error {
    int status;
    std::string field;
    HttpError(int st, const std::string& msg, std::string f = {}) : std::runtime_error(msg), status(st), field(std::move(f)) {}
};

void send_json(httplib::Response& res, int status, const json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
}

json parse_body(const httplib::Request& req) {
    try {
        auto j = json::parse(req.body);
        if (!j.is_object()) throw HttpError(400, "request body must be a JSON object");
        return j;
    } catch (const json::parse_error& e) {
        throw HttpError(400, std::string("malformed JSON: ") + e.what());
    }
}

std::int64_t parse_time_param(const httplib::Request& req, const std::string& name) {
    if (!req.has_param(name)) throw HttpError(400, "missing query parameter", name);
    const std::string v = req.get_param_value(name);
    try {
        if (!v.empty() && v.find_first_not_of("-0123456789") == std::string::npos) return std::stoll(v);
        return parse_iso_ms(v);
    } catch (const std::exception&) {
        throw HttpError(400, "expected ISO-8601 UTC time or epoch milliseconds", name);
    }
}

std::string chamber_param(const std::string& c) {
    if (!gateway::valid_chamber(c)) throw HttpError(404, "unknown chamber '" + c + "'", "chamber");
    return c;
}

double number_field(const json& j, const std::string& key, double lo, double hi) {
    const auto it = j.find(key);
    if (it == j.end() || !it->is_number()) throw HttpError(400, "expected a number", key);
    const double v = it->get<double>();
    if (!std::isfinite(v) || v < lo || v > hi) {
        throw HttpError(400, "must be within [" + std::to_string(lo) + ", " + std::to_string(hi) + "]", key);
    }
    return v;
}

std::string fmt2(double v) {
    char buf[48];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    return buf;
}

json user_json(const sv::UserAccount& a) {
    return {{"username", a.username}, {"role", sv::to_string(a.role)}, {"active", a.active}};
}

json audit_json(const sv::AuditRecord& r) {
    return {{"seq", r.seq},
            {"ts", format_iso_ms(r.entry.ts_ms)},
            {"username", r.entry.username},
            {"role", r.entry.role},
            {"action", r.entry.action},
            {"target", r.entry.target},
            {"old_value", r.entry.old_value},
            {"new_value", r.entry.new_value},
            {"prev_hash", r.prev_hash},
            {"hash", r.hash}};
}

}  // namespace

// ---- server -------------------------------------------------------------------

ApiServer::ApiServer(ApiContext ctx) : ctx_(std::move(ctx)), server_(std::make_unique<httplib::Server>()) {
    if (!ctx_.store || !ctx_.users || !ctx_.sessions || !ctx_.audit || !ctx_.alarms) {
        throw std::invalid_argument("ApiServer needs store, users, sessions, audit and alarms");
    }
    if (!ctx_.event_clock) {
        ctx_.event_clock = [] {
            return std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::system_clock::now().time_since_epoch()).count();
        };
    }
    if (!ctx_.session_clock) ctx_.session_clock = ctx_.event_clock;
    routes();
}

ApiServer::~ApiServer() { stop(); }

void ApiServer::start(const std::string& host, std::uint16_t port) {
    int bound = port == 0 ? server_->bind_to_any_port(host) : (server_->bind_to_port(host, port) ? port : -1);
    if (bound < 0) throw std::runtime_error("cannot bind HTTP API to " + host + ":" + std::to_string(port));
    port_ = static_cast<std::uint16_t>(bound);
    thread_ = std::thread([this] { server_->listen_after_bind(); });
    server_->wait_until_ready();
}

void ApiServer::stop() {
    if (ctx_.live) ctx_.live->close();
    if (server_) server_->stop();
    if (thread_.joinable()) thread_.join();
}

void ApiServer::routes() {
    auto& srv = *server_;
    ApiContext& ctx = ctx_;

    // Wraps a handler with authentication, authorisation and uniform error mapping.
    auto guarded = [&ctx](sv::Action action, bool allow_query_token, auto fn) {
        return [&ctx, action, allow_query_token, fn](const httplib::Request& req, httplib::Response& res) {
            try {
                std::string token;
                const auto auth = req.get_header_value("Authorization");
                if (auth.rfind("Bearer ", 0) == 0) token = auth.substr(7);
                else if (allow_query_token && req.has_param("token")) token = req.get_param_value("token");
                if (token.empty()) throw HttpError(401, "missing bearer token");
                const auto session = ctx.sessions->lookup(token, ctx.session_clock());
                if (!session) throw HttpError(401, "unknown or expired token");
                if (!sv::allowed(session->role, action)) {
                    throw HttpError(403, "role " + sv::to_string(session->role) + " may not " + sv::to_string(action));
                }
                fn(*session, req, res);
            } catch (const HttpError& e) {
                json body{{"error", e.what()}};
                if (!e.field.empty()) body["field"] = e.field;
                send_json(res, e.status, body);
            } catch (const gateway::FieldError& e) {
                send_json(res, 400, {{"error", e.what()}, {"field", e.field()}});
            } catch (const std::out_of_range& e) {
                send_json(res, 404, {{"error", e.what()}, {"field", "chamber"}});
            } catch (const std::exception& e) {
                send_json(res, 500, {{"error", e.what()}});
            }
        };
    };

    auto audit = [&ctx](const sv::Session& s, std::string action, std::string target, std::string old_v, std::string new_v) {
        ctx.audit->append({ctx.event_clock(), s.username, sv::to_string(s.role), std::move(action), std::move(target),
                           std::move(old_v), std::move(new_v)});
    };
    std::mutex& wm = write_mutex_;

    srv.Get("/healthz", [&ctx](const httplib::Request&, httplib::Response& res) {
        send_json(res, 200, {{"status", "ok"}, {"samples", ctx.store->size()}});
    });

    srv.Post("/api/v1/login", [&ctx, &wm](const httplib::Request& req, httplib::Response& res) {
        try {
            const json body = parse_body(req);
            const auto u = body.find("username");
            const auto p = body.find("password");
            if (u == body.end() || !u->is_string()) throw HttpError(400, "expected a string", "username");
            if (p == body.end() || !p->is_string()) throw HttpError(400, "expected a string", "password");
            const auto account = ctx.users->authenticate(u->get<std::string>(), p->get<std::string>());
            if (!account) throw HttpError(401, "invalid credentials");
            std::lock_guard lock(wm);
            const auto session = ctx.sessions->issue(account->username, account->role, ctx.session_clock());
            ctx.audit->append({ctx.event_clock(), account->username, sv::to_string(account->role), "login", "session",
                               "", sv::to_string(account->role)});
            send_json(res, 200, {{"token", session.token}, {"role", sv::to_string(session.role)},
                                 {"expires_at", format_iso_ms(session.expires_ms)}});
        } catch (const HttpError& e) {
            json body{{"error", e.what()}};
            if (!e.field.empty()) body["field"] = e.field;
            send_json(res, e.status, body);
        }
    });

    srv.Post("/api/v1/samples", guarded(sv::Action::ingest, false, [&ctx, &wm, audit](const sv::Session& s, const httplib::Request& req, httplib::Response& res) {
        const json body = parse_body(req);
        const auto arr = body.find("samples");
        if (arr == body.end() || !arr->is_array()) throw HttpError(400, "expected an array", "samples");
        std::vector<TelemetrySample> batch;
        batch.reserve(arr->size());
        for (std::size_t i = 0; i < arr->size(); ++i) {
            try {
                batch.push_back(gateway::sample_from_json((*arr)[i]));
            } catch (const gateway::FieldError& e) {
                const std::string field = "samples[" + std::to_string(i) + "]." + e.field();
                throw HttpError(400, field + ": " + e.what(), field);
            }
        }
        std::lock_guard lock(wm);
        const auto r = ctx.store->ingest(batch);
        audit(s, "samples.ingest", "samples", "",
              "accepted=" + std::to_string(r.accepted) + " duplicates=" + std::to_string(r.duplicates) +
                  " rejected=" + std::to_string(r.rejected.size()));
        if (ctx.live) {
            for (auto i : r.accepted_index) ctx.live->publish(batch[i]);
        }
        json rejected = json::array();
        for (const auto& [i, why] : r.rejected) rejected.push_back({{"index", i}, {"reason", why}});
        send_json(res, 200, {{"accepted", r.accepted}, {"duplicates", r.duplicates}, {"rejected", rejected}});
    }));

    srv.Get("/api/v1/samples", guarded(sv::Action::read, false, [&ctx](const sv::Session&, const httplib::Request& req, httplib::Response& res) {
        if (!req.has_param("chamber")) throw HttpError(400, "missing query parameter", "chamber");
        const std::string chamber = chamber_param(req.get_param_value("chamber"));
        const auto from = parse_time_param(req, "from");
        const auto to = parse_time_param(req, "to");
        std::vector<TelemetrySample> rows;
        json out{{"chamber", chamber}, {"from", format_iso_ms(from)}, {"to", format_iso_ms(to)}};
        if (req.has_param("interval")) {
            long long interval = 0;
            try {
                interval = std::stoll(req.get_param_value("interval"));
            } catch (const std::exception&) {
            }
            if (interval <= 0) throw HttpError(400, "expected a positive number of seconds", "interval");
            rows = ctx.store->query(chamber, from, to, interval * 1000);
            out["interval_s"] = interval;
        } else {
            rows = ctx.store->range(chamber, from, to);
        }
        json arr = json::array();
        for (const auto& r : rows) arr.push_back(json::parse(gateway::canonical_json(r)));
        out["rows"] = std::move(arr);
        send_json(res, 200, out);
    }));

    srv.Get("/api/v1/report", guarded(sv::Action::read, false, [&ctx](const sv::Session&, const httplib::Request& req, httplib::Response& res) {
        if (!req.has_param("chamber")) throw HttpError(400, "missing query parameter", "chamber");
        ReportSpec spec;
        spec.chamber = chamber_param(req.get_param_value("chamber"));
        spec.from_ms = parse_time_param(req, "from");
        spec.to_ms = parse_time_param(req, "to");
        spec.utc_offset_min = ctx.report_utc_offset_min;
        try {
            if (req.has_param("interval")) spec.interval_ms = std::stoll(req.get_param_value("interval")) * 1000;
        } catch (const std::exception&) {
            spec.interval_ms = 0;
        }
        if (spec.interval_ms <= 0) throw HttpError(400, "expected a positive number of seconds", "interval");
        try {
            if (req.has_param("utc_offset")) spec.utc_offset_min = std::stoi(req.get_param_value("utc_offset"));
        } catch (const std::exception&) {
            throw HttpError(400, "expected minutes east of UTC", "utc_offset");
        }
        const std::string format = req.has_param("format") ? req.get_param_value("format") : "csv";
        if (format != "csv" && format != "html") throw HttpError(400, "expected csv or html", "format");
        const auto table = build_report(spec, ctx.store->query(spec.chamber, spec.from_ms, spec.to_ms, spec.interval_ms));
        res.status = 200;
        if (format == "csv") res.set_content(render_csv(table), "text/csv");
        else res.set_content(render_html(table), "text/html");
    }));

    srv.Get("/api/v1/alarms", guarded(sv::Action::read, false, [&ctx](const sv::Session&, const httplib::Request& req, httplib::Response& res) {
        std::optional<sv::AlarmState> state;
        if (req.has_param("state") && !req.get_param_value("state").empty()) {
            try {
                std::string st = req.get_param_value("state");
                for (auto& c : st) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
                state = sv::parse_alarm_state(st);
            } catch (const std::invalid_argument&) {
                throw HttpError(400, "expected ACTIVE, ACKED or CLEARED", "state");
            }
        }
        const std::string chamber = req.has_param("chamber") ? req.get_param_value("chamber") : "";
        json arr = json::array();
        for (const auto& a : ctx.alarms->list(state)) {
            if (chamber.empty() || a.chamber == chamber) arr.push_back(sv::to_json(a));
        }
        send_json(res, 200, {{"alarms", arr}});
    }));

    srv.Post(R"(/api/v1/alarms/(\d+)/ack)", guarded(sv::Action::ack_alarm, false, [&ctx, &wm, audit](const sv::Session& s, const httplib::Request& req, httplib::Response& res) {
        const auto id = std::stoull(req.matches[1]);
        std::lock_guard lock(wm);
        const auto before = ctx.alarms->get(id);
        if (!before) throw HttpError(404, "no alarm " + std::to_string(id));
        sv::AlarmRecord after;
        try {
            after = ctx.alarms->ack(id, s.username, s.role, ctx.event_clock());
        } catch (const sv::IllegalTransition& e) {
            throw HttpError(409, e.what());
        }
        audit(s, "alarm.ack", "alarm." + std::to_string(id), sv::to_string(before->state), sv::to_string(after.state));
        send_json(res, 200, sv::to_json(after));
    }));

    srv.Get(R"(/api/v1/setpoints/([A-Za-z]+))", guarded(sv::Action::read, false, [&ctx](const sv::Session&, const httplib::Request& req, httplib::Response& res) {
        const std::string chamber = chamber_param(req.matches[1]);
        if (!ctx.control) throw HttpError(503, "no control plane attached");
        const auto sp = ctx.control->setpoint(chamber);
        send_json(res, 200, {{"chamber", chamber}, {"t_c", gateway::round2(sp.t_c)}, {"rh_pct", gateway::round2(sp.rh_pct)}});
    }));

    srv.Post(R"(/api/v1/setpoints/([A-Za-z]+))", guarded(sv::Action::write_setpoint, false, [&ctx, &wm, audit](const sv::Session& s, const httplib::Request& req, httplib::Response& res) {
        const std::string chamber = chamber_param(req.matches[1]);
        if (!ctx.control) throw HttpError(503, "no control plane attached");
        const json body = parse_body(req);
        if (!body.contains("t_c") && !body.contains("rh_pct")) throw HttpError(400, "nothing to change", "t_c");
        std::lock_guard lock(wm);
        const auto old = ctx.control->setpoint(chamber);
        Setpoint sp = old;
        if (body.contains("t_c")) sp.t_c = number_field(body, "t_c", 5.0, 60.0);
        if (body.contains("rh_pct")) sp.rh_pct = number_field(body, "rh_pct", 10.0, 95.0);
        ctx.control->set_setpoint(chamber, sp);
        audit(s, "setpoint.write", "chamber." + chamber + ".setpoint", "t=" + fmt2(old.t_c) + " rh=" + fmt2(old.rh_pct),
              "t=" + fmt2(sp.t_c) + " rh=" + fmt2(sp.rh_pct));
        send_json(res, 200, {{"chamber", chamber}, {"t_c", sp.t_c}, {"rh_pct", sp.rh_pct}});
    }));

    srv.Get(R"(/api/v1/gains/([A-Za-z]+))", guarded(sv::Action::read, false, [&ctx](const sv::Session&, const httplib::Request& req, httplib::Response& res) {
        const std::string chamber = chamber_param(req.matches[1]);
        if (!ctx.control) throw HttpError(503, "no control plane attached");
        send_json(res, 200, ctx.control->gains(chamber));
    }));

    srv.Post(R"(/api/v1/gains/([A-Za-z]+))", guarded(sv::Action::write_gains, false, [&ctx, &wm, audit](const sv::Session& s, const httplib::Request& req, httplib::Response& res) {
        const std::string chamber = chamber_param(req.matches[1]);
        if (!ctx.control) throw HttpError(503, "no control plane attached");
        const json body = parse_body(req);
        const auto loop = body.find("loop");
        if (loop == body.end() || !loop->is_string()) throw HttpError(400, "expected \"temperature\" or \"humidity\"", "loop");
        const double kp = number_field(body, "kp", 0.0, 1e6);
        double ti = std::numeric_limits<double>::infinity();
        if (body.contains("ti_s") && !body["ti_s"].is_null()) ti = number_field(body, "ti_s", 1e-3, 1e9);
        double td = 0.0;
        if (body.contains("td_s") && !body["td_s"].is_null()) td = number_field(body, "td_s", 0.0, 1e9);
        std::lock_guard lock(wm);
        const json old = ctx.control->gains(chamber);
        try {
            ctx.control->set_gains(chamber, loop->get<std::string>(), kp, ti, td);
        } catch (const std::invalid_argument& e) {
            throw HttpError(400, e.what(), "loop");
        }
        const std::string l = loop->get<std::string>();
        const auto show = [](const json& g) {
            if (g.is_null()) return std::string("-");
            return "kp=" + g.value("kp", json()).dump() + " ti=" + g.value("ti_s", json()).dump() + " td=" + g.value("td_s", json()).dump();
        };
        const json now = ctx.control->gains(chamber);
        audit(s, "gains.write", "chamber." + chamber + ".gains." + l, show(old.value(l, json())), show(now.value(l, json())));
        send_json(res, 200, now);
    }));

    srv.Post(R"(/api/v1/tuning/([A-Za-z]+))", guarded(sv::Action::trigger_tuning, false, [&ctx, &wm, audit](const sv::Session& s, const httplib::Request& req, httplib::Response& res) {
        const std::string chamber = chamber_param(req.matches[1]);
        if (!ctx.control) throw HttpError(503, "no control plane attached");
        const json body = parse_body(req);
        const std::string loop = body.value("loop", "temperature");
        std::lock_guard lock(wm);
        std::string status;
        try {
            status = ctx.control->start_tuning(chamber, loop);
        } catch (const std::invalid_argument& e) {
            throw HttpError(400, e.what(), "loop");
        } catch (const std::out_of_range&) {
            throw;  // chamber not running: 404 from the wrapper
        } catch (const std::logic_error& e) {
            throw HttpError(409, e.what());
        }
        audit(s, "tuning.start", "chamber." + chamber + ".tuning." + loop, "", status);
        send_json(res, 202, {{"chamber", chamber}, {"loop", loop}, {"status", status}});
    }));

    srv.Get("/api/v1/users", guarded(sv::Action::manage_users, false, [&ctx](const sv::Session&, const httplib::Request&, httplib::Response& res) {
        json arr = json::array();
        for (const auto& u : ctx.users->list()) arr.push_back(user_json(u));
        send_json(res, 200, {{"users", arr}});
    }));

    srv.Post("/api/v1/users", guarded(sv::Action::manage_users, false, [&ctx, &wm, audit](const sv::Session& s, const httplib::Request& req, httplib::Response& res) {
        const json body = parse_body(req);
        for (const char* f : {"username", "password", "role"}) {
            if (!body.contains(f) || !body[f].is_string()) throw HttpError(400, "expected a string", f);
        }
        sv::Role role;
        try {
            role = sv::parse_role(body["role"].get<std::string>());
        } catch (const std::invalid_argument& e) {
            throw HttpError(400, e.what(), "role");
        }
        const std::string name = body["username"].get<std::string>();
        std::lock_guard lock(wm);
        try {
            ctx.users->add(name, body["password"].get<std::string>(), role);
        } catch (const sv::UserError& e) {
            throw HttpError(ctx.users->find(name) ? 409 : 400, e.what(), "username");
        }
        audit(s, "user.create", "user." + name, "", "role=" + sv::to_string(role) + " active=1");
        send_json(res, 201, user_json(*ctx.users->find(name)));
    }));

    srv.Post(R"(/api/v1/users/([A-Za-z0-9_.\-]+))", guarded(sv::Action::manage_users, false, [&ctx, &wm, audit](const sv::Session& s, const httplib::Request& req, httplib::Response& res) {
        const std::string name = req.matches[1];
        const json body = parse_body(req);
        std::lock_guard lock(wm);
        const auto before = ctx.users->find(name);
        if (!before) throw HttpError(404, "no such user '" + name + "'");
        try {
            if (body.contains("role")) {
                if (!body["role"].is_string()) throw HttpError(400, "expected a string", "role");
                ctx.users->set_role(name, sv::parse_role(body["role"].get<std::string>()));
            }
            if (body.contains("active")) {
                if (!body["active"].is_boolean()) throw HttpError(400, "expected a boolean", "active");
                ctx.users->set_active(name, body["active"].get<bool>());
            }
        } catch (const sv::LastAdminError& e) {
            throw HttpError(409, e.what());
        } catch (const std::invalid_argument& e) {
            throw HttpError(400, e.what(), "role");
        }
        const auto after = *ctx.users->find(name);
        if (!after.active || after.role != before->role) ctx.sessions->revoke_user(name);
        audit(s, "user.update", "user." + name,
              "role=" + sv::to_string(before->role) + " active=" + (before->active ? "1" : "0"),
              "role=" + sv::to_string(after.role) + " active=" + (after.active ? "1" : "0"));
        send_json(res, 200, user_json(after));
    }));

    srv.Delete(R"(/api/v1/users/([A-Za-z0-9_.\-]+))", guarded(sv::Action::manage_users, false, [&ctx, &wm, audit](const sv::Session& s, const httplib::Request& req, httplib::Response& res) {
        const std::string name = req.matches[1];
        std::lock_guard lock(wm);
        const auto before = ctx.users->find(name);
        if (!before) throw HttpError(404, "no such user '" + name + "'");
        try {
            ctx.users->remove(name);
        } catch (const sv::LastAdminError& e) {
            throw HttpError(409, e.what());
        }
        ctx.sessions->revoke_user(name);
        audit(s, "user.delete", "user." + name, "role=" + sv::to_string(before->role), "");
        send_json(res, 200, {{"deleted", name}});
    }));

    srv.Get("/api/v1/audit", guarded(sv::Action::read, false, [&ctx](const sv::Session&, const httplib::Request& req, httplib::Response& res) {
        const std::int64_t from = req.has_param("from") ? parse_time_param(req, "from") : INT64_MIN;
        const std::int64_t to = req.has_param("to") ? parse_time_param(req, "to") : INT64_MAX;
        json arr = json::array();
        for (const auto& r : ctx.audit->records(from, to)) arr.push_back(audit_json(r));
        send_json(res, 200, {{"records", arr}});
    }));

    srv.Get("/api/v1/audit/verify", guarded(sv::Action::read, false, [&ctx, &wm](const sv::Session&, const httplib::Request&, httplib::Response& res) {
        std::lock_guard lock(wm);
        const auto v = sv::verify_file(ctx.audit->path());
        json out{{"ok", v.ok}, {"records", v.records}, {"first_bad_seq", nullptr}, {"reason", v.reason}};
        if (v.first_bad_seq) out["first_bad_seq"] = *v.first_bad_seq;
        send_json(res, 200, out);
    }));

    srv.Get("/api/v1/live", guarded(sv::Action::read, true, [&ctx](const sv::Session&, const httplib::Request& req, httplib::Response& res) {
        if (!ctx.live) throw HttpError(503, "live stream not available");
        std::string chamber = req.has_param("chamber") ? req.get_param_value("chamber") : "";
        if (!chamber.empty()) chamber_param(chamber);
        auto sub = ctx.live->subscribe(chamber);
        LiveHub* hub = ctx.live;
        res.set_header("Cache-Control", "no-cache");
        res.set_chunked_content_provider(
            "text/event-stream",
            [sub](std::size_t, httplib::DataSink& sink) {
                if (sub->closed()) {
                    sink.done();
                    return false;
                }
                const auto s = sub->next(std::chrono::milliseconds(1000));
                std::string chunk = s ? "event: telemetry\ndata: " + gateway::canonical_json(*s) + "\n\n" : ": keepalive\n\n";
                return sink.write(chunk.data(), chunk.size());
            },
            [hub, sub](bool) { hub->unsubscribe(sub); });
    }));
}

}  // namespace chamber::historian
