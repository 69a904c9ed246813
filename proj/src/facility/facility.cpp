#include "chamber/facility.hpp"
#include "chamber/gateway.hpp"
#include "chamber/timefmt.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iostream>
#include <set>
#include <thread>

namespace chamber::facility {

using control::LoopKind;
using nlohmann::json;
namespace sv = chamber::supervisory;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

const char* const kAuditFile = "audit.log";
const char* const kOutboxFile = "outbox.ndjson";
const char* const kDeadLetterFile = "dead_letter.ndjson";
const char* const kUsersFile = "users.json";

}  // namespace

/// Runs run_tuning on its own thread but only lets it advance the twin when the simulation
/// thread hands over a tick, so the tuning experiment shares the facility clock.
struct TuningJob {
    LoopKind kind = LoopKind::temperature;
    std::thread thread;
    std::mutex m;
    std::condition_variable cv;
    bool want_tick = false;
    bool done = false;
    bool abort = false;
    TickResult last;
    json result;
    bool ok = false;
};

struct Unit {
    ChamberConfig config;
    int db = 1;
    std::unique_ptr<ChamberTwin> twin;
    std::unique_ptr<sv::AlarmEvaluator> evaluator;
    std::uint32_t sequence = 0;
    std::vector<FailoverEvent> failovers;
    std::optional<double> first_fault_s;
    std::optional<double> max_fault_excursion;
    std::unique_ptr<TuningJob> job;
};

/// The API's view of the plant, spoken over the register protocol like any external client.
class RegmapControl : public historian::ControlPlane {
public:
    RegmapControl(Facility& f, std::string host, std::uint16_t port) : facility_(f), client_(std::move(host), port) {}

    historian::Setpoint setpoint(const std::string& chamber) override {
        const int db = check(chamber);
        std::lock_guard lock(mutex_);
        const auto b = client_.read(db, regmap::layout::kSetpointT, 8);
        return {regmap::get_f32(b, 0), regmap::get_f32(b, 4)};
    }

    void set_setpoint(const std::string& chamber, const historian::Setpoint& sp) override {
        const int db = check(chamber);
        std::vector<std::uint8_t> data(8);
        regmap::put_f32(data, 0, static_cast<float>(sp.t_c));
        regmap::put_f32(data, 4, static_cast<float>(sp.rh_pct));
        std::lock_guard lock(mutex_);
        client_.write(db, regmap::layout::kSetpointT, data);
    }

    json gains(const std::string& chamber) override {
        const int db = check(chamber);
        std::lock_guard lock(mutex_);
        const auto b = client_.read(db, regmap::layout::kTempKp, 24);
        const auto one = [&](std::size_t at) {
            const double ti = regmap::get_f32(b, at + 4);
            return json{{"kp", regmap::get_f32(b, at)},
                        {"ti_s", std::isfinite(ti) ? json(ti) : json()},
                        {"td_s", regmap::get_f32(b, at + 8)}};
        };
        return {{"temperature", one(0)}, {"humidity", one(12)}};
    }

    void set_gains(const std::string& chamber, const std::string& loop, double kp, double ti_s, double td_s) override {
        const int db = check(chamber);
        const LoopKind kind = control::parse_loop_kind(loop);
        std::vector<std::uint8_t> data(12);
        regmap::put_f32(data, 0, static_cast<float>(kp));
        regmap::put_f32(data, 4, static_cast<float>(ti_s));
        regmap::put_f32(data, 8, static_cast<float>(td_s));
        std::lock_guard lock(mutex_);
        client_.write(db, kind == LoopKind::temperature ? regmap::layout::kTempKp : regmap::layout::kHumKp, data);
    }

    std::string start_tuning(const std::string& chamber, const std::string& loop) override {
        check(chamber);
        return facility_.request_tuning(chamber, control::parse_loop_kind(loop));
    }

private:
    int check(const std::string& chamber) const {
        if (!facility_.config().chambers.count(chamber)) {
            throw std::out_of_range("chamber " + chamber + " is not part of this scenario");
        }
        return gateway::chamber_db(chamber);
    }

    Facility& facility_;
    std::mutex mutex_;
    regmap::RegisterClient client_;
};

struct Facility::Impl {
    Facility& owner;
    const ScenarioConfig& cfg;
    std::map<std::string, Unit> units;

    regmap::RegisterImage image;
    std::unique_ptr<regmap::RegisterServer> reg_server;
    std::unique_ptr<mqtt::Broker> broker;
    std::unique_ptr<historian::SampleStore> store;
    std::unique_ptr<sv::UserStore> users;
    sv::SessionTable sessions;
    std::unique_ptr<sv::AuditLog> audit;
    sv::AlarmManager alarms;
    std::unique_ptr<sv::Notifier> notifier;
    historian::LiveHub live;
    std::unique_ptr<RegmapControl> control;
    std::unique_ptr<historian::ApiServer> api;

    // Gateway side.
    std::unique_ptr<regmap::RegisterClient> poll_client;
    std::vector<gateway::Poller> pollers;
    std::unique_ptr<gateway::TelemetryPublisher> publisher;
    std::unique_ptr<mqtt::Client> bridge;
    std::unique_ptr<gateway::HistorianPusher> pusher;
    std::mutex bridge_mutex;
    std::condition_variable bridge_cv;
    std::deque<gateway::TelemetrySample> bridged;
    std::uint64_t bridged_total = 0;
    std::uint64_t published_total = 0;

    std::mutex tune_mutex;
    std::deque<std::pair<std::string, LoopKind>> tune_requests;
    std::set<std::string> tuning_busy;
    json tuning_results = json::array();

    bool shut = false;

    Impl(Facility& f, const ScenarioConfig& c) : owner(f), cfg(c) {}

    std::int64_t sim_ms(double sim_s) const { return cfg.start_ms + std::llround(sim_s * 1000.0); }

    void boot() {
        if (cfg.chambers.empty()) throw ConfigError("chambers", "at least one chamber is required");
        fs::create_directories(cfg.output_dir);
        // A run starts from empty artifacts; anything else would mix two runs in one log.
        for (const char* f : {historian::SampleStore::kFileName, kAuditFile, kOutboxFile, kDeadLetterFile, kUsersFile,
                              "audit.log.head", "summary.json", "alarms.json"}) {
            fs::remove(cfg.output_dir / f);
        }

        for (const auto& [id, cc] : cfg.chambers) {
            Unit u;
            u.config = cc;
            u.db = gateway::chamber_db(id);
            u.twin = std::make_unique<ChamberTwin>(cc, cfg.seed + static_cast<std::uint64_t>(u.db - 1), cfg.failover_detect_s);
            sv::AlarmConfig ac;
            ac.tol_t = cc.t_loop.tolerance;
            ac.tol_rh = cc.rh_loop.tolerance;
            u.evaluator = std::make_unique<sv::AlarmEvaluator>(id, ac);
            for (const auto& f : cfg.faults) {
                if (f.chamber != id) continue;
                u.twin->inject_fault(f.target, f.at_s);
                u.first_fault_s = std::min(u.first_fault_s.value_or(f.at_s), f.at_s);
            }
            image.update(u.db, [&](std::span<const regmap::WriteCommand>, regmap::Block& b) {
                u.twin->publish(b, cfg.start_ms, 0, 0, false);
            });
            units.emplace(id, std::move(u));
        }

        store = std::make_unique<historian::SampleStore>(cfg.output_dir);
        users = std::make_unique<sv::UserStore>(cfg.output_dir / kUsersFile, cfg.password_iterations);
        if (users->active_admins() == 0) users->add(cfg.admin_user, cfg.admin_password, sv::Role::administrator);
        sessions.add_static(cfg.service_token, "gateway", sv::Role::service);
        audit = std::make_unique<sv::AuditLog>(cfg.output_dir / kAuditFile);
        notifier = std::make_unique<sv::Notifier>(cfg.output_dir / kOutboxFile);
        alarms.add_listener([n = notifier.get()](const sv::AlarmTransition& t) { n->on_transition(t); });

        reg_server = std::make_unique<regmap::RegisterServer>(image, cfg.bind_host, cfg.regmap_port);
        reg_server->start();
        mqtt::Broker::Options bo;
        bo.host = cfg.bind_host;
        bo.port = cfg.mqtt_port;
        broker = std::make_unique<mqtt::Broker>(bo);
        broker->start();

        control = std::make_unique<RegmapControl>(owner, cfg.bind_host, reg_server->port());
        historian::ApiContext ctx;
        ctx.store = store.get();
        ctx.users = users.get();
        ctx.sessions = &sessions;
        ctx.audit = audit.get();
        ctx.alarms = &alarms;
        ctx.control = control.get();
        ctx.live = &live;
        ctx.event_clock = [this] { return sim_ms(owner.sim_time_.load()); };
        ctx.report_utc_offset_min = cfg.report_utc_offset_min;
        api = std::make_unique<historian::ApiServer>(ctx);
        api->start(cfg.bind_host, cfg.http_port);

        poll_client = std::make_unique<regmap::RegisterClient>(cfg.bind_host, reg_server->port());
        for (const auto& [id, u] : units) pollers.emplace_back(*poll_client, id);

        mqtt::Client::Options po;
        po.host = cfg.bind_host;
        po.port = broker->port();
        po.client_id = "gateway-" + cfg.site;
        publisher = std::make_unique<gateway::TelemetryPublisher>(po, cfg.site);

        mqtt::Client::Options bo2 = po;
        bo2.client_id = "historian-bridge-" + cfg.site;
        bridge = std::make_unique<mqtt::Client>(bo2);
        bridge->connect();
        gateway::subscribe_telemetry(*bridge, cfg.site, [this](const gateway::TelemetrySample& s) {
            {
                std::lock_guard lock(bridge_mutex);
                bridged.push_back(s);
                ++bridged_total;
            }
            bridge_cv.notify_all();
        });
        pusher = std::make_unique<gateway::HistorianPusher>(
            gateway::make_http_post("http://" + cfg.bind_host + ":" + std::to_string(api->port()), cfg.service_token),
            cfg.output_dir / kDeadLetterFile);
    }

    // ---- simulation ----------------------------------------------------------

    TickResult step_chamber(Unit& u) {
        TickResult r;
        image.update(u.db, [&](std::span<const regmap::WriteCommand> writes, regmap::Block& b) {
            u.twin->absorb(b, writes);
            r = u.twin->tick();
            const double now = u.twin->sim_time();
            const std::int64_t ts = sim_ms(now);

            sv::AlarmInputs in;
            in.ts_ms = ts;
            in.sp_t = u.twin->setpoint(LoopKind::temperature);
            in.sp_rh = u.twin->setpoint(LoopKind::humidity);
            for (int k = 0; k < plant::kSensorCount; ++k) {
                in.t[k] = r.readings[k].t_c;
                in.rh[k] = r.readings[k].rh_pct;
                in.bad[k] = r.readings[k].quality_bad;
            }
            in.pressure_inwc = r.pressure_inwc;
            u.evaluator->evaluate(in, alarms);

            if (r.failover) {
                u.failovers.push_back(*r.failover);
                const auto& f = *r.failover;
                alarms.raise(sv::AlarmKind::unit_failover, u.config.id, ts,
                             actuator_name(f.actuator) + " unit " + std::to_string(f.from_unit) + " tripped, unit " +
                                 std::to_string(f.to_unit) + " took over");
            }
            if (u.first_fault_s && now >= *u.first_fault_s) {
                const double e = std::abs(u.twin->state().t_c - in.sp_t);
                u.max_fault_excursion = std::max(u.max_fault_excursion.value_or(0.0), e);
            }
            u.twin->publish(b, ts, alarms.alarm_word(u.config.id), ++u.sequence, u.job != nullptr);
        });
        return r;
    }

    void start_job(Unit& u, LoopKind kind) {
        u.job = std::make_unique<TuningJob>();
        TuningJob& job = *u.job;
        job.kind = kind;
        ChamberTwin& twin = *u.twin;
        job.thread = std::thread([&job, &twin, kind] {
            Stepper step = [&job] {
                std::unique_lock l(job.m);
                job.want_tick = true;
                job.cv.notify_all();
                job.cv.wait(l, [&] { return !job.want_tick || job.abort; });
                if (job.abort) throw control::TuningFailed("tuning aborted: facility stopping");
                return job.last;
            };
            try {
                job.result = to_json(run_tuning(twin, kind, TuneOptions{}, step));
                job.ok = true;
            } catch (const std::exception& e) {
                job.result = {{"chamber", twin.config().id}, {"loop", std::string(control::to_string(kind))},
                              {"error", e.what()}};
            }
            {
                std::lock_guard l(job.m);
                job.done = true;
            }
            job.cv.notify_all();
        });
    }

    void finish_job(Unit& u) {
        TuningJob& job = *u.job;
        job.thread.join();
        const std::int64_t ts = sim_ms(u.twin->sim_time());
        const std::string target = "chamber." + u.config.id + ".tuning." + std::string(control::to_string(job.kind));
        if (job.ok) {
            audit->append({ts, "system", "System", "tuning.complete", target, "", job.result["gains"].dump()});
        } else {
            alarms.raise(sv::AlarmKind::tuning_fail, u.config.id, ts, job.result.value("error", ""));
            audit->append({ts, "system", "System", "tuning.failed", target, "", job.result.value("error", "")});
        }
        {
            std::lock_guard l(tune_mutex);
            tuning_results.push_back(job.result);
            tuning_busy.erase(u.config.id);
        }
        u.job.reset();
    }

    void abort_jobs() {
        for (auto& [id, u] : units) {
            if (!u.job) continue;
            {
                std::lock_guard l(u.job->m);
                u.job->abort = true;
            }
            u.job->cv.notify_all();
            u.job->thread.join();
            u.job.reset();
        }
    }

    void tick_all() {
        {
            std::lock_guard l(tune_mutex);
            while (!tune_requests.empty()) {
                auto [id, kind] = tune_requests.front();
                tune_requests.pop_front();
                start_job(units.at(id), kind);
            }
        }
        for (auto& [id, u] : units) {
            if (!u.job) {
                step_chamber(u);
                continue;
            }
            TuningJob& job = *u.job;
            std::unique_lock l(job.m);
            job.cv.wait(l, [&] { return job.want_tick || job.done; });
            if (job.done) {
                l.unlock();
                finish_job(u);
                step_chamber(u);
            } else {
                job.last = step_chamber(u);
                job.want_tick = false;
                l.unlock();
                job.cv.notify_all();
            }
        }
    }

    /// One lockstep telemetry cycle: poll every chamber over TCP, publish over MQTT, wait for the
    /// bridge to see them and push one batch to the historian.
    void poll_cycle(double sim_s) {
        for (auto& p : pollers) {
            if (auto s = p.poll(sim_s)) publisher->enqueue(*s);
        }
        published_total += publisher->flush();
        std::vector<gateway::TelemetrySample> got;
        {
            std::unique_lock lock(bridge_mutex);
            bridge_cv.wait_for(lock, std::chrono::seconds(5), [&] { return bridged_total >= published_total; });
            got.assign(bridged.begin(), bridged.end());
            bridged.clear();
        }
        for (const auto& s : got) pusher->enqueue(s);
        pusher->flush(sim_s);
    }

    void drain(double sim_s) {
        for (int i = 0; i < 50 && pusher->pending() > 0; ++i) {
            pusher->flush(sim_s + 1e9);
            if (pusher->pending() > 0) std::this_thread::sleep_for(std::chrono::milliseconds(100));
        }
        if (pusher->pending() > 0) std::cerr << "facility: " << pusher->pending() << " samples not delivered\n";
    }

    void shutdown() {
        if (shut) return;
        shut = true;
        abort_jobs();
        if (bridge) bridge->disconnect();
        if (publisher) publisher->client().disconnect();
        if (api) api->stop();
        if (broker) broker->stop();
        if (reg_server) reg_server->stop();
    }
};

Facility::Facility(ScenarioConfig config) : config_(std::move(config)), impl_(std::make_unique<Impl>(*this, config_)) {
    try {
        impl_->boot();
    } catch (...) {
        impl_->shutdown();
        throw;
    }
}

Facility::~Facility() { impl_->shutdown(); }

std::uint16_t Facility::regmap_port() const { return impl_->reg_server->port(); }
std::uint16_t Facility::mqtt_port() const { return impl_->broker->port(); }
std::uint16_t Facility::http_port() const { return impl_->api->port(); }
historian::SampleStore& Facility::store() { return *impl_->store; }
supervisory::AlarmManager& Facility::alarms() { return impl_->alarms; }

ChamberTwin& Facility::twin(const std::string& chamber) {
    const auto it = impl_->units.find(chamber);
    if (it == impl_->units.end()) throw std::out_of_range("chamber " + chamber + " is not part of this scenario");
    return *it->second.twin;
}

std::string Facility::request_tuning(const std::string& chamber, LoopKind kind) {
    if (!impl_->units.count(chamber)) throw std::out_of_range("chamber " + chamber + " is not part of this scenario");
    std::lock_guard l(impl_->tune_mutex);
    if (impl_->tuning_busy.count(chamber)) throw std::logic_error("tuning already running in chamber " + chamber);
    impl_->tuning_busy.insert(chamber);
    impl_->tune_requests.emplace_back(chamber, kind);
    return "queued";
}

RunSummary Facility::run(bool forever) {
    Impl& im = *impl_;
    const auto wall0 = Clock::now();
    const auto poll_every = static_cast<std::uint64_t>(std::llround(config_.poll_interval_s));
    const auto total = static_cast<std::uint64_t>(std::llround(config_.duration_s));
    std::uint64_t n = 0;
    try {
        while (!stop_requested_ && (forever || n < total)) {
            im.tick_all();
            ++n;
            const double sim_s = static_cast<double>(n);
            sim_time_ = sim_s;
            if (tick_hook_) tick_hook_(sim_s);
            if (n % poll_every == 0) {
                im.poll_cycle(sim_s);
                // Pace to time_scale; running behind is allowed, running ahead is not.
                const auto due = wall0 + std::chrono::duration_cast<Clock::duration>(
                                             std::chrono::duration<double>(sim_s / config_.time_scale));
                std::this_thread::sleep_until(due);
            }
        }
        if (n % poll_every != 0) im.poll_cycle(static_cast<double>(n));
        im.drain(static_cast<double>(n));
        im.abort_jobs();
    } catch (...) {
        im.shutdown();
        throw;
    }
    const double wall = std::chrono::duration<double>(Clock::now() - wall0).count();

    RunSummary s;
    s.sim_seconds = static_cast<double>(n);
    s.wall_seconds = wall;
    for (const auto& [id, u] : im.units) {
        auto cs = summarize(id, im.store->range(id, INT64_MIN, INT64_MAX), u.config.t_loop.tolerance,
                            u.config.rh_loop.tolerance, config_.start_ms, config_.settle_hold_s);
        for (const auto kind : {sv::AlarmKind::deviation_t, sv::AlarmKind::deviation_rh, sv::AlarmKind::blower_fail,
                                sv::AlarmKind::sensor_fail, sv::AlarmKind::tuning_fail, sv::AlarmKind::unit_failover}) {
            cs.alarms[sv::to_string(kind)] = im.alarms.count(kind, id);
        }
        cs.failovers = u.failovers;
        cs.max_fault_excursion = u.max_fault_excursion;
        s.chambers.push_back(std::move(cs));
    }
    s.samples_stored = im.store->size();
    s.samples_published = im.publisher->published();
    s.mqtt_retransmissions = im.publisher->client().retransmissions() + im.broker->retransmissions();
    s.outbox_entries = im.notifier->written();
    s.audit_records = im.audit->size();
    s.audit_ok = sv::verify_file(im.audit->path()).ok;
    {
        std::lock_guard l(im.tune_mutex);
        s.tuning = im.tuning_results;
    }

    json alarms = json::array();
    for (const auto& a : im.alarms.list()) alarms.push_back(sv::to_json(a));
    std::ofstream(config_.output_dir / "alarms.json") << alarms.dump(2) << '\n';
    std::ofstream(config_.output_dir / "summary.json") << to_json(s).dump(2) << '\n';
    return s;
}

// ---- statistics ---------------------------------------------------------------

ChamberSummary summarize(const std::string& chamber, const std::vector<gateway::TelemetrySample>& samples,
                         double tol_t, double tol_rh, std::int64_t start_ms, double settle_hold_s) {
    ChamberSummary cs;
    cs.chamber = chamber;
    cs.samples = samples.size();
    if (samples.empty()) return cs;
    cs.t_sp = samples.back().sp_t_c;
    cs.rh_sp = samples.back().sp_rh_pct;

    const auto in_band = [&](const gateway::TelemetrySample& s) {
        return std::all_of(s.sensors.begin(), s.sensors.end(), [&](const gateway::SensorValue& v) {
            return std::abs(v.t_c - s.sp_t_c) <= tol_t && std::abs(v.rh_pct - s.sp_rh_pct) <= tol_rh;
        });
    };
    const auto hold_ms = static_cast<std::int64_t>(std::llround(settle_hold_s * 1000.0));
    std::optional<std::size_t> settled;
    std::size_t run = 0;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        if (!in_band(samples[i])) {
            run = i + 1;
            continue;
        }
        if (samples[i].ts_ms - samples[run].ts_ms >= hold_ms) {
            settled = run;
            break;
        }
    }
    if (!settled) return cs;
    cs.settling_s = static_cast<double>(samples[*settled].ts_ms - start_ms) / 1000.0;

    std::size_t good = 0;
    cs.t_min = cs.rh_min = 1e300;
    cs.t_max = cs.rh_max = -1e300;
    for (std::size_t i = *settled; i < samples.size(); ++i) {
        const auto& s = samples[i];
        ++cs.post_settling_samples;
        if (in_band(s)) ++good;
        for (const auto& v : s.sensors) {
            cs.max_abs_t_dev = std::max(cs.max_abs_t_dev, std::abs(v.t_c - s.sp_t_c));
            cs.max_abs_rh_dev = std::max(cs.max_abs_rh_dev, std::abs(v.rh_pct - s.sp_rh_pct));
            cs.t_min = std::min(cs.t_min, v.t_c);
            cs.t_max = std::max(cs.t_max, v.t_c);
            cs.rh_min = std::min(cs.rh_min, v.rh_pct);
            cs.rh_max = std::max(cs.rh_max, v.rh_pct);
        }
    }
    cs.in_band_pct = 100.0 * static_cast<double>(good) / static_cast<double>(cs.post_settling_samples);
    return cs;
}

json to_json(const RunSummary& s) {
    json chambers = json::array();
    for (const auto& c : s.chambers) {
        json fo = json::array();
        for (const auto& f : c.failovers) {
            fo.push_back({{"actuator", actuator_name(f.actuator)},
                          {"from_unit", f.from_unit},
                          {"to_unit", f.to_unit},
                          {"sim_time_s", f.sim_time_s}});
        }
        chambers.push_back({
            {"chamber", c.chamber},
            {"t_sp", c.t_sp},
            {"rh_sp", c.rh_sp},
            {"settling_s", c.settling_s ? json(*c.settling_s) : json()},
            {"samples", c.samples},
            {"post_settling_samples", c.post_settling_samples},
            {"in_band_pct", c.in_band_pct},
            {"max_abs_t_dev", c.max_abs_t_dev},
            {"max_abs_rh_dev", c.max_abs_rh_dev},
            {"envelope", {{"t_min", c.t_min}, {"t_max", c.t_max}, {"rh_min", c.rh_min}, {"rh_max", c.rh_max}}},
            {"alarms", c.alarms},
            {"failovers", fo},
            {"max_fault_excursion", c.max_fault_excursion ? json(*c.max_fault_excursion) : json()},
        });
    }
    return {
        {"chambers", chambers},
        {"sim_seconds", s.sim_seconds},
        {"wall_seconds", s.wall_seconds},
        {"samples_stored", s.samples_stored},
        {"samples_published", s.samples_published},
        {"mqtt_retransmissions", s.mqtt_retransmissions},
        {"outbox_entries", s.outbox_entries},
        {"audit_records", s.audit_records},
        {"audit_ok", s.audit_ok},
        {"tuning", s.tuning},
    };
}

}  // namespace chamber::facility
