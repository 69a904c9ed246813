// chamber-twin: runs the facility, tunes loops, renders reports, verifies audit logs.
// Exit codes: 0 ok, 1 verification failure, 2 config error, 3 runtime fault.

#include "chamber/facility.hpp"
#include "chamber/timefmt.hpp"

#include "CLI11.hpp"
#include "httplib.h"

#include <atomic>
#include <csignal>
#include <cstdlib>
#include <fstream>
#include <iostream>

namespace fs = std::filesystem;
using namespace chamber;
using nlohmann::json;

namespace {

constexpr int kOk = 0;
constexpr int kVerifyFailed = 1;
constexpr int kConfigError = 2;
constexpr int kRuntimeFault = 3;

std::atomic<bool> g_signalled{false};

extern "C" void on_signal(int) { g_signalled = true; }

fs::path home_dir() {
    const char* h = std::getenv("CHAMBER_TWIN_HOME");
    return h && *h ? fs::path(h) : fs::current_path();
}

struct Common {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::optional<double> time_scale;
    std::string out;
    std::optional<double> duration;
};

void add_common(CLI::App* cmd, Common& c) {
    cmd->add_option("--config", c.config, "scenario JSON (default: $CHAMBER_TWIN_HOME/config/default.json if present)");
    cmd->add_option("--seed", c.seed, "override the scenario seed");
    cmd->add_option("--time-scale", c.time_scale, "simulated seconds per wall second")->check(CLI::Range(1.0, 1e9));
    cmd->add_option("--out", c.out, "output directory (default: $CHAMBER_TWIN_HOME/out)");
    cmd->add_option("--duration", c.duration, "simulated seconds")->check(CLI::PositiveNumber);
}

facility::ScenarioConfig load(const Common& c) {
    facility::ScenarioConfig s;
    fs::path file = c.config;
    if (file.empty() && fs::exists(home_dir() / "config" / "default.json")) file = home_dir() / "config" / "default.json";
    if (file.empty()) {
        s = facility::default_scenario();
        s.output_dir = home_dir() / "out";
    } else {
        s = facility::load_scenario(file);
        if (s.output_dir.is_relative()) s.output_dir = home_dir() / s.output_dir;
    }
    if (c.seed) s.seed = *c.seed;
    if (c.time_scale) s.time_scale = *c.time_scale;
    if (!c.out.empty()) s.output_dir = c.out;
    if (c.duration) s.duration_s = *c.duration;
    return s;
}

std::int64_t parse_time(const std::string& text, const std::string& flag) {
    if (!text.empty() && text.find_first_not_of("0123456789") == std::string::npos) return std::stoll(text);
    try {
        return parse_iso_ms(text);
    } catch (const std::exception&) {
        throw facility::ConfigError(flag, "expected ISO-8601 UTC or epoch milliseconds");
    }
}

int cmd_run(const Common& c) {
    const auto cfg = load(c);
    facility::Facility f(cfg);
    std::cerr << "regmap :" << f.regmap_port() << "  mqtt :" << f.mqtt_port() << "  http :" << f.http_port() << '\n';
    const auto summary = f.run();
    std::cout << facility::to_json(summary).dump(2) << '\n';
    return summary.audit_ok ? kOk : kVerifyFailed;
}

int cmd_serve(const Common& c) {
    const auto cfg = load(c);
    facility::Facility f(cfg);
    std::signal(SIGINT, on_signal);
    std::signal(SIGTERM, on_signal);
    f.on_tick([&f](double) {
        if (g_signalled) f.stop();
    });
    std::cout << json{{"regmap_port", f.regmap_port()},
                      {"mqtt_port", f.mqtt_port()},
                      {"http_port", f.http_port()},
                      {"output_dir", cfg.output_dir.string()}}
                     .dump()
              << std::endl;
    const auto summary = f.run(true);
    std::cerr << "stopped at t=" << summary.sim_seconds << " s\n";
    return kOk;
}

struct TuneArgs {
    std::string chamber = "D";
    std::string loop = "temperature";
    std::string apply_url;
    std::string user;
    std::string password;
};

int cmd_tune(const Common& c, const TuneArgs& a) {
    const auto cfg = load(c);
    if (!cfg.chambers.count(a.chamber)) throw facility::ConfigError("--chamber", "not in the scenario");
    const auto kind = control::parse_loop_kind(a.loop);
    const auto& cc = cfg.chambers.at(a.chamber);
    facility::ChamberTwin twin(cc, cfg.seed + static_cast<std::uint64_t>(gateway::chamber_db(a.chamber) - 1),
                               cfg.failover_detect_s);
    const auto report = facility::run_tuning(twin, kind);
    std::cout << facility::to_json(report).dump(2) << '\n';
    if (a.apply_url.empty()) return kOk;

    // Writing gains is an Administrator action; the API decides, we only carry the credentials.
    httplib::Client http(a.apply_url);
    auto login = http.Post("/api/v1/login", json{{"username", a.user}, {"password", a.password}}.dump(),
                           "application/json");
    if (!login || login->status != 200) {
        std::cerr << "login failed: " << (login ? login->body : httplib::to_string(login.error())) << '\n';
        return kRuntimeFault;
    }
    const std::string token = json::parse(login->body).at("token");
    json body = facility::gains_json(report.gains);
    body["loop"] = a.loop;
    auto res = http.Post("/api/v1/gains/" + a.chamber, {{"Authorization", "Bearer " + token}}, body.dump(),
                         "application/json");
    if (!res || res->status != 200) {
        std::cerr << "gain write refused: " << (res ? std::to_string(res->status) + " " + res->body : "no response") << '\n';
        return kRuntimeFault;
    }
    std::cerr << "gains written to chamber " << a.chamber << '\n';
    return kOk;
}

struct ReportArgs {
    std::string dir;
    std::string chamber = "D";
    std::string from;
    std::string to;
    long long interval_s = 3600;
    int utc_offset_min = 0;
    std::string format = "csv";
    std::string output;
};

int cmd_report(const ReportArgs& a) {
    const fs::path dir = a.dir.empty() ? home_dir() / "out" : fs::path(a.dir);
    if (!fs::exists(dir / historian::SampleStore::kFileName)) {
        throw facility::ConfigError("--dir", "no sample log in " + dir.string());
    }
    historian::SampleStore store(dir);
    historian::ReportSpec spec;
    spec.chamber = a.chamber;
    spec.interval_ms = a.interval_s * 1000;
    spec.utc_offset_min = a.utc_offset_min;
    const auto all = store.range(a.chamber, INT64_MIN, INT64_MAX);
    if (a.from.empty() && all.empty()) throw facility::ConfigError("--from", "chamber has no samples; give --from and --to");
    spec.from_ms = a.from.empty() ? all.front().ts_ms - all.front().ts_ms % 60000 : parse_time(a.from, "--from");
    spec.to_ms = a.to.empty() ? spec.from_ms + 24LL * 3600 * 1000 : parse_time(a.to, "--to");
    if (spec.to_ms <= spec.from_ms) throw facility::ConfigError("--to", "must be after --from");
    const auto rows = store.query(a.chamber, spec.from_ms, spec.to_ms, spec.interval_ms);
    const auto table = historian::build_report(spec, rows);
    const std::string text = a.format == "html" ? historian::render_html(table) : historian::render_csv(table);
    if (a.output.empty()) {
        std::cout << text;
    } else {
        std::ofstream(a.output, std::ios::binary) << text;
    }
    return kOk;
}

int cmd_verify(const std::string& path) {
    if (!fs::exists(path)) throw facility::ConfigError("path", "no such file: " + path);
    const auto r = supervisory::verify_file(path);
    json out{{"ok", r.ok}, {"records", r.records}, {"reason", r.reason}};
    out["first_bad_seq"] = r.first_bad_seq ? json(*r.first_bad_seq) : json();
    std::cout << out.dump() << '\n';
    if (!r.ok) std::cerr << "audit chain broken at seq " << (r.first_bad_seq ? std::to_string(*r.first_bad_seq) : "?")
                         << ": " << r.reason << '\n';
    return r.ok ? kOk : kVerifyFailed;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Stability chamber facility twin"};
    app.require_subcommand(1);

    Common run_c, serve_c, tune_c;
    auto* run = app.add_subcommand("run", "simulate the scenario to its duration and write the artifacts");
    add_common(run, run_c);
    auto* serve = app.add_subcommand("serve", "run the stack until SIGINT/SIGTERM");
    add_common(serve, serve_c);

    TuneArgs tune_a;
    auto* tune = app.add_subcommand("tune", "pretune + finetune one loop on a standalone twin");
    add_common(tune, tune_c);
    tune->add_option("--chamber", tune_a.chamber)->check(CLI::IsMember({"A", "B", "C", "D"}));
    tune->add_option("--loop", tune_a.loop)->check(CLI::IsMember({"temperature", "humidity"}));
    tune->add_option("--apply", tune_a.apply_url, "historian base URL; writes the gains through the API");
    tune->add_option("--user", tune_a.user);
    tune->add_option("--password", tune_a.password);

    ReportArgs rep_a;
    auto* report = app.add_subcommand("report", "hourly-style report from a run's sample log");
    report->add_option("--dir,--out", rep_a.dir, "run output directory");
    report->add_option("--chamber", rep_a.chamber)->check(CLI::IsMember({"A", "B", "C", "D"}));
    report->add_option("--from", rep_a.from, "ISO-8601 UTC or epoch ms (default: first sample, minute-aligned)");
    report->add_option("--to", rep_a.to, "default: from + 24 h");
    report->add_option("--interval", rep_a.interval_s, "seconds")->check(CLI::PositiveNumber);
    report->add_option("--utc-offset", rep_a.utc_offset_min, "display zone, minutes east of UTC");
    report->add_option("--format", rep_a.format)->check(CLI::IsMember({"csv", "html"}));
    report->add_option("-o,--output", rep_a.output);

    std::string audit_path;
    auto* verify = app.add_subcommand("verify-audit", "walk an audit log's hash chain");
    verify->add_option("path", audit_path)->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kConfigError;
    }

    try {
        if (*run) return cmd_run(run_c);
        if (*serve) return cmd_serve(serve_c);
        if (*tune) return cmd_tune(tune_c, tune_a);
        if (*report) return cmd_report(rep_a);
        if (*verify) return cmd_verify(audit_path);
    } catch (const facility::ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kConfigError;
    } catch (const plant::ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kConfigError;
    } catch (const plant::SimulationFault& e) {
        std::cerr << "simulation fault: " << e.what() << '\n';
        return kRuntimeFault;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kRuntimeFault;
    }
    return kOk;
}
