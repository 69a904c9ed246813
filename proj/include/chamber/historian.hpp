#pragma once

#include "chamber/supervisory.hpp"
#include "chamber/telemetry.hpp"

#include <atomic>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <span>
#include <string>
#include <thread>
#include <vector>

namespace httplib {
class Server;
}

namespace chamber::historian {

using gateway::TelemetrySample;

class StoreCorrupt : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct IngestResult {
    std::size_t accepted = 0;
    std::size_t duplicates = 0;
    std::vector<std::size_t> accepted_index;
    /// (index in batch, reason) for samples that were refused.
    std::vector<std::pair<std::size_t, std::string>> rejected;
};

/// Append-only JSONL sample log with an in-memory per-chamber index.
/// Each ingest call is fsynced before it returns.
class SampleStore {
public:
    static constexpr const char* kFileName = "samples.jsonl";

    explicit SampleStore(std::filesystem::path dir);
    ~SampleStore();
    SampleStore(const SampleStore&) = delete;
    SampleStore& operator=(const SampleStore&) = delete;

    IngestResult ingest(std::span<const TelemetrySample> batch);

    /// All samples with from <= ts < to.
    std::vector<TelemetrySample> range(const std::string& chamber, std::int64_t from_ms, std::int64_t to_ms) const;
    /// First sample at or after each boundary from + k*interval, k = 0 .. floor((to-from)/interval) - 1,
    /// kept only when it falls before the next boundary.
    std::vector<TelemetrySample> query(const std::string& chamber, std::int64_t from_ms, std::int64_t to_ms,
                                       std::int64_t interval_ms) const;
    std::optional<TelemetrySample> latest(const std::string& chamber) const;
    std::size_t size() const;
    std::size_t size(const std::string& chamber) const;
    /// Bytes dropped from a torn tail during recovery.
    std::size_t recovered_truncation() const { return truncated_; }
    std::filesystem::path file() const { return file_; }

private:
    std::filesystem::path file_;
    int fd_ = -1;
    mutable std::shared_mutex mutex_;
    std::map<std::string, std::vector<TelemetrySample>> index_;
    std::size_t truncated_ = 0;
};

// ---- reports --------------------------------------------------------------

struct ReportSpec {
    std::string chamber;
    std::int64_t from_ms = 0;
    std::int64_t to_ms = 0;
    std::int64_t interval_ms = 3'600'000;
    int utc_offset_min = 0;
};

struct ReportTable {
    std::string title;
    std::string range_line;
    std::vector<std::string> columns;
    std::vector<std::vector<std::string>> rows;
};

std::string interval_label(std::int64_t interval_ms);
ReportTable build_report(const ReportSpec& spec, const std::vector<TelemetrySample>& rows);
std::string render_csv(const ReportTable& table);
std::string render_html(const ReportTable& table);

// ---- HTTP API -------------------------------------------------------------

struct Setpoint {
    double t_c = 0.0;
    double rh_pct = 0.0;
};

/// What the API may ask of the plant side. The facility implements this over the register map.
/// Chambers that are not running raise std::out_of_range, which the API reports as 404.
class ControlPlane {
public:
    virtual ~ControlPlane() = default;
    virtual Setpoint setpoint(const std::string& chamber) = 0;
    virtual void set_setpoint(const std::string& chamber, const Setpoint& sp) = 0;
    virtual nlohmann::json gains(const std::string& chamber) = 0;
    virtual void set_gains(const std::string& chamber, const std::string& loop, double kp, double ti_s, double td_s) = 0;
    /// Returns a short status string; throws std::invalid_argument for bad requests.
    virtual std::string start_tuning(const std::string& chamber, const std::string& loop) = 0;
};

/// Fan-out of ingested samples to live-stream subscribers. Slow subscribers lose oldest entries.
class LiveHub {
public:
    class Subscription {
    public:
        /// Waits up to `timeout` for the next sample; nullopt on timeout or hub shutdown.
        std::optional<TelemetrySample> next(std::chrono::milliseconds timeout);
        bool closed() const;

    private:
        friend class LiveHub;
        std::mutex mutex_;
        std::condition_variable cv_;
        std::deque<TelemetrySample> queue_;
        std::string chamber_;
        bool closed_ = false;
    };

    std::shared_ptr<Subscription> subscribe(std::string chamber_filter);
    void unsubscribe(const std::shared_ptr<Subscription>& s);
    void publish(const TelemetrySample& s);
    void close();
    std::size_t subscribers() const;

private:
    mutable std::mutex mutex_;
    std::vector<std::shared_ptr<Subscription>> subs_;
};

struct ApiContext {
    SampleStore* store = nullptr;
    supervisory::UserStore* users = nullptr;
    supervisory::SessionTable* sessions = nullptr;
    supervisory::AuditLog* audit = nullptr;
    supervisory::AlarmManager* alarms = nullptr;
    ControlPlane* control = nullptr;
    LiveHub* live = nullptr;
    /// Timestamp for audit records and alarm acks (simulation time in the facility).
    std::function<std::int64_t()> event_clock;
    /// Wall clock for session expiry.
    std::function<std::int64_t()> session_clock;
    int report_utc_offset_min = 0;
};

class ApiServer {
public:
    static constexpr std::uint16_t kDefaultPort = 8080;

    explicit ApiServer(ApiContext ctx);
    ~ApiServer();
    ApiServer(const ApiServer&) = delete;
    ApiServer& operator=(const ApiServer&) = delete;

    /// Binds and serves on a background thread. Port 0 picks a free port.
    void start(const std::string& host = "127.0.0.1", std::uint16_t port = kDefaultPort);
    void stop();
    std::uint16_t port() const { return port_; }

private:
    void routes();

    ApiContext ctx_;
    std::unique_ptr<httplib::Server> server_;
    std::thread thread_;
    std::uint16_t port_ = 0;
    std::mutex write_mutex_;  // serialises mutating handlers so audit order matches effect order
};

}  // namespace chamber::historian
