#pragma once

#include "chamber/mqtt.hpp"
#include "chamber/regmap.hpp"
#include "chamber/telemetry.hpp"

#include <cstdint>
#include <deque>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace chamber::gateway {

/// Doubling retry delay: 1, 2, 4, ... capped at 60 s.
class Backoff {
public:
    explicit Backoff(double initial_s = 1.0, double cap_s = 60.0) : initial_(initial_s), cap_(cap_s), next_(initial_s) {}
    double next();
    void reset() { next_ = initial_; }

private:
    double initial_;
    double cap_;
    double next_;
};

/// Reads one chamber's process image per cycle. Time is supplied by the caller so the
/// poller runs equally on simulated and wall clocks.
class Poller {
public:
    Poller(regmap::RegisterClient& client, std::string chamber);

    /// Returns a sample when due and the block clock has advanced since the last one.
    std::optional<TelemetrySample> poll(double now_s);

    const std::string& chamber() const { return chamber_; }
    std::uint64_t failures() const { return failures_; }
    std::uint64_t stale() const { return stale_; }
    /// Delays scheduled after each failure, in order.
    const std::vector<double>& backoff_history() const { return backoff_history_; }
    double retry_at() const { return retry_at_; }

private:
    regmap::RegisterClient& client_;
    std::string chamber_;
    int db_;
    Backoff backoff_;
    double retry_at_ = -1e300;
    std::int64_t last_ts_ = INT64_MIN;
    std::uint64_t failures_ = 0;
    std::uint64_t stale_ = 0;
    std::vector<double> backoff_history_;
};

/// MQTT side: bounded drop-oldest buffer in front of a QoS1 session.
class TelemetryPublisher {
public:
    static constexpr std::size_t kDefaultCapacity = 10'000;

    TelemetryPublisher(mqtt::Client::Options options, std::string site, std::size_t capacity = kDefaultCapacity);

    void enqueue(const TelemetrySample& sample);
    /// Publishes buffered samples in order; stops at the first transport failure.
    std::size_t flush();

    std::size_t buffered() const { return queue_.size(); }
    std::uint64_t dropped() const { return dropped_; }
    std::uint64_t published() const { return published_; }
    mqtt::Client& client() { return client_; }

private:
    mqtt::Client client_;
    std::string site_;
    std::size_t capacity_;
    std::deque<TelemetrySample> queue_;
    std::uint64_t dropped_ = 0;
    std::uint64_t published_ = 0;
};

struct HttpResult {
    int status = 0;  // 0 means the request never got a response
    std::string body;
};

using HttpPost = std::function<HttpResult(const std::string& path, const std::string& body)>;

/// Keep-alive HTTP POST to base_url with a bearer token.
HttpPost make_http_post(const std::string& base_url, const std::string& token, double timeout_s = 5.0);

/// Historian side: loss-averse, ordered, batches of at most 100.
class HistorianPusher {
public:
    static constexpr std::size_t kBatch = 100;

    HistorianPusher(HttpPost post, std::filesystem::path dead_letter, std::size_t batch = kBatch);

    void enqueue(const TelemetrySample& sample);
    /// Sends pending batches while the historian accepts them. 5xx or no response schedules a
    /// retry with backoff; 4xx moves the batch to the dead-letter file.
    void flush(double now_s);

    std::size_t pending() const { return queue_.size(); }
    std::uint64_t posts() const { return posts_; }
    std::uint64_t accepted() const { return accepted_; }
    std::uint64_t dead_lettered() const { return dead_lettered_; }
    std::uint64_t alerts() const { return alerts_; }
    double retry_at() const { return retry_at_; }

    static std::string batch_body(std::span<const TelemetrySample> batch);

private:
    HttpPost post_;
    std::filesystem::path dead_letter_;
    std::size_t batch_;
    std::deque<TelemetrySample> queue_;
    Backoff backoff_;
    double retry_at_ = -1e300;
    std::uint64_t posts_ = 0;
    std::uint64_t accepted_ = 0;
    std::uint64_t dead_lettered_ = 0;
    std::uint64_t alerts_ = 0;
};

/// Subscribes `client` to telemetry for `site` and hands every parsed sample to `sink`.
/// Malformed payloads are counted and skipped.
void subscribe_telemetry(mqtt::Client& client, const std::string& site,
                         std::function<void(const TelemetrySample&)> sink);

}  // namespace chamber::gateway
