#include "chamber/gateway.hpp"

#include <algorithm>

namespace chamber::gateway {

double Backoff::next() {
    const double d = next_;
    next_ = std::min(next_ * 2.0, cap_);
    return d;
}

Poller::Poller(regmap::RegisterClient& client, std::string chamber)
    : client_(client), chamber_(std::move(chamber)), db_(chamber_db(chamber_)) {}

std::optional<TelemetrySample> Poller::poll(double now_s) {
    if (now_s < retry_at_) return std::nullopt;
    std::vector<std::uint8_t> image;
    try {
        image = client_.read_process_image(db_);
    } catch (const std::exception&) {
        ++failures_;
        const double delay = backoff_.next();
        backoff_history_.push_back(delay);
        retry_at_ = now_s + delay;
        return std::nullopt;
    }
    backoff_.reset();
    retry_at_ = -1e300;
    TelemetrySample s = sample_from_image(image, chamber_);
    if (s.ts_ms <= last_ts_) {
        ++stale_;
        return std::nullopt;
    }
    last_ts_ = s.ts_ms;
    return s;
}

TelemetryPublisher::TelemetryPublisher(mqtt::Client::Options options, std::string site, std::size_t capacity)
    : client_(std::move(options)), site_(std::move(site)), capacity_(capacity) {}

void TelemetryPublisher::enqueue(const TelemetrySample& sample) {
    if (queue_.size() >= capacity_) {
        queue_.pop_front();
        ++dropped_;
    }
    queue_.push_back(sample);
}

std::size_t TelemetryPublisher::flush() {
    std::size_t sent = 0;
    try {
        if (!client_.connected() && !queue_.empty()) client_.connect();
        while (!queue_.empty()) {
            const auto& s = queue_.front();
            client_.publish(telemetry_topic(site_, s.chamber), canonical_json(s), 1);
            queue_.pop_front();
            ++published_;
            ++sent;
        }
    } catch (const net::NetworkError&) {
        client_.disconnect();
    }
    return sent;
}

void subscribe_telemetry(mqtt::Client& client, const std::string& site, std::function<void(const TelemetrySample&)> sink) {
    client.subscribe("stability/" + site + "/+/telemetry", 1,
                     [sink = std::move(sink)](const std::string&, const std::string& payload, bool) {
                         try {
                             sink(sample_from_json(nlohmann::json::parse(payload)));
                         } catch (const std::exception&) {
                         }
                     });
}

}  // namespace chamber::gateway
