#include "chamber/gateway.hpp"

#include "httplib.h"

#include <fstream>

namespace chamber::gateway {

HttpPost make_http_post(const std::string& base_url, const std::string& token, double timeout_s) {
    auto cli = std::make_shared<httplib::Client>(base_url);
    cli->set_keep_alive(true);
    const auto secs = static_cast<time_t>(timeout_s);
    const auto usecs = static_cast<time_t>((timeout_s - static_cast<double>(secs)) * 1e6);
    cli->set_connection_timeout(secs, usecs);
    cli->set_read_timeout(secs, usecs);
    cli->set_write_timeout(secs, usecs);
    if (!token.empty()) cli->set_bearer_token_auth(token);
    return [cli](const std::string& path, const std::string& body) {
        auto res = cli->Post(path, body, "application/json");
        if (!res) return HttpResult{0, httplib::to_string(res.error())};
        return HttpResult{res->status, res->body};
    };
}

HistorianPusher::HistorianPusher(HttpPost post, std::filesystem::path dead_letter, std::size_t batch)
    : post_(std::move(post)), dead_letter_(std::move(dead_letter)), batch_(batch) {
    if (batch_ == 0 || batch_ > kBatch) throw std::invalid_argument("batch size must be 1..100");
}

void HistorianPusher::enqueue(const TelemetrySample& sample) { queue_.push_back(sample); }

std::string HistorianPusher::batch_body(std::span<const TelemetrySample> batch) {
    std::string body = "{\"samples\":[";
    for (std::size_t i = 0; i < batch.size(); ++i) {
        if (i) body += ',';
        body += canonical_json(batch[i]);
    }
    body += "]}";
    return body;
}

void HistorianPusher::flush(double now_s) {
    if (now_s < retry_at_) return;
    while (!queue_.empty()) {
        const std::size_t n = std::min(batch_, queue_.size());
        std::vector<TelemetrySample> batch(queue_.begin(), queue_.begin() + static_cast<std::ptrdiff_t>(n));
        const std::string body = batch_body(batch);
        HttpResult res;
        try {
            res = post_("/api/v1/samples", body);
        } catch (const std::exception& e) {
            res = {0, e.what()};
        }
        ++posts_;
        if (res.status >= 200 && res.status < 300) {
            queue_.erase(queue_.begin(), queue_.begin() + static_cast<std::ptrdiff_t>(n));
            accepted_ += n;
            backoff_.reset();
            retry_at_ = -1e300;
            continue;
        }
        if (res.status >= 400 && res.status < 500) {
            // The historian will never take this batch; park it for an operator.
            std::ofstream out(dead_letter_, std::ios::app);
            out << "{\"status\":" << res.status << ",\"response\":" << nlohmann::json(res.body).dump()
                << ",\"batch\":" << body << "}\n";
            out.flush();
            queue_.erase(queue_.begin(), queue_.begin() + static_cast<std::ptrdiff_t>(n));
            dead_lettered_ += n;
            ++alerts_;
            continue;
        }
        retry_at_ = now_s + backoff_.next();
        return;
    }
}

}  // namespace chamber::gateway
