#include "chamber/mqtt.hpp"

#include <algorithm>

namespace chamber::mqtt {

bool LossModel::drop(const Packet& p) {
    if (p_ <= 0.0 || (p.type != PacketType::publish && p.type != PacketType::puback)) return false;
    std::lock_guard lock(mutex_);
    if (std::uniform_real_distribution<double>(0.0, 1.0)(rng_) < p_) {
        ++dropped_;
        return true;
    }
    return false;
}

Client::Client(Options options) : options_(std::move(options)) {}

Client::~Client() { disconnect(); }

void Client::connect() {
    disconnect();
    sock_ = net::connect(options_.host, options_.port, options_.connect_timeout);
    try {
        sock_.write_all(encode(Packet::make_connect(options_.client_id, options_.keep_alive)));
        auto ack = read_packet(sock_);
        if (!ack || ack->type != PacketType::connack) throw net::NetworkError("broker did not answer CONNECT");
        if (ack->return_code != 0) throw net::NetworkError("broker refused connection, code " + std::to_string(ack->return_code));
    } catch (const MqttError& e) {
        sock_.close();
        throw net::NetworkError(std::string("bad CONNACK: ") + e.what());
    } catch (...) {
        sock_.close();
        throw;
    }
    sock_.set_timeout(std::chrono::milliseconds(0));
    {
        std::lock_guard lock(state_mutex_);
        acks_.clear();
    }
    connected_ = true;
    reader_ = std::thread([this] { reader(); });
}

void Client::disconnect() {
    if (connected_) {
        Packet bye;
        bye.type = PacketType::disconnect;
        try {
            std::lock_guard lock(write_mutex_);
            sock_.write_all(encode(bye));
        } catch (const net::NetworkError&) {
        }
    }
    connected_ = false;
    sock_.shutdown();
    if (reader_.joinable()) reader_.join();
    sock_.close();
    cv_.notify_all();
}

void Client::send(const Packet& p) {
    if (options_.loss && options_.loss->drop(p)) return;
    std::lock_guard lock(write_mutex_);
    try {
        sock_.write_all(encode(p));
    } catch (const net::NetworkError&) {
        connected_ = false;
        cv_.notify_all();
        throw;
    }
}

std::uint16_t Client::next_id() {
    if (++last_id_ == 0) last_id_ = 1;
    return last_id_;
}

void Client::reader() {
    try {
        for (;;) {
            auto p = read_packet(sock_);
            if (!p) break;
            if (options_.loss && options_.loss->drop(*p)) continue;
            if (p->type == PacketType::publish) {
                std::vector<Handler> matched;
                {
                    std::lock_guard lock(state_mutex_);
                    for (const auto& [filter, h] : handlers_) {
                        if (topic_matches(filter, p->topic)) matched.push_back(h);
                    }
                }
                for (const auto& h : matched) h(p->topic, p->payload, p->dup);
                if (p->qos == 1) send(Packet::make_puback(p->packet_id));
            } else {
                std::lock_guard lock(state_mutex_);
                acks_.push_back(std::move(*p));
                cv_.notify_all();
            }
        }
    } catch (const MqttError&) {
    } catch (const net::NetworkError&) {
    }
    connected_ = false;
    cv_.notify_all();
}

std::optional<Packet> Client::await(PacketType type, std::uint16_t id, std::chrono::milliseconds timeout) {
    std::unique_lock lock(state_mutex_);
    const auto deadline = std::chrono::steady_clock::now() + timeout;
    for (;;) {
        // Anything else queued is a late duplicate for an earlier request.
        while (!acks_.empty()) {
            Packet p = std::move(acks_.front());
            acks_.pop_front();
            if (p.type == type && p.packet_id == id) return p;
        }
        if (!connected_) throw net::NetworkError("connection to broker lost");
        if (cv_.wait_until(lock, deadline) == std::cv_status::timeout && acks_.empty()) {
            return std::nullopt;
        }
    }
}

void Client::publish(const std::string& topic, const std::string& payload, std::uint8_t qos) {
    std::lock_guard op(op_mutex_);
    if (!connected_) throw net::NetworkError("not connected");
    if (qos == 0) {
        send(Packet::make_publish(topic, payload, 0));
        return;
    }
    Packet p = Packet::make_publish(topic, payload, 1, next_id());
    for (int attempt = 0; attempt < options_.max_attempts; ++attempt) {
        if (attempt > 0) {
            p.dup = true;
            ++retransmits_;
        }
        send(p);
        if (await(PacketType::puback, p.packet_id, options_.ack_timeout)) return;
    }
    throw net::NetworkError("no PUBACK after " + std::to_string(options_.max_attempts) + " attempts");
}

void Client::subscribe(const std::string& filter, std::uint8_t qos, Handler handler) {
    std::lock_guard op(op_mutex_);
    if (!connected_) throw net::NetworkError("not connected");
    {
        std::lock_guard lock(state_mutex_);
        handlers_.emplace_back(filter, std::move(handler));
    }
    const Packet sub = Packet::make_subscribe(next_id(), filter, qos);
    send(sub);
    const auto ack = await(PacketType::suback, sub.packet_id, options_.connect_timeout);
    if (!ack) throw net::NetworkError("no SUBACK");
    if (ack->granted.empty() || ack->granted[0] == 0x80) throw net::NetworkError("subscription refused");
}

void Client::ping() {
    std::lock_guard op(op_mutex_);
    Packet req;
    req.type = PacketType::pingreq;
    send(req);
    if (!await(PacketType::pingresp, 0, options_.connect_timeout)) {
        throw net::NetworkError("no PINGRESP");
    }
}

}  // namespace chamber::mqtt
