#include "chamber/mqtt.hpp"

#include <algorithm>

namespace chamber::mqtt {

Broker::Broker(Options options) : options_(std::move(options)), listener_(options_.host, options_.port) {}

Broker::~Broker() { stop(); }

std::size_t Broker::session_count() const {
    std::lock_guard lock(state_mutex_);
    return sessions_.size();
}

void Broker::start() {
    if (running_.exchange(true)) return;
    acceptor_ = std::thread([this] { accept_loop(); });
    retrier_ = std::thread([this] { retry_loop(); });
}

void Broker::stop() {
    if (!running_.exchange(false)) return;
    listener_.shutdown();
    stop_cv_.notify_all();
    if (acceptor_.joinable()) acceptor_.join();
    if (retrier_.joinable()) retrier_.join();
    {
        std::lock_guard lock(state_mutex_);
        for (auto& s : sessions_) s->sock->shutdown();
    }
    for (auto& t : workers_) {
        if (t.joinable()) t.join();
    }
    workers_.clear();
    sessions_.clear();
}

void Broker::accept_loop() {
    while (running_) {
        net::Socket s = listener_.accept();
        if (!s.valid() || !running_) break;
        auto session = std::make_shared<Session>();
        session->sock = std::make_shared<net::Socket>(std::move(s));
        std::lock_guard lock(state_mutex_);
        workers_.emplace_back([this, session] { serve(session); });
    }
}

void Broker::retry_loop() {
    std::unique_lock lock(state_mutex_);
    while (running_) {
        stop_cv_.wait_for(lock, options_.retry_interval / 2);
        const auto now = std::chrono::steady_clock::now();
        for (auto& s : sessions_) {
            if (s->alive && s->inflight && now - s->inflight_sent >= options_.retry_interval) {
                s->inflight->dup = true;
                s->inflight_sent = now;
                ++retransmits_;
                send(*s, *s->inflight);
            }
        }
    }
}

void Broker::send(Session& s, const Packet& p) {
    std::lock_guard lock(s.write_mutex);
    try {
        s.sock->write_all(encode(p));
    } catch (const net::NetworkError&) {
        s.alive = false;
        s.sock->shutdown();
    }
}

void Broker::pump(Session& s) {
    while (s.alive && !s.inflight && !s.queue.empty()) {
        Outgoing out = std::move(s.queue.front());
        s.queue.pop_front();
        if (out.qos == 0) {
            send(s, Packet::make_publish(std::move(out.topic), std::move(out.payload), 0));
            continue;
        }
        if (++s.next_id == 0) s.next_id = 1;
        s.inflight = Packet::make_publish(std::move(out.topic), std::move(out.payload), 1, s.next_id);
        s.inflight_sent = std::chrono::steady_clock::now();
        send(s, *s.inflight);
    }
}

void Broker::route(const Packet& pub) {
    std::lock_guard lock(state_mutex_);
    for (auto& s : sessions_) {
        if (!s->alive) continue;
        int granted = -1;
        for (const auto& [filter, qos] : s->filters) {
            if (topic_matches(filter, pub.topic)) granted = std::max<int>(granted, qos);
        }
        if (granted < 0) continue;
        s->queue.push_back({pub.topic, pub.payload, static_cast<std::uint8_t>(std::min<int>(granted, pub.qos))});
        pump(*s);
    }
}

void Broker::serve(std::shared_ptr<Session> s) {
    try {
        s->sock->set_timeout(std::chrono::milliseconds(5000));
        auto hello = read_packet(*s->sock);
        if (!hello || hello->type != PacketType::connect) throw MqttError(0, "first packet must be CONNECT");
        s->sock->set_timeout(std::chrono::milliseconds(0));
        s->client_id = hello->client_id;
        {
            std::lock_guard lock(state_mutex_);
            // A reconnecting client id takes over; the stale connection is dropped.
            for (auto& other : sessions_) {
                if (other->client_id == s->client_id && !s->client_id.empty()) {
                    other->alive = false;
                    other->sock->shutdown();
                }
            }
            sessions_.push_back(s);
        }
        Packet ack;
        ack.type = PacketType::connack;
        send(*s, ack);

        while (running_ && s->alive) {
            auto p = read_packet(*s->sock);
            if (!p || p->type == PacketType::disconnect) break;
            switch (p->type) {
                case PacketType::publish:
                    ++publishes_in_;
                    route(*p);
                    if (p->qos == 1) send(*s, Packet::make_puback(p->packet_id));
                    break;
                case PacketType::puback: {
                    std::lock_guard lock(state_mutex_);
                    if (s->inflight && s->inflight->packet_id == p->packet_id) {
                        s->inflight.reset();
                        pump(*s);
                    }
                    break;
                }
                case PacketType::subscribe: {
                    Packet sub;
                    sub.type = PacketType::suback;
                    sub.packet_id = p->packet_id;
                    {
                        std::lock_guard lock(state_mutex_);
                        for (const auto& [filter, qos] : p->subscriptions) {
                            const auto q = static_cast<std::uint8_t>(std::min<int>(qos, 1));
                            auto it = std::find_if(s->filters.begin(), s->filters.end(),
                                                   [&](const auto& f) { return f.first == filter; });
                            if (it != s->filters.end()) it->second = q;
                            else s->filters.emplace_back(filter, q);
                            sub.granted.push_back(q);
                        }
                    }
                    send(*s, sub);
                    break;
                }
                case PacketType::pingreq: {
                    Packet pong;
                    pong.type = PacketType::pingresp;
                    send(*s, pong);
                    break;
                }
                default:
                    throw MqttError(0, std::string("unexpected ") + to_string(p->type) + " from client");
            }
        }
    } catch (const MqttError&) {
    } catch (const net::NetworkError&) {
    }
    std::lock_guard lock(state_mutex_);
    s->alive = false;
    s->sock->shutdown();
    sessions_.remove(s);
}

}  // namespace chamber::mqtt
