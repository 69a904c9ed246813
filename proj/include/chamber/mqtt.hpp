#pragma once

#include "chamber/net.hpp"

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <functional>
#include <list>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <thread>
#include <utility>
#include <vector>

namespace chamber::mqtt {

inline constexpr std::uint16_t kDefaultPort = 1883;
inline constexpr std::uint32_t kMaxRemainingLength = 268'435'455;

enum class PacketType : std::uint8_t {
    connect = 1,
    connack = 2,
    publish = 3,
    puback = 4,
    subscribe = 8,
    suback = 9,
    pingreq = 12,
    pingresp = 13,
    disconnect = 14,
};

const char* to_string(PacketType t);

/// Decode failure; offset() is the byte position where the input stopped making sense.
class MqttError : public std::runtime_error {
public:
    MqttError(std::size_t offset, const std::string& what)
        : std::runtime_error(what + " at offset " + std::to_string(offset)), offset_(offset) {}
    std::size_t offset() const { return offset_; }

private:
    std::size_t offset_;
};

/// Flat representation of the supported packet subset. Only the fields relevant to `type` are encoded.
struct Packet {
    PacketType type = PacketType::pingreq;
    // CONNECT
    std::string client_id;
    std::uint16_t keep_alive = 60;
    bool clean_session = true;
    // CONNACK
    bool session_present = false;
    std::uint8_t return_code = 0;
    // PUBLISH
    std::string topic;
    std::string payload;
    std::uint8_t qos = 0;
    bool dup = false;
    bool retain = false;
    // PUBLISH (qos 1), PUBACK, SUBSCRIBE, SUBACK
    std::uint16_t packet_id = 0;
    // SUBSCRIBE / SUBACK
    std::vector<std::pair<std::string, std::uint8_t>> subscriptions;
    std::vector<std::uint8_t> granted;

    bool operator==(const Packet&) const = default;

    static Packet make_connect(std::string client_id, std::uint16_t keep_alive = 60);
    static Packet make_publish(std::string topic, std::string payload, std::uint8_t qos, std::uint16_t packet_id = 0);
    static Packet make_puback(std::uint16_t packet_id);
    static Packet make_subscribe(std::uint16_t packet_id, std::string filter, std::uint8_t qos);
};

std::vector<std::uint8_t> encode_remaining_length(std::uint32_t value);

/// Returns {value, bytes used}, nullopt if more bytes are needed. Throws MqttError past four bytes.
std::optional<std::pair<std::uint32_t, std::size_t>> decode_remaining_length(std::span<const std::uint8_t> bytes);

std::vector<std::uint8_t> encode(const Packet& packet);

/// Decodes exactly one packet occupying all of `bytes`.
Packet decode(std::span<const std::uint8_t> bytes);

/// Reads one packet from a stream. Returns nullopt on clean EOF.
std::optional<Packet> read_packet(net::Socket& sock);

bool valid_topic(const std::string& topic);
bool valid_filter(const std::string& filter);
bool topic_matches(const std::string& filter, const std::string& topic);

/// Minimal in-process broker: QoS 0/1, "+" and "#" filters, one in-flight QoS1 message per
/// subscriber so delivery order is preserved across retransmissions.
class Broker {
public:
    struct Options {
        std::string host = "127.0.0.1";
        std::uint16_t port = kDefaultPort;
        std::chrono::milliseconds retry_interval{200};
    };

    explicit Broker(Options options);
    ~Broker();
    Broker(const Broker&) = delete;
    Broker& operator=(const Broker&) = delete;

    void start();
    void stop();
    std::uint16_t port() const { return listener_.port(); }
    std::uint64_t publishes_received() const { return publishes_in_.load(); }
    std::uint64_t retransmissions() const { return retransmits_.load(); }
    std::size_t session_count() const;

private:
    struct Outgoing {
        std::string topic;
        std::string payload;
        std::uint8_t qos;
    };
    struct Session {
        std::shared_ptr<net::Socket> sock;
        std::mutex write_mutex;
        std::string client_id;
        std::vector<std::pair<std::string, std::uint8_t>> filters;
        std::deque<Outgoing> queue;
        std::optional<Packet> inflight;
        std::chrono::steady_clock::time_point inflight_sent{};
        std::uint16_t next_id = 1;
        bool alive = true;
    };

    void accept_loop();
    void retry_loop();
    void serve(std::shared_ptr<Session> s);
    void route(const Packet& publish);
    void pump(Session& s);  // caller holds state_mutex_
    void send(Session& s, const Packet& p);

    Options options_;
    net::Listener listener_;
    std::atomic<bool> running_{false};
    std::atomic<std::uint64_t> publishes_in_{0};
    std::atomic<std::uint64_t> retransmits_{0};
    mutable std::mutex state_mutex_;
    std::condition_variable stop_cv_;
    std::list<std::shared_ptr<Session>> sessions_;
    std::vector<std::thread> workers_;
    std::thread acceptor_;
    std::thread retrier_;
};

/// Deterministic packet dropper for PUBLISH and PUBACK, used to exercise QoS1 recovery.
class LossModel {
public:
    LossModel() = default;
    LossModel(double drop_probability, std::uint64_t seed) : p_(drop_probability), rng_(seed) {}
    bool drop(const Packet& p);
    std::uint64_t dropped() const { return dropped_.load(); }

private:
    double p_ = 0.0;
    std::mutex mutex_;
    std::mt19937_64 rng_{0};
    std::atomic<std::uint64_t> dropped_{0};
};

class Client {
public:
    struct Options {
        std::string host = "127.0.0.1";
        std::uint16_t port = kDefaultPort;
        std::string client_id = "chamber-twin";
        std::uint16_t keep_alive = 60;
        std::chrono::milliseconds connect_timeout{2000};
        std::chrono::milliseconds ack_timeout{250};
        int max_attempts = 40;
        std::shared_ptr<LossModel> loss;  // applied to both directions when set
    };
    using Handler = std::function<void(const std::string& topic, const std::string& payload, bool dup)>;

    explicit Client(Options options);
    ~Client();
    Client(const Client&) = delete;
    Client& operator=(const Client&) = delete;

    /// Throws net::NetworkError when the broker is unreachable or refuses the session.
    void connect();
    void disconnect();
    bool connected() const { return connected_.load(); }

    /// QoS1 blocks until PUBACK, re-sending with DUP after each ack timeout.
    void publish(const std::string& topic, const std::string& payload, std::uint8_t qos = 1);
    void subscribe(const std::string& filter, std::uint8_t qos, Handler handler);
    void ping();

    std::uint64_t retransmissions() const { return retransmits_.load(); }

private:
    void reader();
    void send(const Packet& p);
    std::optional<Packet> await(PacketType type, std::uint16_t id, std::chrono::milliseconds timeout);
    std::uint16_t next_id();

    Options options_;
    net::Socket sock_;
    std::thread reader_;
    std::atomic<bool> connected_{false};
    std::atomic<std::uint64_t> retransmits_{0};
    std::mutex write_mutex_;
    std::mutex op_mutex_;  // one outstanding request at a time
    std::mutex state_mutex_;
    std::condition_variable cv_;
    std::deque<Packet> acks_;
    std::vector<std::pair<std::string, Handler>> handlers_;
    std::uint16_t last_id_ = 0;
};

}  // namespace chamber::mqtt
