#include "chamber/mqtt.hpp"

#include <array>

namespace chamber::mqtt {

const char* to_string(PacketType t) {
    switch (t) {
        case PacketType::connect: return "CONNECT";
        case PacketType::connack: return "CONNACK";
        case PacketType::publish: return "PUBLISH";
        case PacketType::puback: return "PUBACK";
        case PacketType::subscribe: return "SUBSCRIBE";
        case PacketType::suback: return "SUBACK";
        case PacketType::pingreq: return "PINGREQ";
        case PacketType::pingresp: return "PINGRESP";
        case PacketType::disconnect: return "DISCONNECT";
    }
    return "?";
}

Packet Packet::make_connect(std::string client_id, std::uint16_t keep_alive) {
    Packet p;
    p.type = PacketType::connect;
    p.client_id = std::move(client_id);
    p.keep_alive = keep_alive;
    return p;
}

Packet Packet::make_publish(std::string topic, std::string payload, std::uint8_t qos, std::uint16_t packet_id) {
    Packet p;
    p.type = PacketType::publish;
    p.topic = std::move(topic);
    p.payload = std::move(payload);
    p.qos = qos;
    p.packet_id = qos > 0 ? packet_id : 0;
    return p;
}

Packet Packet::make_puback(std::uint16_t packet_id) {
    Packet p;
    p.type = PacketType::puback;
    p.packet_id = packet_id;
    return p;
}

Packet Packet::make_subscribe(std::uint16_t packet_id, std::string filter, std::uint8_t qos) {
    Packet p;
    p.type = PacketType::subscribe;
    p.packet_id = packet_id;
    p.subscriptions.emplace_back(std::move(filter), qos);
    return p;
}

std::vector<std::uint8_t> encode_remaining_length(std::uint32_t value) {
    if (value > kMaxRemainingLength) throw std::invalid_argument("remaining length too large");
    std::vector<std::uint8_t> out;
    do {
        std::uint8_t byte = value % 128;
        value /= 128;
        if (value > 0) byte |= 0x80;
        out.push_back(byte);
    } while (value > 0);
    return out;
}

std::optional<std::pair<std::uint32_t, std::size_t>> decode_remaining_length(std::span<const std::uint8_t> bytes) {
    std::uint32_t value = 0;
    std::uint32_t multiplier = 1;
    for (std::size_t i = 0; i < 4; ++i) {
        if (i >= bytes.size()) return std::nullopt;
        value += (bytes[i] & 0x7F) * multiplier;
        if (!(bytes[i] & 0x80)) {
            // A non-final zero byte would make the encoding non-minimal.
            if (i > 0 && bytes[i] == 0) throw MqttError(i, "non-minimal remaining length");
            return std::pair{value, i + 1};
        }
        multiplier *= 128;
    }
    throw MqttError(3, "remaining length longer than four bytes");
}

namespace {

void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
    out.push_back(static_cast<std::uint8_t>(v >> 8));
    out.push_back(static_cast<std::uint8_t>(v));
}

void put_str(std::vector<std::uint8_t>& out, const std::string& s) {
    if (s.size() > 0xFFFF) throw std::invalid_argument("string longer than 65535 bytes");
    put_u16(out, static_cast<std::uint16_t>(s.size()));
    out.insert(out.end(), s.begin(), s.end());
}

void require_id(std::uint16_t id) {
    if (id == 0) throw std::invalid_argument("packet identifier must be non-zero");
}

class Reader {
public:
    Reader(std::span<const std::uint8_t> b, std::size_t base) : b_(b), base_(base) {}
    std::size_t pos() const { return base_ + i_; }
    bool done() const { return i_ == b_.size(); }
    std::uint8_t u8() {
        need(1);
        return b_[i_++];
    }
    std::uint16_t u16() {
        need(2);
        const auto v = static_cast<std::uint16_t>((b_[i_] << 8) | b_[i_ + 1]);
        i_ += 2;
        return v;
    }
    std::string str() {
        const std::size_t at = pos();
        const std::uint16_t n = u16();
        if (i_ + n > b_.size()) throw MqttError(at, "string runs past packet end");
        std::string s(b_.begin() + static_cast<std::ptrdiff_t>(i_), b_.begin() + static_cast<std::ptrdiff_t>(i_ + n));
        i_ += n;
        return s;
    }
    std::string rest() {
        std::string s(b_.begin() + static_cast<std::ptrdiff_t>(i_), b_.end());
        i_ = b_.size();
        return s;
    }
    void end() const {
        if (!done()) throw MqttError(pos(), "trailing bytes in packet");
    }

private:
    void need(std::size_t n) const {
        if (i_ + n > b_.size()) throw MqttError(pos(), "packet truncated");
    }
    std::span<const std::uint8_t> b_;
    std::size_t base_;
    std::size_t i_ = 0;
};

std::uint8_t fixed_flags(PacketType t) {
    return t == PacketType::subscribe ? 0x02 : 0x00;
}

}  // namespace

std::vector<std::uint8_t> encode(const Packet& p) {
    std::vector<std::uint8_t> body;
    std::uint8_t flags = fixed_flags(p.type);
    switch (p.type) {
        case PacketType::connect:
            put_str(body, "MQTT");
            body.push_back(4);
            body.push_back(p.clean_session ? 0x02 : 0x00);
            put_u16(body, p.keep_alive);
            put_str(body, p.client_id);
            break;
        case PacketType::connack:
            body.push_back(p.session_present ? 1 : 0);
            body.push_back(p.return_code);
            break;
        case PacketType::publish:
            if (p.qos > 1) throw std::invalid_argument("only QoS 0 and 1 are supported");
            if (!valid_topic(p.topic)) throw std::invalid_argument("invalid topic name '" + p.topic + "'");
            if (p.qos == 0 && p.dup) throw std::invalid_argument("DUP must be clear for QoS 0");
            flags = static_cast<std::uint8_t>((p.dup ? 0x08 : 0) | (p.qos << 1) | (p.retain ? 1 : 0));
            put_str(body, p.topic);
            if (p.qos > 0) {
                require_id(p.packet_id);
                put_u16(body, p.packet_id);
            }
            body.insert(body.end(), p.payload.begin(), p.payload.end());
            break;
        case PacketType::puback:
            require_id(p.packet_id);
            put_u16(body, p.packet_id);
            break;
        case PacketType::subscribe:
            require_id(p.packet_id);
            if (p.subscriptions.empty()) throw std::invalid_argument("SUBSCRIBE needs at least one filter");
            put_u16(body, p.packet_id);
            for (const auto& [filter, qos] : p.subscriptions) {
                if (!valid_filter(filter)) throw std::invalid_argument("invalid topic filter '" + filter + "'");
                if (qos > 1) throw std::invalid_argument("only QoS 0 and 1 are supported");
                put_str(body, filter);
                body.push_back(qos);
            }
            break;
        case PacketType::suback:
            require_id(p.packet_id);
            if (p.granted.empty()) throw std::invalid_argument("SUBACK needs at least one return code");
            put_u16(body, p.packet_id);
            body.insert(body.end(), p.granted.begin(), p.granted.end());
            break;
        case PacketType::pingreq:
        case PacketType::pingresp:
        case PacketType::disconnect:
            break;
        default:
            throw std::invalid_argument("unsupported packet type");
    }
    std::vector<std::uint8_t> out;
    out.push_back(static_cast<std::uint8_t>((static_cast<std::uint8_t>(p.type) << 4) | flags));
    const auto rl = encode_remaining_length(static_cast<std::uint32_t>(body.size()));
    out.insert(out.end(), rl.begin(), rl.end());
    out.insert(out.end(), body.begin(), body.end());
    return out;
}

Packet decode(std::span<const std::uint8_t> bytes) {
    if (bytes.empty()) throw MqttError(0, "empty input");
    const std::uint8_t first = bytes[0];
    std::optional<std::pair<std::uint32_t, std::size_t>> rl;
    try {
        rl = decode_remaining_length(bytes.subspan(1));
    } catch (const MqttError& e) {
        throw MqttError(e.offset() + 1, "malformed remaining length");
    }
    if (!rl) throw MqttError(bytes.size(), "truncated remaining length");
    const std::size_t start = 1 + rl->second;
    if (bytes.size() - start != rl->first) {
        throw MqttError(start, "remaining length " + std::to_string(rl->first) + " does not match " +
                                   std::to_string(bytes.size() - start) + " body bytes");
    }
    Packet p;
    const std::uint8_t type = first >> 4;
    const std::uint8_t flags = first & 0x0F;
    Reader r(bytes.subspan(start), start);
    switch (type) {
        case 1: case 2: case 3: case 4: case 8: case 9: case 12: case 13: case 14:
            p.type = static_cast<PacketType>(type);
            break;
        default:
            throw MqttError(0, "unsupported packet type " + std::to_string(type));
    }
    if (p.type != PacketType::publish && flags != fixed_flags(p.type)) throw MqttError(0, "reserved flags set");

    switch (p.type) {
        case PacketType::connect: {
            if (r.str() != "MQTT") throw MqttError(start, "protocol name is not MQTT");
            const std::size_t at = r.pos();
            if (r.u8() != 4) throw MqttError(at, "protocol level is not 4");
            const std::size_t fat = r.pos();
            const std::uint8_t cf = r.u8();
            if (cf & ~0x02) throw MqttError(fat, "unsupported connect flags");
            p.clean_session = cf & 0x02;
            p.keep_alive = r.u16();
            p.client_id = r.str();
            break;
        }
        case PacketType::connack: {
            const std::size_t at = r.pos();
            const std::uint8_t ack = r.u8();
            if (ack & ~0x01) throw MqttError(at, "reserved connack flags");
            p.session_present = ack & 1;
            p.return_code = r.u8();
            break;
        }
        case PacketType::publish: {
            p.dup = flags & 0x08;
            p.qos = (flags >> 1) & 0x03;
            p.retain = flags & 0x01;
            if (p.qos > 1) throw MqttError(0, "QoS " + std::to_string(p.qos) + " not supported");
            if (p.qos == 0 && p.dup) throw MqttError(0, "DUP set on QoS 0 publish");
            const std::size_t at = r.pos();
            p.topic = r.str();
            if (!valid_topic(p.topic)) throw MqttError(at, "invalid topic name");
            if (p.qos > 0) {
                const std::size_t id_at = r.pos();
                p.packet_id = r.u16();
                if (p.packet_id == 0) throw MqttError(id_at, "zero packet identifier");
            }
            p.payload = r.rest();
            break;
        }
        case PacketType::puback: {
            const std::size_t at = r.pos();
            p.packet_id = r.u16();
            if (p.packet_id == 0) throw MqttError(at, "zero packet identifier");
            break;
        }
        case PacketType::subscribe: {
            const std::size_t at = r.pos();
            p.packet_id = r.u16();
            if (p.packet_id == 0) throw MqttError(at, "zero packet identifier");
            if (r.done()) throw MqttError(r.pos(), "SUBSCRIBE without filters");
            while (!r.done()) {
                const std::size_t fat = r.pos();
                std::string filter = r.str();
                if (!valid_filter(filter)) throw MqttError(fat, "invalid topic filter");
                const std::size_t qat = r.pos();
                const std::uint8_t q = r.u8();
                if (q > 2) throw MqttError(qat, "invalid requested QoS");
                p.subscriptions.emplace_back(std::move(filter), q);
            }
            break;
        }
        case PacketType::suback: {
            const std::size_t at = r.pos();
            p.packet_id = r.u16();
            if (p.packet_id == 0) throw MqttError(at, "zero packet identifier");
            if (r.done()) throw MqttError(r.pos(), "SUBACK without return codes");
            while (!r.done()) p.granted.push_back(r.u8());
            break;
        }
        default:
            break;
    }
    r.end();
    return p;
}

std::optional<Packet> read_packet(net::Socket& sock) {
    std::vector<std::uint8_t> head(1);
    if (!sock.read_exact(head)) return std::nullopt;
    for (;;) {
        std::array<std::uint8_t, 1> b{};
        if (!sock.read_exact(b)) throw net::NetworkError("connection closed mid-packet");
        head.push_back(b[0]);
        const auto rl = decode_remaining_length(std::span(head).subspan(1));
        if (rl) {
            std::vector<std::uint8_t> bytes(head.size() + rl->first);
            std::copy(head.begin(), head.end(), bytes.begin());
            if (rl->first > 0 && !sock.read_exact(std::span(bytes).subspan(head.size()))) {
                throw net::NetworkError("connection closed mid-packet");
            }
            return decode(bytes);
        }
    }
}

bool valid_topic(const std::string& topic) {
    if (topic.empty() || topic.size() > 0xFFFF) return false;
    return topic.find_first_of(std::string("+#\0", 3)) == std::string::npos;
}

bool valid_filter(const std::string& filter) {
    if (filter.empty() || filter.size() > 0xFFFF || filter.find('\0') != std::string::npos) return false;
    std::size_t start = 0;
    for (;;) {
        const std::size_t slash = filter.find('/', start);
        const std::string level = filter.substr(start, slash == std::string::npos ? std::string::npos : slash - start);
        if (level.find_first_of("+#") != std::string::npos && level.size() != 1) return false;
        if (level == "#" && slash != std::string::npos) return false;
        if (slash == std::string::npos) return true;
        start = slash + 1;
    }
}

bool topic_matches(const std::string& filter, const std::string& topic) {
    // Topics starting with '$' are never matched by a leading wildcard.
    if (!topic.empty() && topic[0] == '$' && !filter.empty() && (filter[0] == '+' || filter[0] == '#')) return false;
    std::size_t f = 0, t = 0;
    for (;;) {
        const std::size_t fs = filter.find('/', f);
        const std::string flevel = filter.substr(f, fs == std::string::npos ? std::string::npos : fs - f);
        if (flevel == "#") return true;
        const std::size_t ts = topic.find('/', t);
        if (t > topic.size()) return false;
        const std::string tlevel = topic.substr(t, ts == std::string::npos ? std::string::npos : ts - t);
        if (flevel != "+" && flevel != tlevel) return false;
        const bool f_end = fs == std::string::npos;
        const bool t_end = ts == std::string::npos;
        if (f_end && t_end) return true;
        if (t_end) {
            // "a/#" also matches the parent level "a".
            return filter.compare(fs + 1, std::string::npos, "#") == 0;
        }
        if (f_end) return false;
        f = fs + 1;
        t = ts + 1;
    }
}

}  // namespace chamber::mqtt
