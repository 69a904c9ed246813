#include "doctest.h"

#include "chamber/regmap.hpp"

#include <arpa/inet.h>
#include <bit>
#include <cmath>
#include <cstring>
#include <netinet/in.h>
#include <random>
#include <sys/socket.h>
#include <thread>
#include <unistd.h>

using namespace chamber::regmap;
namespace net = chamber::net;

namespace {

// Table-driven CRC-16/CCITT-FALSE, built independently of the bitwise one under test.
std::uint16_t oracle_crc(const std::vector<std::uint8_t>& data) {
    static const auto table = [] {
        std::array<std::uint16_t, 256> t{};
        for (unsigned i = 0; i < 256; ++i) {
            unsigned c = i << 8;
            for (int b = 0; b < 8; ++b) c = (c & 0x8000) ? ((c << 1) ^ 0x1021) : (c << 1);
            t[i] = static_cast<std::uint16_t>(c);
        }
        return t;
    }();
    std::uint16_t crc = 0xFFFF;
    for (auto byte : data) crc = static_cast<std::uint16_t>((crc << 8) ^ table[((crc >> 8) ^ byte) & 0xFF]);
    return crc;
}

// Hand-assembled frame bytes for the loopback oracle client.
std::vector<std::uint8_t> oracle_frame(std::uint8_t op, std::uint8_t db, std::uint16_t off, std::uint16_t len,
                                       const std::vector<std::uint8_t>& payload = {}) {
    std::vector<std::uint8_t> f{0xA7, 0x01, op, db, static_cast<std::uint8_t>(off >> 8), static_cast<std::uint8_t>(off),
                                static_cast<std::uint8_t>(len >> 8), static_cast<std::uint8_t>(len)};
    f.insert(f.end(), payload.begin(), payload.end());
    const auto crc = oracle_crc(f);
    f.push_back(static_cast<std::uint8_t>(crc >> 8));
    f.push_back(static_cast<std::uint8_t>(crc));
    return f;
}

std::vector<std::uint8_t> be(float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    return {static_cast<std::uint8_t>(bits >> 24), static_cast<std::uint8_t>(bits >> 16),
            static_cast<std::uint8_t>(bits >> 8), static_cast<std::uint8_t>(bits)};
}

Frame random_frame(std::mt19937_64& rng) {
    static const Op ops[] = {Op::read, Op::write, Op::read_resp, Op::write_resp, Op::error};
    Frame f;
    f.op = ops[rng() % 5];
    f.db = static_cast<std::uint8_t>(rng());
    f.offset = static_cast<std::uint16_t>(rng());
    switch (f.op) {
        case Op::read:
        case Op::write_resp:
            f.length = static_cast<std::uint16_t>(rng());
            break;
        case Op::write:
        case Op::read_resp:
            f.length = static_cast<std::uint16_t>(rng() % (kMaxPayload + 1));
            f.payload.resize(f.length);
            for (auto& b : f.payload) b = static_cast<std::uint8_t>(rng());
            break;
        case Op::error:
            f.length = 1;
            f.payload = {static_cast<std::uint8_t>(1 + rng() % 3)};
            break;
    }
    return f;
}

struct RawClient {
    int fd;
    explicit RawClient(std::uint16_t port) {
        fd = ::socket(AF_INET, SOCK_STREAM, 0);
        sockaddr_in a{};
        a.sin_family = AF_INET;
        a.sin_port = htons(port);
        a.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
        REQUIRE(::connect(fd, reinterpret_cast<sockaddr*>(&a), sizeof a) == 0);
        timeval tv{5, 0};
        ::setsockopt(fd, SOL_SOCKET, SO_RCVTIMEO, &tv, sizeof tv);
    }
    ~RawClient() { ::close(fd); }
    void send(const std::vector<std::uint8_t>& b) { REQUIRE(::send(fd, b.data(), b.size(), MSG_NOSIGNAL) == static_cast<ssize_t>(b.size())); }
    std::vector<std::uint8_t> recv_n(std::size_t n) {
        std::vector<std::uint8_t> out(n);
        std::size_t got = 0;
        while (got < n) {
            const auto r = ::recv(fd, out.data() + got, n - got, 0);
            if (r <= 0) {
                out.resize(got);
                break;
            }
            got += static_cast<std::size_t>(r);
        }
        return out;
    }
    bool closed_by_peer() {
        std::uint8_t b;
        return ::recv(fd, &b, 1, 0) == 0;
    }
};

void publish_pair(RegisterImage& img, float t, float rh) {
    img.update(1, [&](std::span<const WriteCommand>, Block& b) {
        put_f32(b, layout::sensor_t(1), t);
        put_f32(b, layout::sensor_rh(1), rh);
    });
}

}  // namespace

TEST_CASE("float encodings match IEEE-754 binary32") {
    CHECK(encode_f32(40.0f) == std::array<std::uint8_t, 4>{0x42, 0x20, 0x00, 0x00});
    CHECK(encode_f32(25.0f) == std::array<std::uint8_t, 4>{0x41, 0xC8, 0x00, 0x00});
    const std::array<std::uint8_t, 4> b{0x42, 0x20, 0x00, 0x00};
    CHECK(decode_f32(b) == 40.0f);
    const std::array<std::uint8_t, 4> nan{0x7F, 0xC0, 0x00, 0x00};
    CHECK(std::isnan(decode_f32(nan)));
}

TEST_CASE("random finite floats round trip bit-exactly") {
    std::mt19937 rng(7);
    int n = 0;
    while (n < 10000) {
        const auto bits = static_cast<std::uint32_t>(rng());
        const float v = std::bit_cast<float>(bits);
        if (!std::isfinite(v)) continue;
        const auto enc = encode_f32(v);
        CHECK(std::vector<std::uint8_t>(enc.begin(), enc.end()) == be(v));
        CHECK(std::bit_cast<std::uint32_t>(decode_f32(enc)) == bits);
        ++n;
    }
}

TEST_CASE("integer helpers are big-endian") {
    std::vector<std::uint8_t> buf(16);
    put_u16(buf, 0, 0x1234);
    put_u32(buf, 2, 0xDEADBEEF);
    put_u64(buf, 6, 0x0102030405060708ull);
    CHECK(buf[0] == 0x12);
    CHECK(buf[2] == 0xDE);
    CHECK(buf[6] == 0x01);
    CHECK(buf[13] == 0x08);
    CHECK(get_u16(buf, 0) == 0x1234);
    CHECK(get_u32(buf, 2) == 0xDEADBEEF);
    CHECK(get_u64(buf, 6) == 0x0102030405060708ull);
}

TEST_CASE("crc16 check value and table oracle agree") {
    const std::vector<std::uint8_t> check{'1', '2', '3', '4', '5', '6', '7', '8', '9'};
    CHECK(crc16_ccitt(check) == 0x29B1);
    std::mt19937_64 rng(3);
    for (int i = 0; i < 2000; ++i) {
        std::vector<std::uint8_t> d(rng() % 300);
        for (auto& b : d) b = static_cast<std::uint8_t>(rng());
        CHECK(crc16_ccitt(d) == oracle_crc(d));
    }
}

TEST_CASE("frame codec matches hand-assembled bytes") {
    const auto f = Frame::write_request(1, 60, be(30.0f));
    CHECK(encode_frame(f) == oracle_frame(0x02, 1, 60, 4, be(30.0f)));
    CHECK(encode_frame(Frame::read_request(2, 0, 8)) == oracle_frame(0x01, 2, 0, 8));
    CHECK(encode_frame(Frame::error_frame(ErrorCode::read_only, 1)) == oracle_frame(0xFF, 1, 0, 1, {0x03}));
}

TEST_CASE("frame codec round trips random valid frames") {
    std::mt19937_64 rng(11);
    for (int i = 0; i < 10000; ++i) {
        const Frame f = random_frame(rng);
        const auto bytes = encode_frame(f);
        REQUIRE(bytes.size() == kHeaderSize + f.payload.size() + kCrcSize);
        CHECK(decode_frame(bytes) == f);
        CHECK(encode_frame(decode_frame(bytes)) == bytes);
    }
}

TEST_CASE("any single-bit corruption is rejected") {
    std::mt19937_64 rng(5);
    int flips = 0;
    for (int i = 0; i < 300; ++i) {
        const auto bytes = encode_frame(random_frame(rng));
        for (std::size_t bit = 0; bit < bytes.size() * 8; ++bit) {
            auto bad = bytes;
            bad[bit / 8] ^= static_cast<std::uint8_t>(1u << (bit % 8));
            CHECK_THROWS_AS(decode_frame(bad), RegmapError);
            ++flips;
        }
    }
    CHECK(flips > 10000);
}

TEST_CASE("decode rejects structural problems") {
    CHECK_THROWS_AS(decode_frame(std::vector<std::uint8_t>{0xA7, 0x01}), RegmapError);
    auto unknown = oracle_frame(0x05, 1, 0, 0);
    CHECK_THROWS_AS(decode_frame(unknown), RegmapError);
    auto oversize = oracle_frame(0x02, 1, 0, 241, std::vector<std::uint8_t>(241));
    CHECK_THROWS_AS(decode_frame(oversize), RegmapError);
    auto trailing = oracle_frame(0x01, 1, 0, 8);
    trailing.push_back(0);
    CHECK_THROWS_AS(decode_frame(trailing), RegmapError);
    Frame lying{Op::write, 1, 0, 3, {1, 2}};
    CHECK_THROWS_AS(encode_frame(lying), std::invalid_argument);
}

TEST_CASE("request validation maps to error codes") {
    auto code = [](const Frame& f) {
        try {
            validate_request(f, 4);
        } catch (const RegmapError& e) {
            return static_cast<int>(e.code());
        }
        return 0;
    };
    CHECK(code(Frame::read_request(1, 0, 8)) == 0);
    CHECK(code(Frame::read_request(1, 250, 16)) == 0x02);
    CHECK(code(Frame::read_request(0, 0, 8)) == 0x02);
    CHECK(code(Frame::read_request(5, 0, 8)) == 0x02);
    CHECK(code(Frame::read_request(1, 0, 0)) == 0x02);
    CHECK(code(Frame::read_request(1, 17, 240)) == 0x02);
    CHECK(code(Frame::read_request(1, 16, 240)) == 0);
    CHECK(code(Frame::read_request(1, 16, 241)) == 0x02);
    CHECK(code(Frame::read_request(1, 0, 240)) == 0);
}

TEST_CASE("writable regions are setpoints and gains only") {
    CHECK(externally_writable(60, 8));
    CHECK(externally_writable(64, 4));
    CHECK(externally_writable(84, 24));
    CHECK_FALSE(externally_writable(56, 8));
    CHECK_FALSE(externally_writable(0, 4));
    CHECK_FALSE(externally_writable(64, 8));
    CHECK_FALSE(externally_writable(80, 2));
    CHECK_FALSE(externally_writable(104, 8));
    CHECK_FALSE(externally_writable(60, 0));
}

TEST_CASE("image queues external writes for the owning block") {
    RegisterImage img;
    img.external_write(2, layout::kSetpointT, be(30.0f));
    img.external_write(1, layout::kSetpointRh, be(65.0f));
    CHECK(get_f32(img.read(2, 60, 4), 0) == 30.0f);
    CHECK_THROWS_AS(img.external_write(1, 0, be(1.0f)), RegmapError);
    std::size_t seen = 0;
    img.update(1, [&](std::span<const WriteCommand> cmds, Block&) {
        seen = cmds.size();
        REQUIRE(seen == 1);
        CHECK(cmds[0].offset == layout::kSetpointRh);
    });
    CHECK(seen == 1);
    img.update(1, [&](std::span<const WriteCommand> cmds, Block&) { seen = cmds.size(); });
    CHECK(seen == 0);
    img.update(2, [&](std::span<const WriteCommand> cmds, Block&) { seen = cmds.size(); });
    CHECK(seen == 1);
}

TEST_CASE("server handles read, write and errors over TCP") {
    RegisterImage img;
    publish_pair(img, 39.74f, 76.14f);
    RegisterServer server(img, "127.0.0.1", 0);
    server.start();
    RegisterClient client("127.0.0.1", server.port());

    const auto pair = client.read(1, 0, 8);
    auto expect = be(39.74f);
    const auto rh = be(76.14f);
    expect.insert(expect.end(), rh.begin(), rh.end());
    CHECK(pair == expect);

    client.write(1, 60, be(30.0f));
    CHECK(get_f32(client.read(1, 60, 4), 0) == 30.0f);

    auto code_of = [](auto&& fn) {
        try {
            fn();
        } catch (const RegmapError& e) {
            return static_cast<int>(e.code());
        }
        return 0;
    };
    CHECK(code_of([&] { client.read(1, 250, 16); }) == 0x02);
    CHECK(code_of([&] { client.write(1, 0, be(1.0f)); }) == 0x03);
    CHECK(code_of([&] { client.read(9, 0, 4); }) == 0x02);
    // Connection survives semantic errors.
    CHECK(client.read_process_image(1).size() == layout::kEnd);
    server.stop();
}

TEST_CASE("garbage gets ERR 0x01 then close") {
    RegisterImage img;
    RegisterServer server(img, "127.0.0.1", 0);
    server.start();
    {
        RawClient raw(server.port());
        raw.send({0x00, 0x11, 0x22, 0x33, 0x44, 0x55, 0x66, 0x77, 0x88, 0x99});
        CHECK(raw.recv_n(11) == oracle_frame(0xFF, 0, 0, 1, {0x01}));
        CHECK(raw.closed_by_peer());
    }
    {
        RawClient raw(server.port());
        auto f = oracle_frame(0x01, 1, 0, 8);
        f.back() ^= 0x01;
        raw.send(f);
        CHECK(raw.recv_n(11) == oracle_frame(0xFF, 0, 0, 1, {0x01}));
        CHECK(raw.closed_by_peer());
    }
    server.stop();
}

TEST_CASE("1000 sequential reads keep framing aligned") {
    RegisterImage img;
    RegisterServer server(img, "127.0.0.1", 0);
    server.start();
    RawClient raw(server.port());
    std::mt19937 rng(9);
    for (int i = 0; i < 1000; ++i) {
        const float t = 20.0f + static_cast<float>(i) * 0.01f;
        publish_pair(img, t, 60.0f);
        const std::uint16_t len = static_cast<std::uint16_t>(1 + rng() % 120);
        raw.send(oracle_frame(0x01, 1, 0, len));
        const auto resp = raw.recv_n(kHeaderSize + len + kCrcSize);
        REQUIRE(resp.size() == kHeaderSize + len + kCrcSize);
        std::vector<std::uint8_t> payload(resp.begin() + 8, resp.end() - 2);
        REQUIRE(resp == oracle_frame(0x81, 1, 0, len, payload));
        if (len >= 4) {
            auto tb = be(t);
            CHECK(std::equal(tb.begin(), tb.end(), payload.begin()));
        }
    }
    CHECK(server.requests_served() == 1000);
    server.stop();
}

TEST_CASE("concurrent readers never see torn sensor pairs") {
    RegisterImage img;
    publish_pair(img, 0.0f, 0.0f);
    RegisterServer server(img, "127.0.0.1", 0);
    server.start();
    std::atomic<bool> done{false};
    // Each step writes T = k and RH = k + 0.5 so a mixed pair is detectable.
    std::thread writer([&] {
        for (int k = 1; !done; ++k) {
            publish_pair(img, static_cast<float>(k % 100000), static_cast<float>(k % 100000) + 0.5f);
        }
    });
    std::atomic<int> torn{0}, reads{0};
    auto reader = [&] {
        RegisterClient c("127.0.0.1", server.port());
        for (int i = 0; i < 400; ++i) {
            const auto b = c.read(1, 0, 8);
            const float t = get_f32(b, 0), rh = get_f32(b, 4);
            if (!(t == 0.0f && rh == 0.0f) && rh != t + 0.5f) ++torn;
            ++reads;
        }
    };
    std::thread r1(reader), r2(reader);
    r1.join();
    r2.join();
    done = true;
    writer.join();
    CHECK(reads == 800);
    CHECK(torn == 0);
    server.stop();
}

TEST_CASE("server stop releases blocked connections") {
    RegisterImage img;
    auto server = std::make_unique<RegisterServer>(img, "127.0.0.1", 0);
    server->start();
    RawClient idle(server->port());
    idle.send(oracle_frame(0x01, 1, 0, 4));
    CHECK(idle.recv_n(14).size() == 14);
    server->stop();
    CHECK(idle.closed_by_peer());
}
