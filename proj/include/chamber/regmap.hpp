#pragma once

#include "chamber/net.hpp"

#include <array>
#include <atomic>
#include <cstdint>
#include <functional>
#include <list>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <span>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace chamber::regmap {

inline constexpr std::size_t kBlockSize = 256;
inline constexpr std::size_t kMaxPayload = 240;
inline constexpr int kBlockCount = 4;
inline constexpr std::uint16_t kDefaultPort = 10102;
inline constexpr std::uint8_t kMagic = 0xA7;
inline constexpr std::uint8_t kVersion = 0x01;
inline constexpr std::size_t kHeaderSize = 8;
inline constexpr std::size_t kCrcSize = 2;

using Block = std::array<std::uint8_t, kBlockSize>;

/// Byte offsets inside one chamber data block.
namespace layout {
constexpr std::size_t sensor_t(int id) { return static_cast<std::size_t>(id - 1) * 8; }
constexpr std::size_t sensor_rh(int id) { return sensor_t(id) + 4; }
inline constexpr std::size_t kPressure = 56;
inline constexpr std::size_t kSetpointT = 60;
inline constexpr std::size_t kSetpointRh = 64;
inline constexpr std::size_t kHeaterDuty = 68;
inline constexpr std::size_t kCoolDuty = 72;
inline constexpr std::size_t kSteamCurrent = 76;
inline constexpr std::size_t kAlarmWord = 80;
inline constexpr std::size_t kStatusWord = 82;
// Loop gains: kp, ti, td for temperature then humidity.
inline constexpr std::size_t kTempKp = 84;
inline constexpr std::size_t kTempTi = 88;
inline constexpr std::size_t kTempTd = 92;
inline constexpr std::size_t kHumKp = 96;
inline constexpr std::size_t kHumTi = 100;
inline constexpr std::size_t kHumTd = 104;
/// Simulation clock, UTC epoch milliseconds, unsigned 64-bit.
inline constexpr std::size_t kClockMs = 108;
/// Publish counter, unsigned 32-bit, incremented on every simulation tick.
inline constexpr std::size_t kSequence = 116;
inline constexpr std::size_t kEnd = 120;
}  // namespace layout

namespace alarm_bit {
inline constexpr std::uint16_t kDeviationT = 1u << 0;
inline constexpr std::uint16_t kDeviationRh = 1u << 1;
inline constexpr std::uint16_t kBlowerFail = 1u << 2;
inline constexpr std::uint16_t kSensorFail = 1u << 3;
inline constexpr std::uint16_t kTuningFail = 1u << 4;
inline constexpr std::uint16_t kUnitFailover = 1u << 5;
}  // namespace alarm_bit

namespace status_bit {
inline constexpr std::uint16_t kBlowerOn = 1u << 0;
inline constexpr std::uint16_t kHeaterUnit2 = 1u << 1;
inline constexpr std::uint16_t kCoolerUnit2 = 1u << 2;
inline constexpr std::uint16_t kSteamUnit2 = 1u << 3;
inline constexpr std::uint16_t kTuning = 1u << 4;
inline constexpr std::uint16_t kDoorOpen = 1u << 5;
/// Bit 8 + (k - 1) set when sensor k reports bad quality.
constexpr std::uint16_t sensor_bad(int id) { return static_cast<std::uint16_t>(1u << (7 + id)); }
}  // namespace status_bit

/// Whether an external client may write [offset, offset + length).
bool externally_writable(std::size_t offset, std::size_t length);

std::array<std::uint8_t, 4> encode_f32(float value);
float decode_f32(std::span<const std::uint8_t, 4> bytes);

void put_f32(std::span<std::uint8_t> buf, std::size_t offset, float value);
float get_f32(std::span<const std::uint8_t> buf, std::size_t offset);
void put_u16(std::span<std::uint8_t> buf, std::size_t offset, std::uint16_t value);
std::uint16_t get_u16(std::span<const std::uint8_t> buf, std::size_t offset);
void put_u32(std::span<std::uint8_t> buf, std::size_t offset, std::uint32_t value);
std::uint32_t get_u32(std::span<const std::uint8_t> buf, std::size_t offset);
void put_u64(std::span<std::uint8_t> buf, std::size_t offset, std::uint64_t value);
std::uint64_t get_u64(std::span<const std::uint8_t> buf, std::size_t offset);

/// CRC-16/CCITT-FALSE: poly 0x1021, init 0xFFFF, no reflection.
std::uint16_t crc16_ccitt(std::span<const std::uint8_t> data);

enum class Op : std::uint8_t { read = 0x01, write = 0x02, read_resp = 0x81, write_resp = 0x82, error = 0xFF };

enum class ErrorCode : std::uint8_t { crc = 0x01, bounds = 0x02, read_only = 0x03 };

class RegmapError : public std::runtime_error {
public:
    RegmapError(ErrorCode code, const std::string& what) : std::runtime_error(what), code_(code) {}
    ErrorCode code() const { return code_; }

private:
    ErrorCode code_;
};

struct Frame {
    Op op = Op::read;
    std::uint8_t db = 1;
    std::uint16_t offset = 0;
    std::uint16_t length = 0;
    std::vector<std::uint8_t> payload;

    bool operator==(const Frame&) const = default;

    static Frame read_request(std::uint8_t db, std::uint16_t offset, std::uint16_t length);
    static Frame write_request(std::uint8_t db, std::uint16_t offset, std::vector<std::uint8_t> data);
    static Frame error_frame(ErrorCode code, std::uint8_t db = 0);
};

/// Number of payload bytes a frame carries for the given op and length field.
/// Returns nullopt for unknown ops or lengths that cannot be framed.
std::optional<std::size_t> payload_size(std::uint8_t op, std::uint16_t length);

std::vector<std::uint8_t> encode_frame(const Frame& frame);

/// Decodes exactly one frame occupying all of `bytes`. Throws RegmapError(crc) for bad magic,
/// version, op, size mismatch or checksum.
Frame decode_frame(std::span<const std::uint8_t> bytes);

/// Semantic checks on a decoded request: db exists, bounds, length limits.
void validate_request(const Frame& frame, int block_count);

struct WriteCommand {
    int db = 1;
    std::size_t offset = 0;
    std::vector<std::uint8_t> data;
};

/// The per-chamber data block image. One simulation writer, many readers; external
/// writes land immediately and are also queued for the simulation to consume.
class RegisterImage {
public:
    explicit RegisterImage(int blocks = kBlockCount);

    int block_count() const { return static_cast<int>(blocks_.size()); }

    /// Consistent copy of [offset, offset + length) of block `db` (1-based).
    std::vector<std::uint8_t> read(int db, std::size_t offset, std::size_t length) const;
    Block snapshot(int db) const;

    /// Client write path: rejects simulation-owned regions with RegmapError(read_only).
    void external_write(int db, std::size_t offset, std::span<const std::uint8_t> data);

    /// Simulation tick: drains queued external writes for `db` and lets `fn` rewrite the block,
    /// all under one exclusive lock so readers never see a half-updated block.
    void update(int db, const std::function<void(std::span<const WriteCommand>, Block&)>& fn);

    /// Unconditional write used by in-process owners (initialisation, tests).
    void write_internal(int db, std::size_t offset, std::span<const std::uint8_t> data);

private:
    void check(int db, std::size_t offset, std::size_t length) const;

    mutable std::shared_mutex mutex_;
    std::vector<Block> blocks_;
    std::vector<WriteCommand> pending_;
};

/// TCP server speaking the frame protocol against a RegisterImage.
class RegisterServer {
public:
    RegisterServer(RegisterImage& image, std::string host = "127.0.0.1", std::uint16_t port = kDefaultPort);
    ~RegisterServer();
    RegisterServer(const RegisterServer&) = delete;
    RegisterServer& operator=(const RegisterServer&) = delete;

    void start();
    void stop();
    std::uint16_t port() const { return listener_.port(); }
    std::uint64_t requests_served() const { return served_.load(); }

    /// Handles one request frame (already decoded) and returns the response.
    static Frame handle(RegisterImage& image, const Frame& request);

private:
    void accept_loop();
    void serve_connection(std::shared_ptr<net::Socket> sock);

    RegisterImage& image_;
    net::Listener listener_;
    std::atomic<bool> running_{false};
    std::atomic<std::uint64_t> served_{0};
    std::thread acceptor_;
    std::mutex conn_mutex_;
    std::list<std::shared_ptr<net::Socket>> connections_;
    std::vector<std::thread> workers_;
};

/// Blocking client, one request in flight. Reconnects lazily after transport errors.
class RegisterClient {
public:
    RegisterClient(std::string host, std::uint16_t port,
                   std::chrono::milliseconds timeout = std::chrono::milliseconds(2000));

    std::vector<std::uint8_t> read(int db, std::size_t offset, std::size_t length);
    void write(int db, std::size_t offset, std::span<const std::uint8_t> data);
    /// Everything up to layout::kEnd in one request, hence one consistent snapshot.
    std::vector<std::uint8_t> read_process_image(int db);
    void disconnect();

private:
    Frame round_trip(const Frame& request);

    std::string host_;
    std::uint16_t port_;
    std::chrono::milliseconds timeout_;
    net::Socket sock_;
};

/// Reads one frame from a stream socket. Returns nullopt on clean EOF.
/// Throws RegmapError(crc) on malformed input, net::NetworkError on transport failure.
std::optional<Frame> read_frame(net::Socket& sock);

}  // namespace chamber::regmap
