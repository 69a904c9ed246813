#include "chamber/regmap.hpp"

#include <bit>
#include <cstring>

namespace chamber::regmap {

bool externally_writable(std::size_t offset, std::size_t length) {
    const std::size_t end = offset + length;
    const auto inside = [&](std::size_t lo, std::size_t hi) { return offset >= lo && end <= hi; };
    return length > 0 && (inside(layout::kSetpointT, layout::kHeaterDuty) || inside(layout::kTempKp, layout::kClockMs));
}

std::array<std::uint8_t, 4> encode_f32(float value) {
    const auto bits = std::bit_cast<std::uint32_t>(value);
    return {static_cast<std::uint8_t>(bits >> 24), static_cast<std::uint8_t>(bits >> 16),
            static_cast<std::uint8_t>(bits >> 8), static_cast<std::uint8_t>(bits)};
}

float decode_f32(std::span<const std::uint8_t, 4> b) {
    const std::uint32_t bits = (std::uint32_t{b[0]} << 24) | (std::uint32_t{b[1]} << 16) |
                               (std::uint32_t{b[2]} << 8) | std::uint32_t{b[3]};
    return std::bit_cast<float>(bits);
}

void put_f32(std::span<std::uint8_t> buf, std::size_t offset, float value) {
    put_u32(buf, offset, std::bit_cast<std::uint32_t>(value));
}

float get_f32(std::span<const std::uint8_t> buf, std::size_t offset) {
    return std::bit_cast<float>(get_u32(buf, offset));
}

void put_u16(std::span<std::uint8_t> buf, std::size_t offset, std::uint16_t value) {
    buf[offset] = static_cast<std::uint8_t>(value >> 8);
    buf[offset + 1] = static_cast<std::uint8_t>(value);
}

std::uint16_t get_u16(std::span<const std::uint8_t> buf, std::size_t offset) {
    return static_cast<std::uint16_t>((buf[offset] << 8) | buf[offset + 1]);
}

void put_u32(std::span<std::uint8_t> buf, std::size_t offset, std::uint32_t value) {
    for (int i = 0; i < 4; ++i) buf[offset + i] = static_cast<std::uint8_t>(value >> (24 - 8 * i));
}

std::uint32_t get_u32(std::span<const std::uint8_t> buf, std::size_t offset) {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v = (v << 8) | buf[offset + i];
    return v;
}

void put_u64(std::span<std::uint8_t> buf, std::size_t offset, std::uint64_t value) {
    for (int i = 0; i < 8; ++i) buf[offset + i] = static_cast<std::uint8_t>(value >> (56 - 8 * i));
}

std::uint64_t get_u64(std::span<const std::uint8_t> buf, std::size_t offset) {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v = (v << 8) | buf[offset + i];
    return v;
}

std::uint16_t crc16_ccitt(std::span<const std::uint8_t> data) {
    std::uint16_t crc = 0xFFFF;
    for (std::uint8_t byte : data) {
        crc ^= static_cast<std::uint16_t>(byte << 8);
        for (int i = 0; i < 8; ++i) {
            crc = (crc & 0x8000) ? static_cast<std::uint16_t>((crc << 1) ^ 0x1021) : static_cast<std::uint16_t>(crc << 1);
        }
    }
    return crc;
}

Frame Frame::read_request(std::uint8_t db, std::uint16_t offset, std::uint16_t length) {
    return {Op::read, db, offset, length, {}};
}

Frame Frame::write_request(std::uint8_t db, std::uint16_t offset, std::vector<std::uint8_t> data) {
    const auto len = static_cast<std::uint16_t>(data.size());
    return {Op::write, db, offset, len, std::move(data)};
}

Frame Frame::error_frame(ErrorCode code, std::uint8_t db) {
    return {Op::error, db, 0, 1, {static_cast<std::uint8_t>(code)}};
}

std::optional<std::size_t> payload_size(std::uint8_t op, std::uint16_t length) {
    switch (static_cast<Op>(op)) {
        case Op::read:
        case Op::write_resp:
            return 0;
        case Op::write:
        case Op::read_resp:
            if (length > kMaxPayload) return std::nullopt;
            return length;
        case Op::error:
            if (length != 1) return std::nullopt;
            return 1;
    }
    return std::nullopt;
}

std::vector<std::uint8_t> encode_frame(const Frame& f) {
    const auto expected = payload_size(static_cast<std::uint8_t>(f.op), f.length);
    if (!expected || *expected != f.payload.size()) {
        throw std::invalid_argument("frame payload does not match op/length");
    }
    std::vector<std::uint8_t> out(kHeaderSize + f.payload.size() + kCrcSize);
    out[0] = kMagic;
    out[1] = kVersion;
    out[2] = static_cast<std::uint8_t>(f.op);
    out[3] = f.db;
    put_u16(out, 4, f.offset);
    put_u16(out, 6, f.length);
    std::memcpy(out.data() + kHeaderSize, f.payload.data(), f.payload.size());
    const std::size_t body = kHeaderSize + f.payload.size();
    put_u16(out, body, crc16_ccitt(std::span(out).first(body)));
    return out;
}

Frame decode_frame(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < kHeaderSize + kCrcSize) throw RegmapError(ErrorCode::crc, "frame too short");
    if (bytes[0] != kMagic) throw RegmapError(ErrorCode::crc, "bad magic");
    if (bytes[1] != kVersion) throw RegmapError(ErrorCode::crc, "unsupported version");
    Frame f;
    f.op = static_cast<Op>(bytes[2]);
    f.db = bytes[3];
    f.offset = get_u16(bytes, 4);
    f.length = get_u16(bytes, 6);
    const auto size = payload_size(bytes[2], f.length);
    if (!size) throw RegmapError(ErrorCode::crc, "unknown op or unframeable length");
    if (bytes.size() != kHeaderSize + *size + kCrcSize) throw RegmapError(ErrorCode::crc, "frame size mismatch");
    const std::size_t body = kHeaderSize + *size;
    if (get_u16(bytes, body) != crc16_ccitt(bytes.first(body))) throw RegmapError(ErrorCode::crc, "crc mismatch");
    f.payload.assign(bytes.begin() + kHeaderSize, bytes.begin() + static_cast<std::ptrdiff_t>(body));
    return f;
}

void validate_request(const Frame& f, int block_count) {
    if (f.op != Op::read && f.op != Op::write) throw RegmapError(ErrorCode::crc, "not a request op");
    if (f.db < 1 || f.db > block_count) throw RegmapError(ErrorCode::bounds, "no such data block");
    if (f.length == 0 || f.length > kMaxPayload) throw RegmapError(ErrorCode::bounds, "length outside 1..240");
    if (std::size_t{f.offset} + f.length > kBlockSize) throw RegmapError(ErrorCode::bounds, "range past end of block");
}

}  // namespace chamber::regmap
