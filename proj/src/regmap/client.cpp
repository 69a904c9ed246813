#include "chamber/regmap.hpp"

namespace chamber::regmap {

RegisterClient::RegisterClient(std::string host, std::uint16_t port, std::chrono::milliseconds timeout)
    : host_(std::move(host)), port_(port), timeout_(timeout) {}

void RegisterClient::disconnect() { sock_.close(); }

Frame RegisterClient::round_trip(const Frame& request) {
    if (!sock_.valid()) {
        sock_ = net::connect(host_, port_, timeout_);
        sock_.set_timeout(timeout_);
        sock_.set_nodelay();
    }
    try {
        sock_.write_all(encode_frame(request));
        auto resp = read_frame(sock_);
        if (!resp) throw net::NetworkError("server closed connection");
        if (resp->op == Op::error) {
            const auto code = static_cast<ErrorCode>(resp->payload.at(0));
            if (code == ErrorCode::crc) sock_.close();
            throw RegmapError(code, "server rejected request");
        }
        return std::move(*resp);
    } catch (const net::NetworkError&) {
        sock_.close();
        throw;
    } catch (const RegmapError& e) {
        // A garbled response leaves the stream unsynchronised.
        if (e.code() == ErrorCode::crc) sock_.close();
        throw;
    }
}

std::vector<std::uint8_t> RegisterClient::read(int db, std::size_t offset, std::size_t length) {
    const auto req = Frame::read_request(static_cast<std::uint8_t>(db), static_cast<std::uint16_t>(offset),
                                         static_cast<std::uint16_t>(length));
    Frame resp = round_trip(req);
    if (resp.op != Op::read_resp || resp.payload.size() != length) {
        sock_.close();
        throw RegmapError(ErrorCode::crc, "unexpected response to read");
    }
    return std::move(resp.payload);
}

void RegisterClient::write(int db, std::size_t offset, std::span<const std::uint8_t> data) {
    const auto req = Frame::write_request(static_cast<std::uint8_t>(db), static_cast<std::uint16_t>(offset),
                                          {data.begin(), data.end()});
    const Frame resp = round_trip(req);
    if (resp.op != Op::write_resp) {
        sock_.close();
        throw RegmapError(ErrorCode::crc, "unexpected response to write");
    }
}

std::vector<std::uint8_t> RegisterClient::read_process_image(int db) { return read(db, 0, layout::kEnd); }

}  // namespace chamber::regmap
