#include "chamber/regmap.hpp"

#include <array>

namespace chamber::regmap {

std::optional<Frame> read_frame(net::Socket& sock) {
    std::array<std::uint8_t, kHeaderSize> header{};
    if (!sock.read_exact(header)) return std::nullopt;
    if (header[0] != kMagic || header[1] != kVersion) throw RegmapError(ErrorCode::crc, "bad magic or version");
    const auto size = payload_size(header[2], get_u16(header, 6));
    if (!size) throw RegmapError(ErrorCode::crc, "unknown op or unframeable length");
    std::vector<std::uint8_t> bytes(kHeaderSize + *size + kCrcSize);
    std::copy(header.begin(), header.end(), bytes.begin());
    if (!sock.read_exact(std::span(bytes).subspan(kHeaderSize))) throw net::NetworkError("connection closed mid-frame");
    return decode_frame(bytes);
}

Frame RegisterServer::handle(RegisterImage& image, const Frame& req) {
    try {
        validate_request(req, image.block_count());
        if (req.op == Op::read) {
            return {Op::read_resp, req.db, req.offset, req.length, image.read(req.db, req.offset, req.length)};
        }
        image.external_write(req.db, req.offset, req.payload);
        return {Op::write_resp, req.db, req.offset, req.length, {}};
    } catch (const RegmapError& e) {
        return Frame::error_frame(e.code(), req.db);
    }
}

RegisterServer::RegisterServer(RegisterImage& image, std::string host, std::uint16_t port)
    : image_(image), listener_(host, port) {}

RegisterServer::~RegisterServer() { stop(); }

void RegisterServer::start() {
    if (running_.exchange(true)) return;
    acceptor_ = std::thread([this] { accept_loop(); });
}

void RegisterServer::stop() {
    if (!running_.exchange(false)) return;
    listener_.shutdown();
    if (acceptor_.joinable()) acceptor_.join();
    {
        std::lock_guard lock(conn_mutex_);
        for (auto& c : connections_) c->shutdown();
    }
    for (auto& t : workers_) {
        if (t.joinable()) t.join();
    }
    workers_.clear();
    connections_.clear();
}

void RegisterServer::accept_loop() {
    while (running_) {
        net::Socket s;
        try {
            s = listener_.accept();
        } catch (const net::NetworkError&) {
            continue;
        }
        if (!s.valid()) break;
        if (!running_) break;
        s.set_nodelay();
        auto sock = std::make_shared<net::Socket>(std::move(s));
        std::lock_guard lock(conn_mutex_);
        connections_.push_back(sock);
        workers_.emplace_back([this, sock] { serve_connection(sock); });
    }
}

void RegisterServer::serve_connection(std::shared_ptr<net::Socket> sock) {
    try {
        while (running_) {
            std::optional<Frame> req;
            try {
                req = read_frame(*sock);
            } catch (const RegmapError& e) {
                // Stream framing is lost: report and drop the connection.
                sock->write_all(encode_frame(Frame::error_frame(e.code())));
                break;
            }
            if (!req) break;
            const Frame resp = handle(image_, *req);
            ++served_;
            sock->write_all(encode_frame(resp));
        }
    } catch (const net::NetworkError&) {
    }
    sock->shutdown();
}

}  // namespace chamber::regmap
