#pragma once

#include <chrono>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace chamber::net {

class NetworkError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Owning socket descriptor.
class Socket {
public:
    Socket() = default;
    explicit Socket(int fd) : fd_(fd) {}
    ~Socket() { close(); }
    Socket(Socket&& o) noexcept : fd_(o.release()) {}
    Socket& operator=(Socket&& o) noexcept;
    Socket(const Socket&) = delete;
    Socket& operator=(const Socket&) = delete;

    int fd() const { return fd_; }
    bool valid() const { return fd_ >= 0; }
    int release();
    void close();
    /// Wakes any thread blocked on this socket without releasing the descriptor.
    void shutdown();

    void set_timeout(std::chrono::milliseconds timeout);
    void set_nodelay();

    /// Reads exactly `out.size()` bytes. Returns false on orderly EOF before the first byte.
    bool read_exact(std::span<std::uint8_t> out);
    void write_all(std::span<const std::uint8_t> data);

private:
    int fd_ = -1;
};

/// Listening socket bound to 127.0.0.1 or any address. Port 0 picks an ephemeral port.
class Listener {
public:
    Listener(const std::string& host, std::uint16_t port);
    std::uint16_t port() const { return port_; }
    /// Blocks until a client connects; returns an invalid socket once the listener is shut down.
    Socket accept();
    void shutdown();

private:
    Socket sock_;
    std::uint16_t port_ = 0;
};

Socket connect(const std::string& host, std::uint16_t port, std::chrono::milliseconds timeout);

}  // namespace chamber::net
