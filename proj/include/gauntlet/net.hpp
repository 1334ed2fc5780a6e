#pragma once

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>
#include <string>
#include <string_view>
#include <utility>

#include "gauntlet/errors.hpp"

namespace gauntlet {

// "host:port" -> (host, port); the last colon splits, so bare IPv4/hostnames work.
inline std::pair<std::string, std::string> split_host_port(std::string_view addr) {
    size_t colon = addr.rfind(':');
    if (colon == std::string_view::npos || colon + 1 == addr.size())
        throw ConfigError("address must be host:port, got: " + std::string(addr));
    return {std::string(addr.substr(0, colon)), std::string(addr.substr(colon + 1))};
}

// Minimal blocking TCP client with a connect/read/write deadline.
class TcpClient {
  public:
    TcpClient(const std::string& host, const std::string& port, int timeout_ms) {
        addrinfo hints{};
        hints.ai_family = AF_UNSPEC;
        hints.ai_socktype = SOCK_STREAM;
        addrinfo* res = nullptr;
        int rc = ::getaddrinfo(host.c_str(), port.c_str(), &hints, &res);
        if (rc != 0) throw TransportError("resolve " + host + ": " + gai_strerror(rc));
        int last_errno = 0;
        for (addrinfo* ai = res; ai; ai = ai->ai_next) {
            fd_ = ::socket(ai->ai_family, ai->ai_socktype | SOCK_NONBLOCK, ai->ai_protocol);
            if (fd_ < 0) {
                last_errno = errno;
                continue;
            }
            rc = ::connect(fd_, ai->ai_addr, ai->ai_addrlen);
            if (rc == 0) break;
            if (errno == EINPROGRESS && wait_writable(timeout_ms)) break;
            last_errno = errno;
            ::close(fd_);
            fd_ = -1;
        }
        ::freeaddrinfo(res);
        if (fd_ < 0)
            throw TransportError("connect " + host + ":" + port + ": " +
                                 std::strerror(last_errno ? last_errno : ETIMEDOUT));
        set_deadline(timeout_ms);
    }

    explicit TcpClient(std::string_view addr, int timeout_ms)
        : TcpClient(split_host_port(addr).first, split_host_port(addr).second, timeout_ms) {}

    TcpClient(const TcpClient&) = delete;
    TcpClient& operator=(const TcpClient&) = delete;
    ~TcpClient() {
        if (fd_ >= 0) ::close(fd_);
    }

    void write_all(std::string_view data) {
        size_t sent = 0;
        while (sent < data.size()) {
            if (!wait_ready(POLLOUT)) throw TransportError("send timeout");
            ssize_t n = ::send(fd_, data.data() + sent, data.size() - sent, MSG_NOSIGNAL);
            if (n < 0) {
                if (errno == EAGAIN || errno == EWOULDBLOCK || errno == EINTR) continue;
                throw TransportError(std::string("send: ") + std::strerror(errno));
            }
            sent += static_cast<size_t>(n);
        }
    }

    // One line, terminator stripped. EOF mid-line yields the partial line; EOF
    // with nothing buffered is a transport error.
    std::string read_line() {
        while (true) {
            size_t nl = buf_.find('\n');
            if (nl != std::string::npos) {
                std::string line = buf_.substr(0, nl);
                buf_.erase(0, nl + 1);
                if (!line.empty() && line.back() == '\r') line.pop_back();
                return line;
            }
            if (!fill()) {
                if (buf_.empty()) throw TransportError("connection closed while reading line");
                std::string line = std::move(buf_);
                buf_.clear();
                if (!line.empty() && line.back() == '\r') line.pop_back();
                return line;
            }
        }
    }

    void shutdown_write() { ::shutdown(fd_, SHUT_WR); }

  private:
    bool wait_writable(int timeout_ms) {
        pollfd pfd{fd_, POLLOUT, 0};
        if (::poll(&pfd, 1, timeout_ms) != 1) return false;
        int err = 0;
        socklen_t len = sizeof err;
        ::getsockopt(fd_, SOL_SOCKET, SO_ERROR, &err, &len);
        if (err != 0) errno = err;
        return err == 0;
    }

    void set_deadline(int timeout_ms) { timeout_ms_ = timeout_ms; }

    bool wait_ready(short events) {
        pollfd pfd{fd_, events, 0};
        return ::poll(&pfd, 1, timeout_ms_) == 1;
    }

    // Pulls more bytes into the buffer; false at EOF.
    bool fill() {
        if (!wait_ready(POLLIN)) throw TransportError("receive timeout");
        char chunk[4096];
        ssize_t n = ::recv(fd_, chunk, sizeof chunk, 0);
        if (n < 0) {
            if (errno == EAGAIN || errno == EWOULDBLOCK || errno == EINTR) return true;
            throw TransportError(std::string("recv: ") + std::strerror(errno));
        }
        if (n == 0) return false;
        buf_.append(chunk, static_cast<size_t>(n));
        return true;
    }

    int fd_ = -1;
    int timeout_ms_ = 10000;
    std::string buf_;
};

}  // namespace gauntlet
