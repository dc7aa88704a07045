#include "net.hpp"

#include <arpa/inet.h>
#include <fcntl.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>

#include "isaclient/errors.hpp"

namespace isaclient::net {

namespace {

std::chrono::milliseconds remaining(const Deadline& deadline) {
    if (!deadline) return std::chrono::milliseconds(-1);
    auto left = std::chrono::duration_cast<std::chrono::milliseconds>(*deadline - std::chrono::steady_clock::now());
    return left.count() < 0 ? std::chrono::milliseconds(0) : left;
}

int poll_retry(pollfd* fds, nfds_t n, std::chrono::milliseconds wait) {
    for (;;) {
        int rc = ::poll(fds, n, static_cast<int>(wait.count()));
        if (rc >= 0 || errno != EINTR) return rc;
    }
}

}  // namespace

UniqueFd& UniqueFd::operator=(UniqueFd&& other) noexcept {
    if (this != &other) reset(other.release());
    return *this;
}

int UniqueFd::release() {
    int fd = fd_;
    fd_ = -1;
    return fd;
}

void UniqueFd::reset(int fd) {
    if (fd_ >= 0) ::close(fd_);
    fd_ = fd;
}

UniqueFd tcp_connect(const std::string& host, std::uint16_t port, std::chrono::milliseconds timeout) {
    auto deadline = std::chrono::steady_clock::now() + timeout;

    addrinfo hints{};
    hints.ai_family = AF_UNSPEC;
    hints.ai_socktype = SOCK_STREAM;
    addrinfo* addrs = nullptr;
    int rc = ::getaddrinfo(host.c_str(), std::to_string(port).c_str(), &hints, &addrs);
    if (rc != 0) {
        throw ConnectRefused("cannot resolve " + host + ": " + ::gai_strerror(rc));
    }

    std::string last_error = "no addresses";
    for (addrinfo* ai = addrs; ai != nullptr; ai = ai->ai_next) {
        UniqueFd fd(::socket(ai->ai_family, ai->ai_socktype | SOCK_CLOEXEC, ai->ai_protocol));
        if (!fd.valid()) {
            last_error = std::strerror(errno);
            continue;
        }
        int flags = ::fcntl(fd.get(), F_GETFL, 0);
        ::fcntl(fd.get(), F_SETFL, flags | O_NONBLOCK);

        rc = ::connect(fd.get(), ai->ai_addr, ai->ai_addrlen);
        if (rc != 0 && errno == EINPROGRESS) {
            pollfd pfd{fd.get(), POLLOUT, 0};
            auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - std::chrono::steady_clock::now());
            if (left.count() <= 0) left = std::chrono::milliseconds(0);
            int ready = poll_retry(&pfd, 1, left);
            if (ready == 0) {
                ::freeaddrinfo(addrs);
                throw Timeout("connect to " + host + ":" + std::to_string(port) + " timed out");
            }
            int err = 0;
            socklen_t len = sizeof err;
            ::getsockopt(fd.get(), SOL_SOCKET, SO_ERROR, &err, &len);
            rc = (err == 0) ? 0 : -1;
            errno = err;
        }
        if (rc == 0) {
            ::fcntl(fd.get(), F_SETFL, flags);  // back to blocking; reads poll explicitly
            int one = 1;
            ::setsockopt(fd.get(), IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
            ::freeaddrinfo(addrs);
            return fd;
        }
        last_error = std::strerror(errno);
    }
    ::freeaddrinfo(addrs);
    throw ConnectRefused("cannot connect to " + host + ":" + std::to_string(port) + ": " + last_error);
}

UniqueFd tcp_listen(const std::string& host, std::uint16_t port, std::uint16_t& bound_port) {
    UniqueFd fd(::socket(AF_INET, SOCK_STREAM | SOCK_CLOEXEC, 0));
    if (!fd.valid()) {
        throw BindFailure(std::string("socket: ") + std::strerror(errno));
    }
    // No SO_REUSEADDR: a taken port must surface as BindFailure.
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_port = htons(port);
    if (::inet_pton(AF_INET, host.c_str(), &addr.sin_addr) != 1) {
        addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
    }
    if (::bind(fd.get(), reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0) {
        throw BindFailure("bind " + host + ":" + std::to_string(port) + ": " + std::strerror(errno));
    }
    if (::listen(fd.get(), 8) != 0) {
        throw BindFailure(std::string("listen: ") + std::strerror(errno));
    }
    sockaddr_in actual{};
    socklen_t len = sizeof actual;
    ::getsockname(fd.get(), reinterpret_cast<sockaddr*>(&actual), &len);
    bound_port = ntohs(actual.sin_port);
    return fd;
}

void send_all(int fd, std::string_view data) {
    std::size_t sent = 0;
    while (sent < data.size()) {
        ssize_t n = ::send(fd, data.data() + sent, data.size() - sent, MSG_NOSIGNAL);
        if (n < 0) {
            if (errno == EINTR) continue;
            throw TruncatedMessage(std::string("send: ") + std::strerror(errno));
        }
        sent += static_cast<std::size_t>(n);
    }
}

std::size_t SocketSource::read_some(char* buf, std::size_t max) {
    for (;;) {
        pollfd fds[2];
        fds[0] = {fd_, POLLIN, 0};
        nfds_t n = 1;
        if (wake_fd_ >= 0) {
            fds[1] = {wake_fd_, POLLIN, 0};
            n = 2;
        }
        int ready = poll_retry(fds, n, remaining(deadline_));
        if (ready == 0) throw ReadTimeout{};
        if (n == 2 && (fds[1].revents & POLLIN)) return 0;  // told to stop
        ssize_t got = ::recv(fd_, buf, max, 0);
        if (got < 0) {
            if (errno == EINTR) continue;
            throw TruncatedMessage(std::string("recv: ") + std::strerror(errno));
        }
        return static_cast<std::size_t>(got);
    }
}

}  // namespace isaclient::net
