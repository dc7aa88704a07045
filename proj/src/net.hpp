#pragma once

// Internal POSIX socket helpers; not part of the public headers.

#include <chrono>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

#include "isaclient/wire.hpp"

namespace isaclient::net {

using Deadline = std::optional<std::chrono::steady_clock::time_point>;

/// Raised when a read deadline passes; callers map it to Timeout or
/// WatchdogExpired depending on what they were waiting for.
struct ReadTimeout : std::exception {
    const char* what() const noexcept override { return "read deadline expired"; }
};

class UniqueFd {
public:
    UniqueFd() = default;
    explicit UniqueFd(int fd) : fd_(fd) {}
    UniqueFd(UniqueFd&& other) noexcept : fd_(other.release()) {}
    UniqueFd& operator=(UniqueFd&& other) noexcept;
    UniqueFd(const UniqueFd&) = delete;
    UniqueFd& operator=(const UniqueFd&) = delete;
    ~UniqueFd() { reset(); }

    int get() const { return fd_; }
    bool valid() const { return fd_ >= 0; }
    int release();
    void reset(int fd = -1);

private:
    int fd_ = -1;
};

/// Connect to host:port within `timeout`. Throws ConnectRefused when every
/// resolved address refuses or errors, Timeout when the clock runs out.
UniqueFd tcp_connect(const std::string& host, std::uint16_t port, std::chrono::milliseconds timeout);

/// Bind and listen on host:port (port 0 picks an ephemeral one).
/// Throws BindFailure. `bound_port` receives the actual port.
UniqueFd tcp_listen(const std::string& host, std::uint16_t port, std::uint16_t& bound_port);

/// Write the whole buffer; throws TruncatedMessage when the peer is gone.
void send_all(int fd, std::string_view data);

/// ByteSource over a connected socket. An optional deadline bounds every
/// read; an optional wake fd (self-pipe) aborts blocked reads promptly.
class SocketSource : public wire::ByteSource {
public:
    explicit SocketSource(int fd, int wake_fd = -1) : fd_(fd), wake_fd_(wake_fd) {}

    void set_deadline(Deadline deadline) { deadline_ = deadline; }

    /// Blocks in poll() until data, EOF, deadline, or a wake-up.
    /// Returns 0 on EOF or wake-up; throws ReadTimeout on deadline.
    std::size_t read_some(char* buf, std::size_t max) override;

private:
    int fd_;
    int wake_fd_;
    Deadline deadline_;
};

}  // namespace isaclient::net
