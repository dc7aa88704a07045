#pragma once

#include <atomic>
#include <chrono>
#include <cstddef>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <utility>

#include "isaclient/errors.hpp"
#include "isaclient/protocol.hpp"
#include "isaclient/wire.hpp"

namespace isaclient {

/// Every server reply observed between issuing a command and its terminal
/// reply, in arrival order. The terminal reply is always the last entry.
struct Transcript {
    std::vector<IsabelleResponse> entries;
    std::size_t final_index = 0;

    const IsabelleResponse& final_entry() const { return entries.at(final_index); }
};

/// The stream broke protocol: an unknown keyword mid-stream, or the
/// connection closed before the terminal reply. Carries what was collected.
class ProtocolViolation : public Error {
public:
    ProtocolViolation(const std::string& what, Transcript partial)
        : Error(what), partial_transcript(std::move(partial)) {}

    Transcript partial_transcript;
};

/// No terminal reply arrived within the watchdog. The command may still be
/// running server-side; the connection is no longer usable.
class WatchdogExpired : public Error {
public:
    WatchdogExpired(const std::string& what, Transcript partial)
        : Error(what), partial_transcript(std::move(partial)) {}

    Transcript partial_transcript;
};

/// A command whose caller needs a payload value (session id, node results)
/// ended in FAILED or ERROR instead.
class BuildFailed : public Error {
public:
    BuildFailed(const std::string& what, Transcript transcript)
        : Error(what), transcript(std::move(transcript)) {}

    Transcript transcript;
};

/// Called for each reply as it arrives, before the transcript is returned;
/// lets a CLI stream output while a command runs.
using ResponseObserver = std::function<void(const IsabelleResponse&, std::size_t seq)>;

/// One authenticated TCP connection to a server.
///
/// Exclusively owned: it may be moved between threads but not shared, and at
/// most one command is in flight at a time. Reconnection is never automatic —
/// server-side tasks are stateful and a silent reconnect would orphan them.
///
/// The server itself only binds to localhost; connecting to another host is
/// permitted (SSH tunnels) but the tunnel is the caller's business.
class Connection {
public:
    enum class State { New, Authenticated, Closed };

    static constexpr std::chrono::milliseconds kDefaultConnectTimeout{10000};

    /// Establish TCP, send the password as the first client message, and
    /// require an OK reply. Throws ConnectRefused, AuthFailed, or Timeout.
    static Connection connect(const ServerInfo& info,
                              std::chrono::milliseconds timeout = kDefaultConnectTimeout,
                              std::size_t max_message_bytes = wire::kDefaultMessageCap);

    Connection(Connection&&) noexcept;
    Connection& operator=(Connection&&) noexcept;
    Connection(const Connection&) = delete;
    Connection& operator=(const Connection&) = delete;
    ~Connection();

    State state() const;
    bool command_in_flight() const;
    const ServerInfo& peer() const;

    /// Session id cached by the first implicit session_start, reused by
    /// later use_theories calls that do not name a session.
    const std::optional<std::string>& cached_session_id() const;

    /// Send one command line and collect replies until the terminal one.
    ///
    /// Asynchronous commands take their task id from the first OK
    /// acknowledgment; replies for other tasks are recorded but do not
    /// terminate collection. No watchdog means wait indefinitely.
    Transcript execute(std::string_view name, std::string_view argument, bool synchronous,
                       std::optional<std::chrono::milliseconds> watchdog = std::nullopt,
                       const ResponseObserver& observer = {});

    // -- one wrapper per server command --

    Transcript echo(std::string_view value, const ResponseObserver& observer = {});

    /// Final OK payload is the list of command names.
    Transcript help(const ResponseObserver& observer = {});

    /// After the OK the server goes away; the connection becomes Closed.
    Transcript shutdown(const ResponseObserver& observer = {});

    Transcript cancel(const CancelArgs& args, const ResponseObserver& observer = {});

    /// Returns the new session id from the FINISHED payload.
    /// Throws BuildFailed when the command fails, ProtocolViolation when
    /// FINISHED carries no session_id.
    std::pair<Transcript, std::string> session_start(
        const SessionStartArgs& args = {},
        std::optional<std::chrono::milliseconds> watchdog = std::nullopt,
        const ResponseObserver& observer = {});

    Transcript session_stop(const SessionStopArgs& args,
                            std::optional<std::chrono::milliseconds> watchdog = std::nullopt,
                            const ResponseObserver& observer = {});

    /// Build outcome is data: inspect the final payload's ok/return_code.
    Transcript session_build(const SessionBuildArgs& args,
                             std::optional<std::chrono::milliseconds> watchdog = std::nullopt,
                             const ResponseObserver& observer = {});

    /// Runs an implicit session_start (default args) first when the args
    /// carry no session id, caching the id for reuse on this connection.
    std::pair<Transcript, TheoryProcessingResult> use_theories(
        UseTheoriesArgs args,
        std::optional<std::chrono::milliseconds> watchdog = std::nullopt,
        const ResponseObserver& observer = {});

    Transcript purge_theories(const PurgeTheoriesArgs& args, const ResponseObserver& observer = {});

private:
    Connection();

    struct Impl;
    std::unique_ptr<Impl> impl_;
};

}  // namespace isaclient
