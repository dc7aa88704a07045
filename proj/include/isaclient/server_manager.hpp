#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <string_view>

#include "isaclient/protocol.hpp"

namespace isaclient {

enum class Platform { Posix, WindowsNative };

/// Compile-time platform, overridable through ISACLIENT_PLATFORM_OVERRIDE
/// ("windows" / "posix") so the Windows refusal path stays testable anywhere.
Platform detect_platform();

struct StartOptions {
    std::string name = "isabelle";
    /// Unset delegates the choice to the server; the parsed info line is
    /// authoritative either way.
    std::optional<std::uint16_t> port;
    /// Raw byte tee of the child's stdout+stderr, info line included.
    std::optional<std::filesystem::path> log_path;
    /// Overridden by the ISABELLE_COMMAND environment variable when set.
    std::string isabelle_command = "isabelle";
    std::chrono::milliseconds ready_timeout = std::chrono::seconds(60);
    Platform platform = detect_platform();
};

/// A supervised `isabelle server` child process. Exclusively owned; stop()
/// may be called from a different thread than the one that started it.
class ServerHandle {
public:
    ServerHandle(ServerHandle&&) noexcept;
    ServerHandle& operator=(ServerHandle&&) noexcept;
    ServerHandle(const ServerHandle&) = delete;
    ServerHandle& operator=(const ServerHandle&) = delete;
    ~ServerHandle();  // best-effort stop

    const ServerInfo& info() const;
    /// The startup line exactly as the server printed it (terminator stripped).
    const std::string& info_line() const;
    int pid() const;

    bool running();

    /// Block until the child exits; returns its shell-style exit status.
    int wait();

    /// Graceful shutdown through the protocol when connectable, process
    /// termination after `grace` otherwise. Always reaps; idempotent — a
    /// second call returns the recorded status.
    int stop(std::chrono::milliseconds grace = std::chrono::seconds(5));

private:
    friend ServerHandle start_server(const StartOptions&);
    ServerHandle();

    struct Impl;
    std::unique_ptr<Impl> impl_;
};

/// Spawn `isabelle server -n NAME [-p PORT]` and wait for its info line.
///
/// Readiness is the first stdout line parsing as an info line — port probing
/// cannot obtain the password. Only that line is consumed; everything after
/// it goes to the log untouched.
///
/// Throws UnsupportedPlatform on native Windows (the server runs under
/// Cygwin there; launch it manually and use attach()), ExecutableNotFound,
/// ReadyTimeout (child killed, captured stderr attached), MalformedInfoLine.
ServerHandle start_server(const StartOptions& options = {});

/// Free-function form of ServerHandle::stop.
int stop_server(ServerHandle& handle, std::chrono::milliseconds grace = std::chrono::seconds(5));

/// Parse a user-supplied info line (e.g. pasted from a manually launched
/// server, or the first line of a log file). Trailing line terminators are
/// tolerated. Throws MalformedInfoLine.
ServerInfo attach(std::string_view info_line);

}  // namespace isaclient
