#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "isaclient/protocol.hpp"
#include "isaclient/wire.hpp"

namespace isaclient::mock {

/// One scripted reply. The body is a template; placeholders are substituted
/// per command invocation:
///
///   ${task}        task id minted for this invocation
///   ${task2}       a second id, for scripting foreign-task interleavings
///   ${session_id}  session id minted for this invocation
///   ${arg}         the command's argument text, verbatim
///   ${json:/ptr}   JSON pointer into the parsed argument, rendered compactly
///                  (strings keep their quotes; unresolvable -> null)
///
/// Rendered bodies must stay single-line.
struct ReplyEntry {
    ResponseKind kind = ResponseKind::Ok;
    std::string body_template;
    std::chrono::milliseconds delay{0};
};

struct ReplyScript {
    std::vector<ReplyEntry> entries;
};

/// Scenario-scoped fault switches; deterministic, never probabilistic.
struct Faults {
    /// Reply ERROR to the first line and close, even on a correct password.
    bool reject_password = false;
    /// Truncate the last reply of every script mid-frame, then close.
    bool close_mid_message = false;
    /// Extra delay before every scripted reply.
    std::chrono::milliseconds stall{0};
};

/// A declarative script for the mock server: per-command reply sequences
/// plus framing and fault controls. Loadable from a versioned JSON file.
struct Scenario {
    static constexpr int kFormatVersion = 1;

    std::string name = "mock";
    std::string password;
    std::map<std::string, ReplyScript> handlers;
    std::size_t long_format_threshold = wire::kDefaultLongThreshold;
    Faults faults;
    /// Seed for the deterministic task/session id generator.
    std::uint64_t task_id_seed = 0;
    /// Body of the OK sent after a correct password.
    std::string welcome_body = R"({"isabelle_id":"mock","isabelle_name":"MockIsabelle"})";

    /// Enforce script well-formedness: known placeholders, single-line
    /// templates, and for every async script (one containing FINISHED or
    /// FAILED) an OK-with-${task} opener and exactly one terminal entry
    /// bearing ${task}, in last position. Throws InvalidArgs.
    void validate() const;

    nlohmann::ordered_json to_json() const;
    static Scenario from_json(const nlohmann::json& doc);

    static Scenario load_file(const std::filesystem::path& path);
    void save_file(const std::filesystem::path& path) const;
};

/// Named ready-made scenarios: listing1, failing_theory, interleaved_tasks,
/// long_messages, slow, reject_password, close_mid_message.
std::map<std::string, Scenario> builtin_scenarios();

/// Raw bytes exchanged on one mock connection, for byte-level assertions.
struct ConnectionLog {
    std::string received;
    std::string sent;
    bool closed = false;
};

/// A deterministic TCP server speaking the wire protocol, driven by a
/// Scenario. Serves connections sequentially, one at a time. Construction
/// binds and starts the service loop; stop() is idempotent and unblocks the
/// loop promptly, including from another thread.
class MockServer {
public:
    explicit MockServer(Scenario scenario, std::uint16_t port = 0);  // throws BindFailure
    ~MockServer();

    MockServer(const MockServer&) = delete;
    MockServer& operator=(const MockServer&) = delete;

    const ServerInfo& info() const;
    void stop();

    std::vector<ConnectionLog> connection_logs() const;

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

}  // namespace isaclient::mock
