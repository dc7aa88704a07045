#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace isaclient {

/// The five reply keywords of the server protocol. FINISHED and FAILED are
/// terminal for a task; OK is terminal for synchronous commands; NOTE never.
enum class ResponseKind { Ok, Error, Note, Finished, Failed };

std::string_view to_string(ResponseKind kind);

/// Parses a reply keyword; nullopt when the token is not one of the five.
std::optional<ResponseKind> response_kind_from(std::string_view token);

/// One decoded server reply.
struct IsabelleResponse {
    ResponseKind kind = ResponseKind::Ok;
    /// Raw text after the keyword (empty when the reply is bare).
    std::string body;
    /// Parsed body, present when the body is a JSON object or array.
    std::optional<nlohmann::json> payload;
    /// Task id, present iff the payload is an object with a string "task".
    std::optional<std::string> task;
    /// Set when the body looked like JSON but failed to parse. The reply is
    /// still delivered; dropping it would lose information.
    bool payload_malformed = false;
};

/// Split a raw message into keyword and body, classifying the kind.
/// Throws UnknownKind when the leading token is not a reply keyword.
IsabelleResponse parse_response(std::string_view raw);

/// Everything needed to connect and authenticate to a running server.
struct ServerInfo {
    std::string name;
    std::string host;
    std::uint16_t port = 0;
    std::string password;  // opaque, non-empty

    bool operator==(const ServerInfo&) const = default;
};

/// Parse the first stdout line of `isabelle server`:
///   server "NAME" = HOST:PORT (password "PASSWORD")
/// Throws MalformedInfoLine when any component is missing, the port is out
/// of range, or the password is empty.
ServerInfo parse_server_info(std::string_view line);

/// Render a ServerInfo back into the info-line form parse_server_info reads.
/// Throws InvalidArgs when name or password contains '"' or a line break.
std::string render_info_line(const ServerInfo& info);

/// Termination rule for transcript collection.
///
/// Synchronous commands end on OK or ERROR. Asynchronous commands end on
/// ERROR, or on FINISHED/FAILED bearing the awaited task id (any
/// FINISHED/FAILED when no task id is being awaited).
bool is_final(const IsabelleResponse& resp, const std::optional<std::string>& task, bool synchronous);

// ---- command arguments ----

struct SessionBuildArgs {
    std::string session;
    std::vector<std::string> dirs;
    std::vector<std::string> options;
    bool verbose = false;
    std::vector<std::string> include_sessions;
};

struct SessionStartArgs {
    std::string session = "HOL";
    std::vector<std::string> dirs;
    std::vector<std::string> options;
    bool verbose = false;
};

struct SessionStopArgs {
    std::string session_id;
};

struct UseTheoriesArgs {
    /// Filled by the client from its cached session when unset.
    std::optional<std::string> session_id;
    std::vector<std::string> theories;
    std::optional<std::string> master_dir;
};

struct PurgeTheoriesArgs {
    std::string session_id;
    std::vector<std::string> theories;
    std::optional<std::string> master_dir;
    bool all = false;
};

struct CancelArgs {
    std::string task;
};

/// Deterministic single-line JSON with stable key order; unset optional
/// fields and default-valued flags are omitted. Throws InvalidArgs on an
/// empty theory list (use_theories) or a line break in any string field.
std::string serialize_args(const SessionBuildArgs& args);
std::string serialize_args(const SessionStartArgs& args);
std::string serialize_args(const SessionStopArgs& args);
std::string serialize_args(const UseTheoriesArgs& args);
std::string serialize_args(const PurgeTheoriesArgs& args);
std::string serialize_args(const CancelArgs& args);

// ---- typed view of a use_theories result ----

struct DiagnosticMessage {
    std::string kind;     // "error", "warning", "writeln", ...
    std::string message;
    std::optional<nlohmann::json> position;
};

struct NodeResult {
    std::string node_name;
    std::string theory_name;
    std::string status;
    std::vector<DiagnosticMessage> messages;
};

/// Parsed FINISHED payload of use_theories. `raw` always preserves the
/// payload verbatim; the typed fields tolerate absent or reshaped keys so
/// that other server versions do not crash the parser.
struct TheoryProcessingResult {
    bool ok = false;
    std::vector<NodeResult> nodes;
    nlohmann::json raw;
};

TheoryProcessingResult parse_theory_result(const nlohmann::json& payload);

}  // namespace isaclient
