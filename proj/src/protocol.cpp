#include "isaclient/protocol.hpp"

#include <algorithm>
#include <charconv>

#include "isaclient/errors.hpp"

namespace isaclient {

namespace {

using nlohmann::json;
using ordered_json = nlohmann::ordered_json;

void reject_line_breaks(std::string_view value, std::string_view field) {
    if (value.find('\n') != std::string_view::npos || value.find('\r') != std::string_view::npos) {
        throw InvalidArgs(std::string(field) + " must not contain line breaks");
    }
}

void reject_line_breaks(const std::vector<std::string>& values, std::string_view field) {
    for (const auto& v : values) reject_line_breaks(v, field);
}

std::string dump_single_line(const ordered_json& obj) {
    // Compact nlohmann output never inserts newlines; content is validated
    // against line breaks before it gets here.
    return obj.dump();
}

}  // namespace

std::string_view to_string(ResponseKind kind) {
    switch (kind) {
        case ResponseKind::Ok: return "OK";
        case ResponseKind::Error: return "ERROR";
        case ResponseKind::Note: return "NOTE";
        case ResponseKind::Finished: return "FINISHED";
        case ResponseKind::Failed: return "FAILED";
    }
    return "OK";
}

std::optional<ResponseKind> response_kind_from(std::string_view token) {
    if (token == "OK") return ResponseKind::Ok;
    if (token == "ERROR") return ResponseKind::Error;
    if (token == "NOTE") return ResponseKind::Note;
    if (token == "FINISHED") return ResponseKind::Finished;
    if (token == "FAILED") return ResponseKind::Failed;
    return std::nullopt;
}

IsabelleResponse parse_response(std::string_view raw) {
    std::string_view keyword = raw;
    std::string_view body;
    std::size_t sp = raw.find(' ');
    if (sp != std::string_view::npos) {
        keyword = raw.substr(0, sp);
        body = raw.substr(sp + 1);
    }
    auto kind = response_kind_from(keyword);
    if (!kind) {
        throw UnknownKind("reply does not start with a known keyword: \"" + std::string(raw.substr(0, 40)) + "\"");
    }
    IsabelleResponse resp;
    resp.kind = *kind;
    resp.body = std::string(body);
    if (!body.empty() && (body.front() == '{' || body.front() == '[')) {
        json parsed = json::parse(body, nullptr, false);
        if (parsed.is_discarded()) {
            resp.payload_malformed = true;
        } else {
            if (parsed.is_object()) {
                auto it = parsed.find("task");
                if (it != parsed.end() && it->is_string()) {
                    resp.task = it->get<std::string>();
                }
            }
            resp.payload = std::move(parsed);
        }
    }
    return resp;
}

ServerInfo parse_server_info(std::string_view line) {
    // server "NAME" = HOST:PORT (password "PASSWORD")
    auto fail = [&]() -> ServerInfo {
        throw MalformedInfoLine("not a server info line: \"" + std::string(line.substr(0, 80)) + "\"");
    };

    constexpr std::string_view prefix = "server \"";
    if (line.substr(0, prefix.size()) != prefix) return fail();
    std::size_t pos = prefix.size();

    std::size_t name_end = line.find('"', pos);
    if (name_end == std::string_view::npos) return fail();
    std::string name(line.substr(pos, name_end - pos));
    pos = name_end + 1;

    constexpr std::string_view eq = " = ";
    if (line.substr(pos, eq.size()) != eq) return fail();
    pos += eq.size();

    constexpr std::string_view pw_open = " (password \"";
    std::size_t pw_pos = line.find(pw_open, pos);
    if (pw_pos == std::string_view::npos) return fail();
    std::string_view address = line.substr(pos, pw_pos - pos);

    std::size_t colon = address.rfind(':');
    if (colon == std::string_view::npos || colon == 0) return fail();
    std::string host(address.substr(0, colon));
    std::string_view port_text = address.substr(colon + 1);
    unsigned long port = 0;
    auto [ptr, ec] = std::from_chars(port_text.data(), port_text.data() + port_text.size(), port);
    if (ec != std::errc() || ptr != port_text.data() + port_text.size()) return fail();
    if (port < 1 || port > 65535) return fail();

    std::size_t pw_start = pw_pos + pw_open.size();
    constexpr std::string_view pw_close = "\")";
    if (line.size() < pw_start + pw_close.size()) return fail();
    if (line.substr(line.size() - pw_close.size()) != pw_close) return fail();
    std::string password(line.substr(pw_start, line.size() - pw_close.size() - pw_start));
    if (password.empty() || password.find('"') != std::string::npos) return fail();

    ServerInfo info;
    info.name = std::move(name);
    info.host = std::move(host);
    info.port = static_cast<std::uint16_t>(port);
    info.password = std::move(password);
    return info;
}

std::string render_info_line(const ServerInfo& info) {
    for (std::string_view field : {std::string_view(info.name), std::string_view(info.password)}) {
        if (field.find('"') != std::string_view::npos) {
            throw InvalidArgs("info line fields cannot contain '\"'");
        }
        reject_line_breaks(field, "info line field");
    }
    if (info.password.empty()) {
        throw InvalidArgs("password must be non-empty");
    }
    return "server \"" + info.name + "\" = " + info.host + ":" + std::to_string(info.port) + " (password \"" +
           info.password + "\")";
}

bool is_final(const IsabelleResponse& resp, const std::optional<std::string>& task, bool synchronous) {
    if (synchronous) {
        return resp.kind == ResponseKind::Ok || resp.kind == ResponseKind::Error;
    }
    if (resp.kind == ResponseKind::Error) return true;
    if (resp.kind != ResponseKind::Finished && resp.kind != ResponseKind::Failed) return false;
    if (!task) return true;
    return resp.task && *resp.task == *task;
}

std::string serialize_args(const SessionBuildArgs& args) {
    reject_line_breaks(args.session, "session");
    reject_line_breaks(args.dirs, "dirs");
    reject_line_breaks(args.options, "options");
    reject_line_breaks(args.include_sessions, "include_sessions");
    ordered_json obj;
    obj["session"] = args.session;
    if (!args.dirs.empty()) obj["dirs"] = args.dirs;
    if (!args.options.empty()) obj["options"] = args.options;
    if (args.verbose) obj["verbose"] = true;
    if (!args.include_sessions.empty()) obj["include_sessions"] = args.include_sessions;
    return dump_single_line(obj);
}

std::string serialize_args(const SessionStartArgs& args) {
    reject_line_breaks(args.session, "session");
    reject_line_breaks(args.dirs, "dirs");
    reject_line_breaks(args.options, "options");
    ordered_json obj;
    obj["session"] = args.session;
    if (!args.dirs.empty()) obj["dirs"] = args.dirs;
    if (!args.options.empty()) obj["options"] = args.options;
    if (args.verbose) obj["verbose"] = true;
    return dump_single_line(obj);
}

std::string serialize_args(const SessionStopArgs& args) {
    reject_line_breaks(args.session_id, "session_id");
    ordered_json obj;
    obj["session_id"] = args.session_id;
    return dump_single_line(obj);
}

std::string serialize_args(const UseTheoriesArgs& args) {
    if (args.theories.empty()) {
        throw InvalidArgs("use_theories requires a non-empty theory list");
    }
    if (args.session_id) reject_line_breaks(*args.session_id, "session_id");
    reject_line_breaks(args.theories, "theories");
    if (args.master_dir) reject_line_breaks(*args.master_dir, "master_dir");
    ordered_json obj;
    if (args.session_id) obj["session_id"] = *args.session_id;
    obj["theories"] = args.theories;
    if (args.master_dir) obj["master_dir"] = *args.master_dir;
    return dump_single_line(obj);
}

std::string serialize_args(const PurgeTheoriesArgs& args) {
    reject_line_breaks(args.session_id, "session_id");
    reject_line_breaks(args.theories, "theories");
    if (args.master_dir) reject_line_breaks(*args.master_dir, "master_dir");
    ordered_json obj;
    obj["session_id"] = args.session_id;
    obj["theories"] = args.theories;
    if (args.master_dir) obj["master_dir"] = *args.master_dir;
    if (args.all) obj["all"] = true;
    return dump_single_line(obj);
}

std::string serialize_args(const CancelArgs& args) {
    reject_line_breaks(args.task, "task");
    ordered_json obj;
    obj["task"] = args.task;
    return dump_single_line(obj);
}

TheoryProcessingResult parse_theory_result(const nlohmann::json& payload) {
    TheoryProcessingResult result;
    result.raw = payload;
    if (!payload.is_object()) return result;

    if (auto it = payload.find("ok"); it != payload.end() && it->is_boolean()) {
        result.ok = it->get<bool>();
    }
    auto nodes = payload.find("nodes");
    if (nodes == payload.end() || !nodes->is_array()) return result;

    auto text_of = [](const json& obj, const char* key) -> std::string {
        auto it = obj.find(key);
        if (it == obj.end()) return {};
        if (it->is_string()) return it->get<std::string>();
        return it->dump();  // reshaped field; keep it readable
    };

    for (const auto& node : *nodes) {
        if (!node.is_object()) continue;
        NodeResult parsed;
        parsed.node_name = text_of(node, "node_name");
        parsed.theory_name = text_of(node, "theory_name");
        parsed.status = text_of(node, "status");
        if (auto msgs = node.find("messages"); msgs != node.end() && msgs->is_array()) {
            for (const auto& msg : *msgs) {
                if (!msg.is_object()) continue;
                DiagnosticMessage diag;
                diag.kind = text_of(msg, "kind");
                diag.message = text_of(msg, "message");
                if (auto pos = msg.find("pos"); pos != msg.end()) {
                    diag.position = *pos;
                }
                parsed.messages.push_back(std::move(diag));
            }
        }
        result.nodes.push_back(std::move(parsed));
    }
    return result;
}

}  // namespace isaclient
