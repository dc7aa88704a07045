#include "isaclient/client.hpp"

#include <utility>

#include "net.hpp"

namespace isaclient {

namespace {

// Keeps the in-flight flag honest across every exit path of execute().
class FlightGuard {
public:
    explicit FlightGuard(std::atomic<bool>& flag) : flag_(flag) {
        bool expected = false;
        if (!flag_.compare_exchange_strong(expected, true)) {
            throw CommandInFlight("a command is already in flight on this connection");
        }
    }
    ~FlightGuard() { flag_.store(false); }

private:
    std::atomic<bool>& flag_;
};

}  // namespace

struct Connection::Impl {
    ServerInfo peer;
    net::UniqueFd fd;
    std::unique_ptr<net::SocketSource> source;
    std::unique_ptr<wire::MessageReader> reader;
    State state = State::New;
    std::atomic<bool> in_flight{false};
    std::optional<std::string> cached_session_id;
};

Connection::Connection() : impl_(std::make_unique<Impl>()) {}
Connection::Connection(Connection&&) noexcept = default;
Connection& Connection::operator=(Connection&&) noexcept = default;
Connection::~Connection() = default;

Connection::State Connection::state() const { return impl_->state; }
bool Connection::command_in_flight() const { return impl_->in_flight.load(); }
const ServerInfo& Connection::peer() const { return impl_->peer; }
const std::optional<std::string>& Connection::cached_session_id() const { return impl_->cached_session_id; }

Connection Connection::connect(const ServerInfo& info, std::chrono::milliseconds timeout,
                               std::size_t max_message_bytes) {
    Connection conn;
    auto& impl = *conn.impl_;
    impl.peer = info;
    impl.fd = net::tcp_connect(info.host, info.port, timeout);
    impl.source = std::make_unique<net::SocketSource>(impl.fd.get());
    impl.reader = std::make_unique<wire::MessageReader>(*impl.source, max_message_bytes);

    // The password is the first client message; the first reply decides.
    try {
        net::send_all(impl.fd.get(), wire::encode_client_message(info.password));
    } catch (const TruncatedMessage&) {
        throw AuthFailed("server closed the connection during authentication");
    }
    impl.source->set_deadline(std::chrono::steady_clock::now() + timeout);
    std::optional<std::string> first;
    try {
        first = impl.reader->read_message();
    } catch (const net::ReadTimeout&) {
        throw Timeout("no authentication reply from " + info.host + ":" + std::to_string(info.port));
    } catch (const TruncatedMessage&) {
        first = std::nullopt;
    }
    impl.source->set_deadline(std::nullopt);
    if (!first) {
        throw AuthFailed("server closed the connection during authentication");
    }
    IsabelleResponse resp;
    try {
        resp = parse_response(*first);
    } catch (const UnknownKind&) {
        throw AuthFailed("unrecognized authentication reply");
    }
    if (resp.kind != ResponseKind::Ok) {
        throw AuthFailed("server rejected the password");
    }
    impl.state = State::Authenticated;
    return conn;
}

Transcript Connection::execute(std::string_view name, std::string_view argument, bool synchronous,
                               std::optional<std::chrono::milliseconds> watchdog,
                               const ResponseObserver& observer) {
    auto& impl = *impl_;
    FlightGuard guard(impl.in_flight);
    if (impl.state != State::Authenticated) {
        throw Error("connection is not authenticated");
    }

    std::string line(name);
    if (!argument.empty()) {
        line += ' ';
        line += argument;
    }
    std::string encoded = wire::encode_client_message(line);

    net::Deadline deadline;
    if (watchdog) deadline = std::chrono::steady_clock::now() + *watchdog;
    impl.source->set_deadline(deadline);

    Transcript transcript;
    auto poisoned = [&impl] { impl.state = State::Closed; };

    try {
        net::send_all(impl.fd.get(), encoded);
    } catch (const TruncatedMessage& e) {
        poisoned();
        throw ProtocolViolation(std::string("connection lost while sending command: ") + e.what(),
                                std::move(transcript));
    }

    bool ack_seen = false;
    std::optional<std::string> awaited_task;
    for (;;) {
        std::optional<std::string> raw;
        try {
            raw = impl.reader->read_message();
        } catch (const net::ReadTimeout&) {
            poisoned();  // stray replies for this command would desync the stream
            throw WatchdogExpired("no terminal reply for " + std::string(name) + " within the watchdog",
                                  std::move(transcript));
        } catch (const Error& e) {
            poisoned();
            throw ProtocolViolation(std::string("stream error while collecting replies: ") + e.what(),
                                    std::move(transcript));
        }
        if (!raw) {
            poisoned();
            throw ProtocolViolation("connection closed before the terminal reply", std::move(transcript));
        }
        IsabelleResponse resp;
        try {
            resp = parse_response(*raw);
        } catch (const UnknownKind& e) {
            poisoned();
            throw ProtocolViolation(std::string("protocol violation: ") + e.what(), std::move(transcript));
        }
        transcript.entries.push_back(std::move(resp));
        const IsabelleResponse& current = transcript.entries.back();
        if (observer) observer(current, transcript.entries.size() - 1);

        if (!synchronous && !ack_seen && current.kind == ResponseKind::Ok) {
            ack_seen = true;
            awaited_task = current.task;
        }
        if (is_final(current, synchronous ? std::nullopt : awaited_task, synchronous)) {
            break;
        }
    }
    impl.source->set_deadline(std::nullopt);
    transcript.final_index = transcript.entries.size() - 1;
    return transcript;
}

Transcript Connection::echo(std::string_view value, const ResponseObserver& observer) {
    return execute("echo", value, /*synchronous=*/true, std::nullopt, observer);
}

Transcript Connection::help(const ResponseObserver& observer) {
    return execute("help", "", /*synchronous=*/true, std::nullopt, observer);
}

Transcript Connection::shutdown(const ResponseObserver& observer) {
    Transcript t = execute("shutdown", "", /*synchronous=*/true, std::nullopt, observer);
    impl_->state = State::Closed;
    return t;
}

Transcript Connection::cancel(const CancelArgs& args, const ResponseObserver& observer) {
    return execute("cancel", serialize_args(args), /*synchronous=*/true, std::nullopt, observer);
}

std::pair<Transcript, std::string> Connection::session_start(const SessionStartArgs& args,
                                                             std::optional<std::chrono::milliseconds> watchdog,
                                                             const ResponseObserver& observer) {
    Transcript t = execute("session_start", serialize_args(args), /*synchronous=*/false, watchdog, observer);
    const IsabelleResponse& last = t.final_entry();
    if (last.kind != ResponseKind::Finished) {
        throw BuildFailed("session_start for \"" + args.session + "\" did not finish", std::move(t));
    }
    if (last.payload && last.payload->is_object()) {
        auto it = last.payload->find("session_id");
        if (it != last.payload->end() && it->is_string()) {
            std::string session_id = it->get<std::string>();
            return {std::move(t), std::move(session_id)};
        }
    }
    throw ProtocolViolation("session_start FINISHED without a session_id", std::move(t));
}

Transcript Connection::session_stop(const SessionStopArgs& args,
                                    std::optional<std::chrono::milliseconds> watchdog,
                                    const ResponseObserver& observer) {
    return execute("session_stop", serialize_args(args), /*synchronous=*/false, watchdog, observer);
}

Transcript Connection::session_build(const SessionBuildArgs& args,
                                     std::optional<std::chrono::milliseconds> watchdog,
                                     const ResponseObserver& observer) {
    // FAILED is data here: build callers inspect ok/return_code themselves.
    return execute("session_build", serialize_args(args), /*synchronous=*/false, watchdog, observer);
}

std::pair<Transcript, TheoryProcessingResult> Connection::use_theories(
    UseTheoriesArgs args, std::optional<std::chrono::milliseconds> watchdog, const ResponseObserver& observer) {
    if (args.theories.empty()) {
        throw InvalidArgs("use_theories requires a non-empty theory list");
    }
    if (!args.session_id) {
        if (!impl_->cached_session_id) {
            auto [start_transcript, session_id] = session_start(SessionStartArgs{}, watchdog);
            (void)start_transcript;
            impl_->cached_session_id = session_id;
        }
        args.session_id = impl_->cached_session_id;
    }
    Transcript t = execute("use_theories", serialize_args(args), /*synchronous=*/false, watchdog, observer);
    const IsabelleResponse& last = t.final_entry();
    if (last.kind != ResponseKind::Finished) {
        throw BuildFailed("use_theories did not finish", std::move(t));
    }
    TheoryProcessingResult result =
        last.payload ? parse_theory_result(*last.payload) : TheoryProcessingResult{};
    return {std::move(t), std::move(result)};
}

Transcript Connection::purge_theories(const PurgeTheoriesArgs& args, const ResponseObserver& observer) {
    return execute("purge_theories", serialize_args(args), /*synchronous=*/true, std::nullopt, observer);
}

}  // namespace isaclient
