#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <thread>

#include "isaclient/client.hpp"
#include "isaclient/errors.hpp"
#include "isaclient/mock_server.hpp"
#include "net.hpp"
#include "support/test_util.hpp"

using namespace isaclient;

namespace {

// Accepts one connection and hands the raw fd to a handler; for protocol
// edge cases the scenario language cannot script (garbage keywords, silent
// servers).
class OneShotServer {
public:
    explicit OneShotServer(std::function<void(int fd)> handler) {
        listener_ = net::tcp_listen("127.0.0.1", 0, port_);
        worker_ = std::thread([this, handler = std::move(handler)] {
            int fd = ::accept(listener_.get(), nullptr, nullptr);
            if (fd >= 0) {
                handler(fd);
                ::close(fd);
            }
        });
    }
    ~OneShotServer() {
        if (worker_.joinable()) worker_.join();
        listener_.reset();
    }
    ServerInfo info(const std::string& password = "pw") const {
        return ServerInfo{"oneshot", "127.0.0.1", port_, password};
    }

private:
    net::UniqueFd listener_;
    std::uint16_t port_ = 0;
    std::thread worker_;
};

std::optional<std::string> awaited_task_of(const Transcript& t) {
    return t.entries.empty() ? std::nullopt : t.entries.front().task;
}

}  // namespace

TEST_CASE("connect authenticates against the mock") {
    mock::MockServer server(mock::builtin_scenarios().at("listing1"));
    Connection conn = Connection::connect(server.info());
    CHECK(conn.state() == Connection::State::Authenticated);
    CHECK_FALSE(conn.command_in_flight());
}

TEST_CASE("wrong password fails authentication and sends no command") {
    mock::MockServer server(mock::builtin_scenarios().at("listing1"));
    ServerInfo bad = server.info();
    bad.password = "super-wrong-secret";
    std::string message;
    try {
        Connection::connect(bad);
        FAIL("expected AuthFailed");
    } catch (const AuthFailed& e) {
        message = e.what();
    }
    // Password hygiene: neither password may leak into the error text.
    CHECK(message.find("super-wrong-secret") == std::string::npos);
    CHECK(message.find("c0ffee") == std::string::npos);

    for (int i = 0; i < 100; ++i) {
        if (!server.connection_logs().empty() && server.connection_logs()[0].closed) break;
        std::this_thread::sleep_for(std::chrono::milliseconds(5));
    }
    auto logs = server.connection_logs();
    REQUIRE(logs.size() == 1);
    CHECK(logs[0].received == "super-wrong-secret\n");
}

TEST_CASE("connecting to a closed port is refused") {
    ServerInfo nobody{"none", "127.0.0.1", test_util::free_port(), "pw"};
    CHECK_THROWS_AS(Connection::connect(nobody, std::chrono::milliseconds(500)), ConnectRefused);
}

TEST_CASE("a silent server runs into the connect timeout") {
    OneShotServer server([](int) { std::this_thread::sleep_for(std::chrono::milliseconds(800)); });
    CHECK_THROWS_AS(Connection::connect(server.info(), std::chrono::milliseconds(150)), Timeout);
}

TEST_CASE("a server that closes during authentication fails cleanly") {
    OneShotServer server([](int) {});
    CHECK_THROWS_AS(Connection::connect(server.info(), std::chrono::milliseconds(500)), AuthFailed);
}

TEST_CASE("echo returns a one-entry transcript") {
    mock::MockServer server(mock::builtin_scenarios().at("listing1"));
    Connection conn = Connection::connect(server.info());
    Transcript t = conn.echo("42");
    REQUIRE(t.entries.size() == 1);
    CHECK(t.entries[0].kind == ResponseKind::Ok);
    CHECK(t.entries[0].body == "42");
    CHECK(test_util::transcript_well_formed(t, std::nullopt, true));
}

TEST_CASE("help returns the command list") {
    mock::MockServer server(mock::builtin_scenarios().at("listing1"));
    Connection conn = Connection::connect(server.info());
    Transcript t = conn.help();
    REQUIRE(t.final_entry().payload.has_value());
    CHECK(t.final_entry().payload->is_array());
    bool found = false;
    for (const auto& name : *t.final_entry().payload) {
        if (name == "use_theories") found = true;
    }
    CHECK(found);
}

TEST_CASE("use_theories collects the full transcript and parses nodes") {
    mock::MockServer server(mock::builtin_scenarios().at("listing1"));
    Connection conn = Connection::connect(server.info());
    UseTheoriesArgs args;
    args.theories = {"Example"};
    args.master_dir = ".";
    auto [t, result] = conn.use_theories(args);

    // OK ack, five NOTEs, FINISHED.
    REQUIRE(t.entries.size() == 7);
    CHECK(t.entries[0].kind == ResponseKind::Ok);
    for (std::size_t i = 1; i <= 5; ++i) CHECK(t.entries[i].kind == ResponseKind::Note);
    CHECK(t.final_entry().kind == ResponseKind::Finished);
    CHECK(test_util::transcript_well_formed(t, awaited_task_of(t), false));

    CHECK(result.ok);
    REQUIRE(result.nodes.size() == 1);
    CHECK(result.nodes[0].theory_name == "Example");
    CHECK(result.nodes[0].messages.empty());

    // The implicit session_start cached its id for this connection.
    CHECK(conn.cached_session_id().has_value());
}

TEST_CASE("the implicit session is started once and reused") {
    mock::MockServer server(mock::builtin_scenarios().at("listing1"));
    Connection conn = Connection::connect(server.info());
    UseTheoriesArgs args;
    args.theories = {"Example"};
    conn.use_theories(args);
    std::string first_session = *conn.cached_session_id();
    conn.use_theories(args);
    CHECK(*conn.cached_session_id() == first_session);

    auto logs = server.connection_logs();
    REQUIRE(logs.size() == 1);
    std::size_t session_starts = 0;
    std::size_t pos = 0;
    while ((pos = logs[0].received.find("session_start", pos)) != std::string::npos) {
        ++session_starts;
        pos += 1;
    }
    CHECK(session_starts == 1);
    // Both use_theories lines carried the same cached session id.
    CHECK(logs[0].received.find("\"session_id\":\"" + first_session + "\"") != std::string::npos);
}

TEST_CASE("an explicit session id skips the implicit start") {
    mock::MockServer server(mock::builtin_scenarios().at("listing1"));
    Connection conn = Connection::connect(server.info());
    UseTheoriesArgs args;
    args.session_id = "preexisting";
    args.theories = {"Example"};
    conn.use_theories(args);
    CHECK_FALSE(conn.cached_session_id().has_value());
    auto logs = server.connection_logs();
    REQUIRE(logs.size() == 1);
    CHECK(logs[0].received.find("session_start") == std::string::npos);
}

TEST_CASE("use_theories rejects an empty theory list") {
    mock::MockServer server(mock::builtin_scenarios().at("listing1"));
    Connection conn = Connection::connect(server.info());
    UseTheoriesArgs args;
    CHECK_THROWS_AS(conn.use_theories(args), InvalidArgs);
}

TEST_CASE("session_start returns the new session id") {
    mock::MockServer server(mock::builtin_scenarios().at("listing1"));
    Connection conn = Connection::connect(server.info());
    auto [t, session_id] = conn.session_start();
    CHECK_FALSE(session_id.empty());
    CHECK(t.final_entry().kind == ResponseKind::Finished);
}

TEST_CASE("a FAILED session_start raises BuildFailed") {
    auto scenario = mock::builtin_scenarios().at("listing1");
    scenario.handlers["session_start"] = mock::ReplyScript{{
        {ResponseKind::Ok, R"({"task":"${task}"})"},
        {ResponseKind::Failed, R"({"ok":false,"task":"${task}","message":"heap missing"})"},
    }};
    mock::MockServer server(scenario);
    Connection conn = Connection::connect(server.info());
    try {
        conn.session_start();
        FAIL("expected BuildFailed");
    } catch (const BuildFailed& e) {
        CHECK(e.transcript.final_entry().kind == ResponseKind::Failed);
    }
}

TEST_CASE("session_start without a session id in FINISHED is a protocol violation") {
    auto scenario = mock::builtin_scenarios().at("listing1");
    scenario.handlers["session_start"] = mock::ReplyScript{{
        {ResponseKind::Ok, R"({"task":"${task}"})"},
        {ResponseKind::Finished, R"({"ok":true,"task":"${task}"})"},
    }};
    mock::MockServer server(scenario);
    Connection conn = Connection::connect(server.info());
    CHECK_THROWS_AS(conn.session_start(), ProtocolViolation);
}

TEST_CASE("session_build reports failure as data") {
    mock::MockServer server(mock::builtin_scenarios().at("failing_theory"));
    Connection conn = Connection::connect(server.info());
    SessionBuildArgs args;
    args.session = "examples";
    args.dirs = {"."};
    Transcript t = conn.session_build(args);
    CHECK(t.final_entry().kind == ResponseKind::Failed);
    CHECK(test_util::transcript_well_formed(t, awaited_task_of(t), false));
}

TEST_CASE("session_build succeeds against the listing1 script") {
    mock::MockServer server(mock::builtin_scenarios().at("listing1"));
    Connection conn = Connection::connect(server.info());
    SessionBuildArgs args;
    args.session = "examples";
    args.dirs = {"."};
    Transcript t = conn.session_build(args);
    REQUIRE(t.final_entry().kind == ResponseKind::Finished);
    CHECK((*t.final_entry().payload)["ok"] == true);
    CHECK((*t.final_entry().payload)["return_code"] == 0);
}

TEST_CASE("a failing theory surfaces its diagnostic") {
    mock::MockServer server(mock::builtin_scenarios().at("failing_theory"));
    Connection conn = Connection::connect(server.info());
    UseTheoriesArgs args;
    args.theories = {"Example"};
    args.session_id = "s";
    auto [t, result] = conn.use_theories(args);
    CHECK_FALSE(result.ok);
    REQUIRE(result.nodes.size() == 1);
    REQUIRE(result.nodes[0].messages.size() == 1);
    CHECK(result.nodes[0].messages[0].kind == "error");
    CHECK(result.nodes[0].messages[0].position.has_value());
}

TEST_CASE("session_stop and cancel and purge_theories round out the command set") {
    mock::MockServer server(mock::builtin_scenarios().at("listing1"));
    Connection conn = Connection::connect(server.info());
    Transcript stop = conn.session_stop(SessionStopArgs{"s"});
    CHECK(stop.final_entry().kind == ResponseKind::Finished);

    Transcript cancelled = conn.cancel(CancelArgs{"some-task"});
    CHECK(cancelled.final_entry().kind == ResponseKind::Ok);

    PurgeTheoriesArgs purge;
    purge.session_id = "s";
    purge.theories = {"Example"};
    Transcript purged = conn.purge_theories(purge);
    REQUIRE(purged.final_entry().payload.has_value());
    CHECK((*purged.final_entry().payload)["purged"][0] == "Example");
}

TEST_CASE("foreign task replies are recorded but never terminate collection") {
    mock::MockServer server(mock::builtin_scenarios().at("interleaved_tasks"));
    Connection conn = Connection::connect(server.info());
    UseTheoriesArgs args;
    args.session_id = "s";
    args.theories = {"Example"};
    auto [t, result] = conn.use_theories(args);
    (void)result;

    REQUIRE(t.entries.size() == 6);
    std::string own_task = *t.entries.front().task;
    // A foreign FINISHED arrives mid-stream and must not stop the wait.
    CHECK(t.entries[3].kind == ResponseKind::Finished);
    CHECK(*t.entries[3].task != own_task);
    CHECK(t.final_entry().kind == ResponseKind::Finished);
    CHECK(*t.final_entry().task == own_task);
    CHECK(test_util::transcript_well_formed(t, own_task, false));
}

TEST_CASE("transcript completeness over randomized NOTE counts") {
    auto scenario = mock::builtin_scenarios().at("listing1");
    std::mt19937_64 rng(99);
    std::uniform_int_distribution<int> note_count(1, 50);
    std::vector<int> ks;
    for (int i = 0; i < 20; ++i) {
        int k = note_count(rng);
        ks.push_back(k);
        mock::ReplyScript script;
        script.entries.push_back({ResponseKind::Ok, R"({"task":"${task}"})"});
        for (int n = 0; n < k; ++n) {
            script.entries.push_back({ResponseKind::Note, R"({"task":"${task}","n":)" + std::to_string(n) + "}"});
        }
        script.entries.push_back({ResponseKind::Finished, R"({"ok":true,"task":"${task}"})"});
        scenario.handlers["job_" + std::to_string(i)] = std::move(script);
    }
    mock::MockServer server(scenario);
    Connection conn = Connection::connect(server.info());
    for (int i = 0; i < 20; ++i) {
        Transcript t = conn.execute("job_" + std::to_string(i), "", /*synchronous=*/false);
        CAPTURE(i);
        CHECK(t.entries.size() == static_cast<std::size_t>(ks[static_cast<std::size_t>(i)]) + 2);
        CHECK(test_util::transcript_well_formed(t, awaited_task_of(t), false));
    }
}

TEST_CASE("the watchdog expires with the partial transcript attached") {
    auto scenario = mock::builtin_scenarios().at("listing1");
    scenario.handlers["use_theories"] = mock::ReplyScript{{
        {ResponseKind::Ok, R"({"task":"${task}"})"},
        {ResponseKind::Note, R"({"task":"${task}"})", std::chrono::milliseconds(600)},
        {ResponseKind::Finished, R"({"ok":true,"task":"${task}"})"},
    }};
    mock::MockServer server(scenario);
    Connection conn = Connection::connect(server.info());
    UseTheoriesArgs args;
    args.session_id = "s";
    args.theories = {"Example"};
    try {
        conn.use_theories(args, std::chrono::milliseconds(200));
        FAIL("expected WatchdogExpired");
    } catch (const WatchdogExpired& e) {
        REQUIRE(e.partial_transcript.entries.size() == 1);
        CHECK(e.partial_transcript.entries[0].kind == ResponseKind::Ok);
        CHECK(std::string(e.what()).find("c0ffee") == std::string::npos);
    }
    CHECK(conn.state() == Connection::State::Closed);
}

TEST_CASE("a mid-task close is a protocol violation carrying the partial transcript") {
    mock::MockServer server(mock::builtin_scenarios().at("close_mid_message"));
    Connection conn = Connection::connect(server.info());
    UseTheoriesArgs args;
    args.session_id = "s";
    args.theories = {"Example"};
    try {
        conn.use_theories(args);
        FAIL("expected ProtocolViolation");
    } catch (const ProtocolViolation& e) {
        // Everything before the truncated FINISHED was collected.
        CHECK(e.partial_transcript.entries.size() == 6);
    }
    CHECK(conn.state() == Connection::State::Closed);
}

TEST_CASE("an unknown keyword mid-stream is a protocol violation") {
    OneShotServer server([](int fd) {
        net::SocketSource source(fd);
        wire::MessageReader reader(source);
        (void)reader.read_message();  // password
        net::send_all(fd, wire::encode_server_message("OK {}"));
        (void)reader.read_message();  // the command
        net::send_all(fd, wire::encode_server_message("BOGUS reply"));
    });
    Connection conn = Connection::connect(server.info());
    try {
        conn.echo("x");
        FAIL("expected ProtocolViolation");
    } catch (const ProtocolViolation& e) {
        CHECK(e.partial_transcript.entries.empty());
    }
    CHECK(conn.state() == Connection::State::Closed);
}

TEST_CASE("shutdown closes the connection state") {
    mock::MockServer server(mock::builtin_scenarios().at("listing1"));
    Connection conn = Connection::connect(server.info());
    Transcript t = conn.shutdown();
    CHECK(t.final_entry().kind == ResponseKind::Ok);
    CHECK(conn.state() == Connection::State::Closed);
    CHECK_THROWS_AS(conn.echo("nope"), Error);
}

TEST_CASE("only one command may be in flight") {
    mock::MockServer server(mock::builtin_scenarios().at("slow"));
    Connection conn = Connection::connect(server.info());
    Transcript first;
    std::thread runner([&] { first = conn.echo("patience"); });
    bool saw_in_flight = false;
    for (int i = 0; i < 400; ++i) {
        if (conn.command_in_flight()) {
            saw_in_flight = true;
            break;
        }
        std::this_thread::sleep_for(std::chrono::milliseconds(1));
    }
    REQUIRE(saw_in_flight);
    CHECK_THROWS_AS(conn.echo("impatience"), CommandInFlight);
    runner.join();
    CHECK(first.final_entry().body == "patience");
    // The guard cleared; the connection is usable again.
    CHECK(conn.echo("again").final_entry().body == "again");
}

TEST_CASE("multiple independent connections to one mock") {
    // The mock serves sequentially, so run the connections one after another.
    mock::MockServer server(mock::builtin_scenarios().at("listing1"));
    {
        Connection first = Connection::connect(server.info());
        CHECK(first.echo("one").final_entry().body == "one");
    }
    {
        Connection second = Connection::connect(server.info());
        CHECK(second.echo("two").final_entry().body == "two");
    }
    CHECK(server.connection_logs().size() == 2);
}
