#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "isaclient/errors.hpp"
#include "isaclient/protocol.hpp"
#include "support/test_util.hpp"

using namespace isaclient;

TEST_CASE("parse_response splits keyword and body") {
    auto resp = parse_response(R"(OK {"task":"abc"})");
    CHECK(resp.kind == ResponseKind::Ok);
    CHECK(resp.body == R"({"task":"abc"})");
    REQUIRE(resp.task.has_value());
    CHECK(*resp.task == "abc");

    auto note = parse_response(R"(NOTE {"percentage":37,"task":"abc"})");
    CHECK(note.kind == ResponseKind::Note);
    CHECK(note.task == "abc");
    REQUIRE(note.payload.has_value());
    CHECK((*note.payload)["percentage"] == 37);
}

TEST_CASE("bare keywords parse with an empty body") {
    auto resp = parse_response("OK");
    CHECK(resp.kind == ResponseKind::Ok);
    CHECK(resp.body.empty());
    CHECK_FALSE(resp.payload.has_value());
    CHECK_FALSE(resp.task.has_value());
}

TEST_CASE("unknown keywords are rejected") {
    CHECK_THROWS_AS(parse_response("HELLO world"), UnknownKind);
    CHECK_THROWS_AS(parse_response(""), UnknownKind);
    CHECK_THROWS_AS(parse_response("ok lowercase"), UnknownKind);
    CHECK_THROWS_AS(parse_response("FINISHEDX"), UnknownKind);
}

TEST_CASE("malformed JSON after a valid keyword is non-fatal") {
    auto resp = parse_response("FINISHED {\"ok\":tru");
    CHECK(resp.kind == ResponseKind::Finished);
    CHECK(resp.payload_malformed);
    CHECK_FALSE(resp.payload.has_value());
    CHECK(resp.body == "{\"ok\":tru");
}

TEST_CASE("a numeric task is not a task id") {
    auto resp = parse_response(R"(FINISHED {"ok":true,"return_code":0,"task":1})");
    CHECK_FALSE(resp.task.has_value());
    REQUIRE(resp.payload.has_value());
    CHECK((*resp.payload)["task"] == 1);
}

TEST_CASE("non-object payloads parse but carry no task") {
    auto resp = parse_response(R"(OK ["help","echo"])");
    REQUIRE(resp.payload.has_value());
    CHECK(resp.payload->is_array());
    CHECK_FALSE(resp.task.has_value());

    auto text = parse_response("OK 42");
    CHECK_FALSE(text.payload.has_value());
    CHECK(text.body == "42");
}

TEST_CASE("parse_server_info reads the golden line") {
    auto info = parse_server_info(R"(server "test" = 127.0.0.1:9999 (password "c0ffee"))");
    CHECK(info.name == "test");
    CHECK(info.host == "127.0.0.1");
    CHECK(info.port == 9999);
    CHECK(info.password == "c0ffee");

    // The shape a 2021-1 release prints, UUID password included.
    auto real = parse_server_info(
        R"(server "isabelle" = 127.0.0.1:46351 (password "6ad63c1a-8404-4c41-9efe-7216a19a1bbc"))");
    CHECK(real.name == "isabelle");
    CHECK(real.port == 46351);
    CHECK(real.password == "6ad63c1a-8404-4c41-9efe-7216a19a1bbc");
}

TEST_CASE("parse_server_info rejects anything else") {
    CHECK_THROWS_AS(parse_server_info("garbage"), MalformedInfoLine);
    CHECK_THROWS_AS(parse_server_info(""), MalformedInfoLine);
    CHECK_THROWS_AS(parse_server_info(R"(server "x" = 127.0.0.1:9999 (password ""))"), MalformedInfoLine);
    CHECK_THROWS_AS(parse_server_info(R"(server "x" = 127.0.0.1 (password "p"))"), MalformedInfoLine);
    CHECK_THROWS_AS(parse_server_info(R"(server "x" = 127.0.0.1:0 (password "p"))"), MalformedInfoLine);
    CHECK_THROWS_AS(parse_server_info(R"(server "x" = 127.0.0.1:99999 (password "p"))"), MalformedInfoLine);
    CHECK_THROWS_AS(parse_server_info(R"(server "x" = 127.0.0.1:9999 password "p")"), MalformedInfoLine);
    CHECK_THROWS_AS(parse_server_info(R"(server x = 127.0.0.1:9999 (password "p"))"), MalformedInfoLine);
    CHECK_THROWS_AS(parse_server_info(R"(server "x" = :9999 (password "p"))"), MalformedInfoLine);
}

TEST_CASE("info line render/parse round-trip on fuzzed values") {
    std::mt19937_64 rng(424242);
    std::uniform_int_distribution<int> port(1, 65535);
    std::uniform_int_distribution<int> name_len(0, 12);
    std::uniform_int_distribution<int> pw_len(1, 40);
    std::uniform_int_distribution<int> charset(0, 61);
    auto token = [&](int len) {
        static const char alphabet[] = "abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789";
        std::string t;
        for (int i = 0; i < len; ++i) t.push_back(alphabet[charset(rng)]);
        return t;
    };
    for (int i = 0; i < 100; ++i) {
        ServerInfo info;
        info.name = token(name_len(rng));
        info.host = "127.0.0.1";
        info.port = static_cast<std::uint16_t>(port(rng));
        info.password = token(pw_len(rng));
        CAPTURE(i);
        CHECK(parse_server_info(render_info_line(info)) == info);
    }
}

TEST_CASE("is_final follows the termination rules") {
    auto note = parse_response(R"(NOTE {"task":"t"})");
    auto finished_t = parse_response(R"(FINISHED {"ok":true,"task":"t"})");
    auto finished_u = parse_response(R"(FINISHED {"ok":true,"task":"u"})");
    auto finished_bare = parse_response(R"(FINISHED {"ok":true})");
    auto ok = parse_response("OK");
    auto error = parse_response(R"(ERROR "boom")");
    auto failed_t = parse_response(R"(FAILED {"task":"t"})");

    SUBCASE("synchronous") {
        CHECK(is_final(ok, std::nullopt, true));
        CHECK(is_final(error, std::nullopt, true));
        CHECK_FALSE(is_final(note, std::nullopt, true));
        CHECK_FALSE(is_final(finished_t, std::nullopt, true));
    }
    SUBCASE("asynchronous with a known task") {
        std::optional<std::string> task = "t";
        CHECK_FALSE(is_final(note, task, false));
        CHECK_FALSE(is_final(ok, task, false));
        CHECK(is_final(finished_t, task, false));
        CHECK(is_final(failed_t, task, false));
        CHECK_FALSE(is_final(finished_u, task, false));   // foreign task
        CHECK_FALSE(is_final(finished_bare, task, false)); // untagged
        CHECK(is_final(error, task, false));
    }
    SUBCASE("asynchronous without a task id") {
        CHECK(is_final(finished_bare, std::nullopt, false));
        CHECK(is_final(finished_u, std::nullopt, false));
        CHECK_FALSE(is_final(note, std::nullopt, false));
    }
}

TEST_CASE("serialize_args produces stable single-line JSON") {
    UseTheoriesArgs use;
    use.session_id = "s";
    use.theories = {"Example"};
    use.master_dir = ".";
    CHECK(serialize_args(use) == R"({"session_id":"s","theories":["Example"],"master_dir":"."})");

    CHECK(serialize_args(SessionStartArgs{}) == R"({"session":"HOL"})");

    SessionBuildArgs build;
    build.session = "examples";
    build.dirs = {"."};
    CHECK(serialize_args(build) == R"({"session":"examples","dirs":["."]})");

    build.verbose = true;
    build.include_sessions = {"HOL-Library"};
    CHECK(serialize_args(build) ==
          R"({"session":"examples","dirs":["."],"verbose":true,"include_sessions":["HOL-Library"]})");

    CHECK(serialize_args(SessionStopArgs{"abc"}) == R"({"session_id":"abc"})");
    CHECK(serialize_args(CancelArgs{"t1"}) == R"({"task":"t1"})");

    PurgeTheoriesArgs purge;
    purge.session_id = "s";
    purge.theories = {"A", "B"};
    purge.all = true;
    CHECK(serialize_args(purge) == R"({"session_id":"s","theories":["A","B"],"all":true})");

    UseTheoriesArgs no_session;
    no_session.theories = {"Example"};
    CHECK(serialize_args(no_session) == R"({"theories":["Example"]})");
}

TEST_CASE("serialize_args enforces the invariants") {
    UseTheoriesArgs empty;
    CHECK_THROWS_AS(serialize_args(empty), InvalidArgs);

    UseTheoriesArgs newline;
    newline.theories = {"Bad\nName"};
    CHECK_THROWS_AS(serialize_args(newline), InvalidArgs);

    SessionBuildArgs build;
    build.session = "a\rb";
    CHECK_THROWS_AS(serialize_args(build), InvalidArgs);
}

TEST_CASE("theory results keep the raw payload and tolerate reshaped nodes") {
    nlohmann::json payload = nlohmann::json::parse(R"({
        "ok": true,
        "nodes": [
            {"node_name": "Example.thy", "theory_name": "Draft.Example", "status": "finished",
             "messages": [{"kind": "writeln", "message": "theorem ex: True", "pos": {"line": 1}}]},
            {"node_name": "Odd.thy", "status": {"failed": true}},
            "not-an-object"
        ],
        "extra_key": [1, 2, 3]
    })");
    auto result = parse_theory_result(payload);
    CHECK(result.ok);
    REQUIRE(result.nodes.size() == 2);
    CHECK(result.nodes[0].node_name == "Example.thy");
    CHECK(result.nodes[0].theory_name == "Draft.Example");
    CHECK(result.nodes[0].status == "finished");
    REQUIRE(result.nodes[0].messages.size() == 1);
    CHECK(result.nodes[0].messages[0].kind == "writeln");
    REQUIRE(result.nodes[0].messages[0].position.has_value());
    CHECK((*result.nodes[0].messages[0].position)["line"] == 1);
    CHECK(result.nodes[1].status == R"({"failed":true})");
    CHECK(result.raw == payload);

    auto hollow = parse_theory_result(nlohmann::json::parse("{}"));
    CHECK_FALSE(hollow.ok);
    CHECK(hollow.nodes.empty());

    auto alien = parse_theory_result(nlohmann::json::parse("[1,2]"));
    CHECK(alien.raw.is_array());
}
