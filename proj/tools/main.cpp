// isaclient: command-line front end for the Isabelle server client library.
//
// Exit codes: 0 command finished ok; 1 usage error; 2 command FAILED or
// finished with ok=false; 3 transport or process error. Machine output goes
// to stdout as JSON lines; every diagnostic goes to stderr.

#include <fcntl.h>
#include <signal.h>
#include <unistd.h>

#include <atomic>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "isaclient/client.hpp"
#include "isaclient/errors.hpp"
#include "isaclient/mock_server.hpp"
#include "isaclient/protocol.hpp"
#include "isaclient/server_manager.hpp"

namespace {

using namespace isaclient;

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitCommandFailed = 2;
constexpr int kExitTransport = 3;

struct CliUsage : std::runtime_error {
    using std::runtime_error::runtime_error;
};

volatile sig_atomic_t g_interrupted = 0;

void on_signal(int) { g_interrupted = 1; }

std::chrono::milliseconds to_ms(double seconds) {
    return std::chrono::milliseconds(static_cast<long long>(seconds * 1000.0));
}

// --info-line beats ISABELLE_SERVER_INFO beats the first line of --info-file.
ServerInfo resolve_info(const std::string& info_line, const std::string& info_file) {
    try {
        if (!info_line.empty()) return attach(info_line);
        if (const char* env = std::getenv("ISABELLE_SERVER_INFO"); env && *env) return attach(env);
        if (!info_file.empty()) {
            std::ifstream in(info_file);
            if (!in) throw CliUsage("cannot open info file: " + info_file);
            std::string first;
            std::getline(in, first);
            return attach(first);
        }
    } catch (const MalformedInfoLine& e) {
        throw CliUsage(std::string("bad server info line: ") + e.what());
    }
    throw CliUsage("no server info: pass --info-line, set ISABELLE_SERVER_INFO, or pass --info-file");
}

void print_record(const IsabelleResponse& resp, std::size_t seq) {
    nlohmann::ordered_json rec;
    rec["kind"] = std::string(to_string(resp.kind));
    rec["body"] = resp.body;
    if (resp.task) rec["task"] = *resp.task;
    rec["seq"] = seq;
    std::cout << rec.dump() << '\n' << std::flush;
}

void print_pretty(const IsabelleResponse& resp, std::size_t) {
    if (resp.kind == ResponseKind::Note && resp.payload && resp.payload->is_object()) {
        auto pct = resp.payload->find("percentage");
        if (pct != resp.payload->end() && pct->is_number()) {
            std::string message = resp.payload->value("message", std::string());
            std::fprintf(stdout, "[%3d%%] %s\n", pct->get<int>(), message.c_str());
            std::fflush(stdout);
            return;
        }
    }
    std::cout << to_string(resp.kind);
    if (!resp.body.empty()) std::cout << ' ' << resp.body;
    std::cout << '\n' << std::flush;
}

ResponseObserver make_observer(bool pretty) {
    if (pretty) return print_pretty;
    return print_record;
}

int exit_code_for_final(const IsabelleResponse& final_entry) {
    switch (final_entry.kind) {
        case ResponseKind::Ok:
            return kExitOk;
        case ResponseKind::Finished: {
            bool ok = final_entry.payload && final_entry.payload->is_object() &&
                      final_entry.payload->value("ok", false);
            return ok ? kExitOk : kExitCommandFailed;
        }
        default:
            return kExitCommandFailed;
    }
}

// ---- start ----

struct StartCliOptions {
    std::string name = "isabelle";
    std::optional<std::uint16_t> port;
    std::string log_path;
    std::string isabelle_command = "isabelle";
    double ready_timeout_s = 60.0;
    bool foreground = false;
};

StartOptions to_start_options(const StartCliOptions& cli) {
    StartOptions opts;
    opts.name = cli.name;
    opts.port = cli.port;
    if (!cli.log_path.empty()) opts.log_path = cli.log_path;
    opts.isabelle_command = cli.isabelle_command;
    opts.ready_timeout = to_ms(cli.ready_timeout_s);
    return opts;
}

int run_start_foreground(const StartCliOptions& cli) {
    ServerHandle handle = start_server(to_start_options(cli));
    std::cout << handle.info_line() << '\n' << std::flush;
    return handle.wait() == 0 ? kExitOk : kExitTransport;
}

// Default mode: a detached supervisor keeps the log tee alive while this
// process prints the info line and returns immediately.
int run_start_daemon(const StartCliOptions& cli) {
    int status_pipe[2];
    if (::pipe2(status_pipe, O_CLOEXEC) != 0) {
        std::cerr << "error: pipe2 failed\n";
        return kExitTransport;
    }
    pid_t pid = ::fork();
    if (pid < 0) {
        std::cerr << "error: fork failed\n";
        return kExitTransport;
    }
    if (pid == 0) {
        ::setsid();
        int devnull = ::open("/dev/null", O_RDWR);
        ::dup2(devnull, STDIN_FILENO);
        ::dup2(devnull, STDOUT_FILENO);
        ::dup2(devnull, STDERR_FILENO);
        if (devnull > STDERR_FILENO) ::close(devnull);
        std::string status;
        try {
            ServerHandle handle = start_server(to_start_options(cli));
            status = "O" + handle.info_line() + "\n";
            ssize_t written = ::write(status_pipe[1], status.data(), status.size());
            (void)written;
            ::close(status_pipe[1]);
            handle.wait();  // keep the tee running until the server exits
            ::_exit(0);
        } catch (const std::exception& e) {
            status = std::string("E") + e.what() + "\n";
            ssize_t written = ::write(status_pipe[1], status.data(), status.size());
            (void)written;
            ::_exit(1);
        }
    }
    ::close(status_pipe[1]);
    std::string status;
    char buf[512];
    ssize_t n;
    while ((n = ::read(status_pipe[0], buf, sizeof buf)) > 0) {
        status.append(buf, static_cast<std::size_t>(n));
        if (status.find('\n') != std::string::npos) break;
    }
    ::close(status_pipe[0]);
    if (!status.empty() && status.front() == 'O') {
        std::cout << status.substr(1, status.find('\n') - 1) << '\n' << std::flush;
        return kExitOk;
    }
    std::cerr << "error: " << (status.empty() ? "server startup failed" : status.substr(1)) << '\n';
    return kExitTransport;
}

int run_start(const StartCliOptions& cli) {
    if (detect_platform() == Platform::WindowsNative) {
        std::cerr << "error: the Isabelle server cannot be started from here on native Windows (it runs "
                     "under Cygwin). Launch the Isabelle server manually and pass its info line via "
                     "--info-line or ISABELLE_SERVER_INFO.\n";
        return kExitTransport;
    }
    return cli.foreground ? run_start_foreground(cli) : run_start_daemon(cli);
}

// ---- mock ----

int run_mock(const std::string& scenario_file, const std::string& builtin_name, std::uint16_t port) {
    mock::Scenario scenario;
    if (!builtin_name.empty()) {
        auto all = mock::builtin_scenarios();
        auto it = all.find(builtin_name);
        if (it == all.end()) throw CliUsage("unknown builtin scenario: " + builtin_name);
        scenario = it->second;
    } else {
        scenario = mock::Scenario::load_file(scenario_file);
    }
    mock::MockServer server(std::move(scenario), port);
    std::cout << render_info_line(server.info()) << '\n' << std::flush;
    std::cerr << "mock server running; Ctrl-C to stop\n";

    struct sigaction action {};
    action.sa_handler = on_signal;
    ::sigaction(SIGINT, &action, nullptr);
    ::sigaction(SIGTERM, &action, nullptr);
    while (!g_interrupted) {
        std::this_thread::sleep_for(std::chrono::milliseconds(50));
    }
    server.stop();
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Client for the Isabelle server TCP protocol"};
    app.require_subcommand(1);

    bool pretty = false;
    std::string info_line;
    std::string info_file;
    double watchdog_s = 0.0;
    bool watchdog_set = false;

    auto add_info_source = [&](CLI::App* cmd) {
        cmd->add_option("--info-line", info_line, "Server info line (as printed by `isabelle server` or `start`)");
        cmd->add_option("--info-file", info_file, "File whose first line is the server info line");
        cmd->add_flag("--pretty", pretty, "Human-readable output instead of JSON lines");
    };
    auto add_watchdog = [&](CLI::App* cmd) {
        cmd->add_option("--watchdog", watchdog_s, "Give up when no terminal reply arrives for this many seconds")
            ->check(CLI::PositiveNumber)
            ->each([&](const std::string&) { watchdog_set = true; });
    };
    auto watchdog = [&]() -> std::optional<std::chrono::milliseconds> {
        if (!watchdog_set) return std::nullopt;
        return to_ms(watchdog_s);
    };

    // start
    StartCliOptions start_options;
    auto* start_cmd = app.add_subcommand("start", "Start a local Isabelle server and print its info line");
    start_cmd->add_option("--name", start_options.name, "Server name");
    start_cmd->add_option("--port", start_options.port, "Port (omit to let the server choose)");
    start_cmd->add_option("--log", start_options.log_path, "Tee server stdout/stderr to this file");
    start_cmd->add_option("--isabelle-command", start_options.isabelle_command,
                          "Isabelle executable (ISABELLE_COMMAND overrides)");
    start_cmd->add_option("--ready-timeout", start_options.ready_timeout_s, "Seconds to wait for the info line");
    start_cmd->add_flag("--foreground", start_options.foreground, "Stay attached until the server exits");

    // echo
    std::string echo_value;
    auto* echo_cmd = app.add_subcommand("echo", "Send an echo command");
    echo_cmd->add_option("value", echo_value, "Text to echo")->required();
    add_info_source(echo_cmd);

    // use-theories
    std::vector<std::string> theories;
    std::string master_dir;
    std::string session_id;
    auto* use_cmd = app.add_subcommand("use-theories", "Submit theories for processing");
    use_cmd->add_option("theories", theories, "Theory names")->required()->expected(-1);
    use_cmd->add_option("--master-dir", master_dir, "Master directory for theory resolution");
    use_cmd->add_option("--session-id", session_id, "Existing session id (default: start one and reuse it)");
    add_info_source(use_cmd);
    add_watchdog(use_cmd);

    // build
    std::string build_session;
    std::vector<std::string> build_dirs;
    std::vector<std::string> build_options;
    std::vector<std::string> build_includes;
    bool build_verbose = false;
    bool build_clean = false;
    auto* build_cmd = app.add_subcommand("build", "Build a session");
    build_cmd->add_option("session", build_session, "Session name")->required();
    build_cmd->add_option("--dir", build_dirs, "Session directory (repeatable)");
    build_cmd->add_option("--option", build_options, "Isabelle option (repeatable)");
    build_cmd->add_option("--include-session", build_includes, "Extra session to include (repeatable)");
    build_cmd->add_flag("--verbose", build_verbose, "Verbose build messages");
    build_cmd->add_flag("--clean", build_clean,
                        "Not supported: the server API has no clean-build parameter");
    add_info_source(build_cmd);
    add_watchdog(build_cmd);

    // shutdown
    auto* shutdown_cmd = app.add_subcommand("shutdown", "Shut the server down");
    add_info_source(shutdown_cmd);

    // mock
    std::string scenario_file;
    std::string builtin_name;
    std::uint16_t mock_port = 0;
    bool mock_list = false;
    std::string dump_name;
    auto* mock_cmd = app.add_subcommand("mock", "Run the scenario-driven mock server in the foreground");
    mock_cmd->add_option("--scenario", scenario_file, "Scenario file (JSON)");
    mock_cmd->add_option("--builtin", builtin_name, "Builtin scenario name");
    mock_cmd->add_option("--port", mock_port, "Port (default: ephemeral)");
    mock_cmd->add_flag("--list", mock_list, "List builtin scenarios and exit");
    mock_cmd->add_option("--dump-builtin", dump_name, "Print a builtin scenario as JSON and exit");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitUsage;
    }

    try {
        if (*start_cmd) {
            return run_start(start_options);
        }
        if (*mock_cmd) {
            if (mock_list) {
                for (const auto& [name, scenario] : mock::builtin_scenarios()) std::cout << name << '\n';
                return kExitOk;
            }
            if (!dump_name.empty()) {
                auto all = mock::builtin_scenarios();
                auto it = all.find(dump_name);
                if (it == all.end()) throw CliUsage("unknown builtin scenario: " + dump_name);
                std::cout << it->second.to_json().dump(2) << '\n';
                return kExitOk;
            }
            if (scenario_file.empty() == builtin_name.empty()) {
                throw CliUsage("pass exactly one of --scenario or --builtin");
            }
            return run_mock(scenario_file, builtin_name, mock_port);
        }

        ServerInfo info = resolve_info(info_line, info_file);
        Connection conn = Connection::connect(info);
        auto observer = make_observer(pretty);

        if (*echo_cmd) {
            Transcript t = conn.echo(echo_value, observer);
            return exit_code_for_final(t.final_entry());
        }
        if (*use_cmd) {
            UseTheoriesArgs args;
            args.theories = theories;
            if (!master_dir.empty()) args.master_dir = master_dir;
            if (!session_id.empty()) args.session_id = session_id;
            auto [transcript, result] = conn.use_theories(std::move(args), watchdog(), observer);
            (void)transcript;
            return result.ok ? kExitOk : kExitCommandFailed;
        }
        if (*build_cmd) {
            if (build_clean) {
                throw CliUsage(
                    "--clean is not available: the Isabelle server API has no clean-build parameter "
                    "(unlike the `isabelle build` tool's -c flag). Remove the heap image manually or "
                    "run `isabelle build -c` instead.");
            }
            SessionBuildArgs args;
            args.session = build_session;
            args.dirs = build_dirs;
            args.options = build_options;
            args.include_sessions = build_includes;
            args.verbose = build_verbose;
            Transcript t = conn.session_build(args, watchdog(), observer);
            return exit_code_for_final(t.final_entry());
        }
        if (*shutdown_cmd) {
            Transcript t = conn.shutdown(observer);
            return exit_code_for_final(t.final_entry());
        }
        throw CliUsage("no subcommand");
    } catch (const CliUsage& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const InvalidArgs& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const BuildFailed& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitCommandFailed;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitTransport;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitTransport;
    }
}
