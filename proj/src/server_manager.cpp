#include "isaclient/server_manager.hpp"

#include <fcntl.h>
#include <poll.h>
#include <signal.h>
#include <spawn.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cerrno>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <mutex>
#include <thread>
#include <vector>

#include "isaclient/client.hpp"
#include "isaclient/errors.hpp"
#include "net.hpp"

extern char** environ;

namespace isaclient {

namespace {

constexpr std::size_t kStderrStashCap = 64 * 1024;

int shell_style_status(int raw) {
    if (WIFEXITED(raw)) return WEXITSTATUS(raw);
    if (WIFSIGNALED(raw)) return 128 + WTERMSIG(raw);
    return raw;
}

std::chrono::milliseconds time_left(std::chrono::steady_clock::time_point deadline) {
    auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - std::chrono::steady_clock::now());
    return left.count() < 0 ? std::chrono::milliseconds(0) : left;
}

// Copies both pipes into the log (or the void) until they close.
void tee_pipes(net::UniqueFd out_fd, net::UniqueFd err_fd, std::string initial,
               std::optional<std::filesystem::path> log_path) {
    std::ofstream log;
    if (log_path) {
        log.open(*log_path, std::ios::binary);
        if (log) log.write(initial.data(), static_cast<std::streamsize>(initial.size()));
    }
    pollfd fds[2] = {{out_fd.get(), POLLIN, 0}, {err_fd.get(), POLLIN, 0}};
    int open_count = 2;
    char buf[8192];
    while (open_count > 0) {
        int rc = ::poll(fds, 2, -1);
        if (rc < 0) {
            if (errno == EINTR) continue;
            break;
        }
        for (pollfd& pfd : fds) {
            if (pfd.fd < 0 || !(pfd.revents & (POLLIN | POLLHUP | POLLERR))) continue;
            ssize_t n = ::read(pfd.fd, buf, sizeof buf);
            if (n > 0) {
                if (log) log.write(buf, n);
            } else if (n == 0 || (n < 0 && errno != EINTR)) {
                pfd.fd = -1;
                --open_count;
            }
        }
        if (log) log.flush();
    }
}

}  // namespace

Platform detect_platform() {
    if (const char* override_value = std::getenv("ISACLIENT_PLATFORM_OVERRIDE")) {
        if (std::string_view(override_value) == "windows") return Platform::WindowsNative;
        if (std::string_view(override_value) == "posix") return Platform::Posix;
    }
#ifdef _WIN32
    return Platform::WindowsNative;
#else
    return Platform::Posix;
#endif
}

// The child gets its own process group so that termination reaches any
// grandchildren (the real server is a wrapper script around a JVM); stray
// descendants would otherwise hold the log pipes open forever.
void signal_server(pid_t pid, int sig) {
    if (::kill(-pid, sig) != 0) {
        ::kill(pid, sig);
    }
}

struct ServerHandle::Impl {
    ServerInfo info;
    std::string info_line;
    pid_t pid = -1;
    std::thread tee;
    std::mutex reap_mutex;
    bool reaped = false;
    int exit_status = 0;

    ~Impl() {
        if (tee.joinable()) tee.join();
    }

    // Non-blocking reap attempt; caller holds reap_mutex.
    bool try_reap() {
        if (reaped) return true;
        int raw = 0;
        pid_t rc = ::waitpid(pid, &raw, WNOHANG);
        if (rc == pid) {
            exit_status = shell_style_status(raw);
            reaped = true;
        }
        return reaped;
    }

    void reap_blocking() {
        if (reaped) return;
        int raw = 0;
        while (::waitpid(pid, &raw, 0) < 0 && errno == EINTR) {
        }
        exit_status = shell_style_status(raw);
        reaped = true;
    }
};

ServerHandle::ServerHandle() : impl_(std::make_unique<Impl>()) {}
ServerHandle::ServerHandle(ServerHandle&&) noexcept = default;
ServerHandle& ServerHandle::operator=(ServerHandle&&) noexcept = default;

ServerHandle::~ServerHandle() {
    if (impl_ && !impl_->reaped) {
        try {
            stop();
        } catch (...) {
        }
    }
}

const ServerInfo& ServerHandle::info() const { return impl_->info; }
const std::string& ServerHandle::info_line() const { return impl_->info_line; }
int ServerHandle::pid() const { return impl_->pid; }

bool ServerHandle::running() {
    std::lock_guard<std::mutex> lock(impl_->reap_mutex);
    return !impl_->try_reap();
}

int ServerHandle::wait() {
    std::lock_guard<std::mutex> lock(impl_->reap_mutex);
    impl_->reap_blocking();
    if (impl_->tee.joinable()) impl_->tee.join();
    return impl_->exit_status;
}

int ServerHandle::stop(std::chrono::milliseconds grace) {
    std::lock_guard<std::mutex> lock(impl_->reap_mutex);
    auto& impl = *impl_;
    if (impl.reaped) return impl.exit_status;

    if (!impl.try_reap()) {
        // Ask nicely over the protocol first; the server may not be
        // connectable at all (wedged, or still starting up).
        try {
            auto connect_budget = std::min(grace, std::chrono::milliseconds(1000));
            Connection conn = Connection::connect(impl.info, connect_budget);
            conn.shutdown();
        } catch (const std::exception&) {
        }
        auto deadline = std::chrono::steady_clock::now() + grace;
        while (!impl.try_reap() && std::chrono::steady_clock::now() < deadline) {
            std::this_thread::sleep_for(std::chrono::milliseconds(20));
        }
    }
    if (!impl.try_reap()) {
        signal_server(impl.pid, SIGTERM);
        auto deadline = std::chrono::steady_clock::now() + std::chrono::milliseconds(2000);
        while (!impl.try_reap() && std::chrono::steady_clock::now() < deadline) {
            std::this_thread::sleep_for(std::chrono::milliseconds(20));
        }
    }
    if (!impl.try_reap()) {
        signal_server(impl.pid, SIGKILL);
        impl.reap_blocking();
    }
    if (impl.tee.joinable()) impl.tee.join();
    return impl.exit_status;
}

ServerHandle start_server(const StartOptions& options) {
    if (options.platform == Platform::WindowsNative) {
        throw UnsupportedPlatform(
            "starting the Isabelle server is not supported on native Windows: the server runs under Cygwin "
            "there. Launch the Isabelle server manually and pass its info line to attach().");
    }

    std::string command = options.isabelle_command;
    if (const char* env_command = std::getenv("ISABELLE_COMMAND"); env_command && *env_command) {
        command = env_command;
    }

    int out_pipe[2];
    int err_pipe[2];
    if (::pipe2(out_pipe, O_CLOEXEC) != 0 || ::pipe2(err_pipe, O_CLOEXEC) != 0) {
        throw Error(std::string("pipe2: ") + std::strerror(errno));
    }
    net::UniqueFd out_read(out_pipe[0]), out_write(out_pipe[1]);
    net::UniqueFd err_read(err_pipe[0]), err_write(err_pipe[1]);

    std::vector<std::string> args = {command, "server", "-n", options.name};
    if (options.port) {
        args.push_back("-p");
        args.push_back(std::to_string(*options.port));
    }
    std::vector<char*> argv;
    argv.reserve(args.size() + 1);
    for (auto& a : args) argv.push_back(a.data());
    argv.push_back(nullptr);

    posix_spawn_file_actions_t actions;
    posix_spawn_file_actions_init(&actions);
    posix_spawn_file_actions_adddup2(&actions, out_write.get(), STDOUT_FILENO);
    posix_spawn_file_actions_adddup2(&actions, err_write.get(), STDERR_FILENO);
    posix_spawnattr_t attrs;
    posix_spawnattr_init(&attrs);
    posix_spawnattr_setpgroup(&attrs, 0);
    posix_spawnattr_setflags(&attrs, POSIX_SPAWN_SETPGROUP);

    pid_t pid = -1;
    int rc = ::posix_spawnp(&pid, command.c_str(), &actions, &attrs, argv.data(), environ);
    posix_spawn_file_actions_destroy(&actions);
    posix_spawnattr_destroy(&attrs);
    if (rc != 0) {
        if (rc == ENOENT) {
            throw ExecutableNotFound("cannot find \"" + command + "\" on the search path");
        }
        throw Error("cannot spawn \"" + command + "\": " + std::strerror(rc));
    }
    out_write.reset();
    err_write.reset();

    ServerHandle handle;
    handle.impl_->pid = pid;

    auto fail_with = [&](auto make_error) -> ServerHandle {
        signal_server(pid, SIGKILL);
        handle.impl_->reap_blocking();
        throw make_error();
    };

    // Readiness: accumulate stdout until the first complete line; stderr is
    // stashed for diagnostics and later handed to the tee.
    std::string stdout_buf;
    std::string stderr_stash;
    bool stderr_open = true;
    auto deadline = std::chrono::steady_clock::now() + options.ready_timeout;
    std::size_t line_end;
    while ((line_end = stdout_buf.find('\n')) == std::string::npos) {
        pollfd fds[2] = {{out_read.get(), POLLIN, 0}, {stderr_open ? err_read.get() : -1, POLLIN, 0}};
        auto wait = time_left(deadline);
        int ready = ::poll(fds, 2, static_cast<int>(wait.count()));
        if (ready < 0 && errno == EINTR) continue;
        if (ready == 0) {
            return fail_with([&] {
                return ReadyTimeout("no server info line within " + std::to_string(options.ready_timeout.count()) +
                                    " ms; captured stderr: " + stderr_stash.substr(0, 4096));
            });
        }
        char buf[4096];
        if (fds[1].revents & (POLLIN | POLLHUP)) {
            ssize_t n = ::read(err_read.get(), buf, sizeof buf);
            if (n > 0) {
                if (stderr_stash.size() < kStderrStashCap) {
                    stderr_stash.append(buf, static_cast<std::size_t>(n));
                }
            } else if (n == 0) {
                stderr_open = false;
            }
        }
        if (fds[0].revents & (POLLIN | POLLHUP)) {
            ssize_t n = ::read(out_read.get(), buf, sizeof buf);
            if (n > 0) {
                stdout_buf.append(buf, static_cast<std::size_t>(n));
            } else if (n == 0) {
                return fail_with([&] {
                    return ReadyTimeout("server process exited before printing an info line; captured stderr: " +
                                        stderr_stash.substr(0, 4096));
                });
            }
        }
    }

    std::string raw_line = stdout_buf.substr(0, line_end + 1);
    std::string leftover = stdout_buf.substr(line_end + 1);
    std::string line = raw_line;
    while (!line.empty() && (line.back() == '\n' || line.back() == '\r')) line.pop_back();

    ServerInfo info;
    try {
        info = parse_server_info(line);
    } catch (const MalformedInfoLine&) {
        return fail_with([&] {
            return MalformedInfoLine("first stdout line of \"" + command +
                                     "\" is not a server info line: " + line.substr(0, 120));
        });
    }

    handle.impl_->info = std::move(info);
    handle.impl_->info_line = std::move(line);
    handle.impl_->tee = std::thread(tee_pipes, std::move(out_read), std::move(err_read),
                                    raw_line + stderr_stash + leftover, options.log_path);
    return handle;
}

int stop_server(ServerHandle& handle, std::chrono::milliseconds grace) { return handle.stop(grace); }

ServerInfo attach(std::string_view info_line) {
    while (!info_line.empty() && (info_line.back() == '\n' || info_line.back() == '\r')) {
        info_line.remove_suffix(1);
    }
    return parse_server_info(info_line);
}

}  // namespace isaclient
