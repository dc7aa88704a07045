#include "isaclient/mock_server.hpp"

#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <atomic>
#include <condition_variable>
#include <deque>
#include <fstream>
#include <functional>
#include <mutex>
#include <random>
#include <thread>

#include "isaclient/errors.hpp"
#include "net.hpp"

namespace isaclient::mock {

namespace {

using nlohmann::json;
using nlohmann::ordered_json;

struct RenderContext {
    std::string task;
    std::string task2;
    std::string session_id;
    std::string arg_text;
    std::optional<json> arg_json;
};

// Single pass; replacement text is never re-scanned.
std::string render_template(const std::string& tpl, const RenderContext* ctx) {
    std::string out;
    out.reserve(tpl.size());
    std::size_t pos = 0;
    while (pos < tpl.size()) {
        std::size_t open = tpl.find("${", pos);
        if (open == std::string::npos) {
            out.append(tpl, pos, tpl.size() - pos);
            break;
        }
        out.append(tpl, pos, open - pos);
        std::size_t close = tpl.find('}', open + 2);
        if (close == std::string::npos) {
            throw InvalidArgs("unterminated placeholder in template: " + tpl);
        }
        std::string name = tpl.substr(open + 2, close - open - 2);
        if (ctx == nullptr) {
            // validation dry-run: only check the placeholder is known
            if (name != "task" && name != "task2" && name != "session_id" && name != "arg" &&
                name.rfind("json:", 0) != 0) {
                throw InvalidArgs("unknown placeholder ${" + name + "}");
            }
        } else if (name == "task") {
            out += ctx->task;
        } else if (name == "task2") {
            out += ctx->task2;
        } else if (name == "session_id") {
            out += ctx->session_id;
        } else if (name == "arg") {
            out += ctx->arg_text;
        } else if (name.rfind("json:", 0) == 0) {
            std::string rendered = "null";
            if (ctx->arg_json) {
                try {
                    rendered = ctx->arg_json->at(json::json_pointer(name.substr(5))).dump();
                } catch (const json::exception&) {
                    rendered = "null";
                }
            }
            out += rendered;
        } else {
            throw InvalidArgs("unknown placeholder ${" + name + "}");
        }
        pos = close + 1;
    }
    return out;
}

bool mentions_task(const ReplyEntry& entry) {
    return entry.body_template.find("${task}") != std::string::npos;
}

std::string reply_text(ResponseKind kind, const std::string& body) {
    std::string text(to_string(kind));
    if (!body.empty()) {
        text += ' ';
        text += body;
    }
    return text;
}

// UUID-shaped hex from two generator draws.
std::string format_id(std::uint64_t hi, std::uint64_t lo) {
    static const char* digits = "0123456789abcdef";
    std::string hex;
    hex.reserve(32);
    for (std::uint64_t word : {hi, lo}) {
        for (int shift = 60; shift >= 0; shift -= 4) {
            hex.push_back(digits[(word >> shift) & 0xF]);
        }
    }
    return hex.substr(0, 8) + "-" + hex.substr(8, 4) + "-" + hex.substr(12, 4) + "-" + hex.substr(16, 4) + "-" +
           hex.substr(20, 12);
}

}  // namespace

void Scenario::validate() const {
    if (password.empty()) {
        throw InvalidArgs("scenario password must be non-empty");
    }
    if (password.find('\n') != std::string::npos || password.find('\r') != std::string::npos) {
        throw InvalidArgs("scenario password must be single-line");
    }
    for (const auto& [command, script] : handlers) {
        bool async = false;
        for (const auto& entry : script.entries) {
            if (entry.body_template.find('\n') != std::string::npos ||
                entry.body_template.find('\r') != std::string::npos) {
                throw InvalidArgs("template for \"" + command + "\" must be single-line");
            }
            render_template(entry.body_template, nullptr);
            if (entry.kind == ResponseKind::Finished || entry.kind == ResponseKind::Failed) async = true;
        }
        if (!async) continue;
        const auto& entries = script.entries;
        if (entries.empty() || entries.front().kind != ResponseKind::Ok || !mentions_task(entries.front())) {
            throw InvalidArgs("async script for \"" + command + "\" must open with an OK bearing ${task}");
        }
        std::size_t terminal_count = 0;
        for (const auto& entry : entries) {
            if ((entry.kind == ResponseKind::Finished || entry.kind == ResponseKind::Failed) &&
                mentions_task(entry)) {
                ++terminal_count;
            }
        }
        const auto& last = entries.back();
        bool last_terminal =
            (last.kind == ResponseKind::Finished || last.kind == ResponseKind::Failed) && mentions_task(last);
        if (terminal_count != 1 || !last_terminal) {
            throw InvalidArgs("async script for \"" + command +
                              "\" must end with its single FINISHED/FAILED bearing ${task}");
        }
    }
}

ordered_json Scenario::to_json() const {
    ordered_json doc;
    doc["version"] = kFormatVersion;
    doc["name"] = name;
    doc["password"] = password;
    doc["long_format_threshold"] = long_format_threshold;
    doc["task_id_seed"] = task_id_seed;
    doc["welcome"] = welcome_body;
    ordered_json faults_doc;
    faults_doc["reject_password"] = faults.reject_password;
    faults_doc["close_mid_message"] = faults.close_mid_message;
    faults_doc["stall_ms"] = faults.stall.count();
    doc["faults"] = faults_doc;
    ordered_json handlers_doc = ordered_json::object();
    for (const auto& [command, script] : handlers) {
        ordered_json entries = ordered_json::array();
        for (const auto& entry : script.entries) {
            ordered_json e;
            e["kind"] = std::string(to_string(entry.kind));
            e["body"] = entry.body_template;
            if (entry.delay.count() > 0) e["delay_ms"] = entry.delay.count();
            entries.push_back(std::move(e));
        }
        handlers_doc[command] = std::move(entries);
    }
    doc["handlers"] = std::move(handlers_doc);
    return doc;
}

Scenario Scenario::from_json(const json& doc) {
    if (!doc.is_object()) throw InvalidArgs("scenario document must be a JSON object");
    int version = doc.value("version", -1);
    if (version != kFormatVersion) {
        throw InvalidArgs("unsupported scenario format version " + std::to_string(version));
    }
    Scenario scenario;
    scenario.name = doc.value("name", std::string("mock"));
    if (!doc.contains("password") || !doc["password"].is_string()) {
        throw InvalidArgs("scenario requires a string \"password\"");
    }
    scenario.password = doc["password"].get<std::string>();
    scenario.long_format_threshold = doc.value("long_format_threshold", wire::kDefaultLongThreshold);
    scenario.task_id_seed = doc.value("task_id_seed", std::uint64_t{0});
    scenario.welcome_body = doc.value("welcome", scenario.welcome_body);
    if (auto faults = doc.find("faults"); faults != doc.end()) {
        scenario.faults.reject_password = faults->value("reject_password", false);
        scenario.faults.close_mid_message = faults->value("close_mid_message", false);
        scenario.faults.stall = std::chrono::milliseconds(faults->value("stall_ms", std::int64_t{0}));
    }
    if (auto handlers = doc.find("handlers"); handlers != doc.end()) {
        if (!handlers->is_object()) throw InvalidArgs("\"handlers\" must be an object");
        for (auto it = handlers->begin(); it != handlers->end(); ++it) {
            ReplyScript script;
            if (!it.value().is_array()) {
                throw InvalidArgs("handler \"" + it.key() + "\" must be an array of entries");
            }
            for (const auto& e : it.value()) {
                ReplyEntry entry;
                auto kind = response_kind_from(e.value("kind", std::string()));
                if (!kind) {
                    throw InvalidArgs("handler \"" + it.key() + "\": unknown reply kind");
                }
                entry.kind = *kind;
                entry.body_template = e.value("body", std::string());
                entry.delay = std::chrono::milliseconds(e.value("delay_ms", std::int64_t{0}));
                script.entries.push_back(std::move(entry));
            }
            scenario.handlers[it.key()] = std::move(script);
        }
    }
    scenario.validate();
    return scenario;
}

Scenario Scenario::load_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw InvalidArgs("cannot open scenario file " + path.string());
    }
    json doc = json::parse(in, nullptr, false);
    if (doc.is_discarded()) {
        throw InvalidArgs("scenario file " + path.string() + " is not valid JSON");
    }
    return from_json(doc);
}

void Scenario::save_file(const std::filesystem::path& path) const {
    std::ofstream out(path);
    if (!out) {
        throw InvalidArgs("cannot write scenario file " + path.string());
    }
    out << to_json().dump(2) << '\n';
}

// ---- builtin scenarios ----

namespace {

ReplyScript sync_ok(std::string body) {
    return ReplyScript{{ReplyEntry{ResponseKind::Ok, std::move(body)}}};
}

Scenario base_scenario(std::string name) {
    Scenario s;
    s.name = std::move(name);
    s.password = "c0ffee";
    s.handlers["echo"] = sync_ok("${arg}");
    s.handlers["help"] = sync_ok(
        R"(["cancel","echo","help","purge_theories","session_build","session_start","session_stop","shutdown","use_theories"])");
    s.handlers["shutdown"] = sync_ok("");
    s.handlers["cancel"] = sync_ok("");
    s.handlers["purge_theories"] = sync_ok(R"({"purged":${json:/theories},"retained":[]})");
    s.handlers["session_start"] = ReplyScript{{
        {ResponseKind::Ok, R"({"task":"${task}"})"},
        {ResponseKind::Note, R"({"task":"${task}","message":"session build started","percentage":50})"},
        {ResponseKind::Finished, R"({"ok":true,"task":"${task}","session_id":"${session_id}"})"},
    }};
    s.handlers["session_stop"] = ReplyScript{{
        {ResponseKind::Ok, R"({"task":"${task}"})"},
        {ResponseKind::Finished, R"({"ok":true,"return_code":0,"task":"${task}"})"},
    }};
    s.handlers["session_build"] = ReplyScript{{
        {ResponseKind::Ok, R"({"task":"${task}"})"},
        {ResponseKind::Note, R"({"task":"${task}","message":"build running","percentage":40})"},
        {ResponseKind::Note, R"({"task":"${task}","message":"build running","percentage":80})"},
        {ResponseKind::Finished,
         R"({"ok":true,"return_code":0,"task":"${task}","sessions":[{"session":${json:/session},"ok":true,"return_code":0}]})"},
    }};
    s.handlers["use_theories"] = ReplyScript{{
        {ResponseKind::Ok, R"({"task":"${task}"})"},
        {ResponseKind::Note, R"({"task":"${task}","message":"theory progress","percentage":19})"},
        {ResponseKind::Note, R"({"task":"${task}","message":"theory progress","percentage":37})"},
        {ResponseKind::Note, R"({"task":"${task}","message":"theory progress","percentage":56})"},
        {ResponseKind::Note, R"({"task":"${task}","message":"theory progress","percentage":78})"},
        {ResponseKind::Note, R"({"task":"${task}","message":"theory progress","percentage":99})"},
        {ResponseKind::Finished,
         R"({"ok":true,"task":"${task}","nodes":[{"node_name":${json:/theories/0},"theory_name":${json:/theories/0},"status":"finished","messages":[]}]})"},
    }};
    return s;
}

}  // namespace

std::map<std::string, Scenario> builtin_scenarios() {
    std::map<std::string, Scenario> all;

    all["listing1"] = base_scenario("listing1");

    Scenario failing = base_scenario("failing_theory");
    failing.handlers["use_theories"] = ReplyScript{{
        {ResponseKind::Ok, R"({"task":"${task}"})"},
        {ResponseKind::Note, R"({"task":"${task}","message":"theory progress","percentage":45})"},
        {ResponseKind::Finished,
         R"({"ok":false,"task":"${task}","nodes":[{"node_name":${json:/theories/0},"theory_name":${json:/theories/0},"status":"failed","messages":[{"kind":"error","message":"Failed to finish proof","pos":{"line":3,"offset":41}}]}]})"},
    }};
    failing.handlers["session_build"] = ReplyScript{{
        {ResponseKind::Ok, R"({"task":"${task}"})"},
        {ResponseKind::Failed, R"({"ok":false,"task":"${task}","message":"build failed"})"},
    }};
    all["failing_theory"] = failing;

    Scenario interleaved = base_scenario("interleaved_tasks");
    interleaved.handlers["use_theories"] = ReplyScript{{
        {ResponseKind::Ok, R"({"task":"${task}"})"},
        {ResponseKind::Note, R"({"task":"${task}","message":"own progress","percentage":10})"},
        {ResponseKind::Note, R"({"task":"${task2}","message":"foreign progress","percentage":60})"},
        {ResponseKind::Finished, R"({"ok":true,"task":"${task2}"})"},
        {ResponseKind::Note, R"({"task":"${task}","message":"own progress","percentage":90})"},
        {ResponseKind::Finished, R"({"ok":true,"task":"${task}","nodes":[]})"},
    }};
    all["interleaved_tasks"] = interleaved;

    Scenario long_messages = base_scenario("long_messages");
    long_messages.long_format_threshold = 0;
    all["long_messages"] = long_messages;

    Scenario slow = base_scenario("slow");
    slow.faults.stall = std::chrono::milliseconds(200);
    all["slow"] = slow;

    Scenario reject = base_scenario("reject_password");
    reject.faults.reject_password = true;
    all["reject_password"] = reject;

    Scenario truncating = base_scenario("close_mid_message");
    truncating.faults.close_mid_message = true;
    all["close_mid_message"] = truncating;

    for (auto& [name, scenario] : all) scenario.validate();
    return all;
}

// ---- the server ----

struct MockServer::Impl {
    Scenario scenario;
    ServerInfo server_info;
    net::UniqueFd listen_fd;
    net::UniqueFd wake_read;
    net::UniqueFd wake_write;

    std::thread service;
    std::atomic<bool> stopping{false};
    bool stopped = false;  // guarded by control_mutex

    std::mutex control_mutex;
    std::condition_variable stop_cv;

    mutable std::mutex log_mutex;
    std::deque<ConnectionLog> logs;

    std::mt19937_64 id_rng;

    std::string next_id() {
        std::uint64_t hi = id_rng();
        std::uint64_t lo = id_rng();
        return format_id(hi, lo);
    }

    // Interruptible sleep; false when the server is stopping.
    bool sleep_for(std::chrono::milliseconds duration) {
        if (duration.count() <= 0) return !stopping.load();
        std::unique_lock<std::mutex> lock(control_mutex);
        stop_cv.wait_for(lock, duration, [this] { return stopping.load(); });
        return !stopping.load();
    }

    void record_received(std::size_t index, std::string_view bytes) {
        std::lock_guard<std::mutex> lock(log_mutex);
        logs[index].received.append(bytes);
    }

    void send_recorded(std::size_t index, int fd, std::string_view bytes) {
        {
            std::lock_guard<std::mutex> lock(log_mutex);
            logs[index].sent.append(bytes);
        }
        net::send_all(fd, bytes);
    }

    void run();
    void handle_connection(int fd, std::size_t log_index);
};

namespace {

// Tees everything read from the socket into the connection log.
class RecordingSource : public wire::ByteSource {
public:
    using Recorder = std::function<void(std::string_view)>;

    RecordingSource(net::SocketSource& inner, Recorder recorder)
        : inner_(inner), recorder_(std::move(recorder)) {}

    std::size_t read_some(char* buf, std::size_t max) override {
        std::size_t n = inner_.read_some(buf, max);
        if (n > 0) recorder_(std::string_view(buf, n));
        return n;
    }

private:
    net::SocketSource& inner_;
    Recorder recorder_;
};

}  // namespace

MockServer::MockServer(Scenario scenario, std::uint16_t port) : impl_(std::make_unique<Impl>()) {
    scenario.validate();
    impl_->scenario = std::move(scenario);
    impl_->id_rng.seed(impl_->scenario.task_id_seed);

    std::uint16_t bound = 0;
    impl_->listen_fd = net::tcp_listen("127.0.0.1", port, bound);
    impl_->server_info =
        ServerInfo{impl_->scenario.name, "127.0.0.1", bound, impl_->scenario.password};

    int pipe_fds[2];
    if (::pipe(pipe_fds) != 0) {
        throw BindFailure("cannot create wake pipe");
    }
    impl_->wake_read.reset(pipe_fds[0]);
    impl_->wake_write.reset(pipe_fds[1]);

    impl_->service = std::thread([this] { impl_->run(); });
}

MockServer::~MockServer() { stop(); }

const ServerInfo& MockServer::info() const { return impl_->server_info; }

std::vector<ConnectionLog> MockServer::connection_logs() const {
    std::lock_guard<std::mutex> lock(impl_->log_mutex);
    return {impl_->logs.begin(), impl_->logs.end()};
}

void MockServer::stop() {
    {
        std::lock_guard<std::mutex> lock(impl_->control_mutex);
        if (impl_->stopped) return;
        impl_->stopped = true;
    }
    impl_->stopping.store(true);
    impl_->stop_cv.notify_all();
    char byte = 'x';
    (void)!::write(impl_->wake_write.get(), &byte, 1);
    if (impl_->service.joinable()) impl_->service.join();
    impl_->listen_fd.reset();
}

void MockServer::Impl::run() {
    while (!stopping.load()) {
        pollfd fds[2] = {{listen_fd.get(), POLLIN, 0}, {wake_read.get(), POLLIN, 0}};
        int rc = ::poll(fds, 2, -1);
        if (rc < 0) {
            if (errno == EINTR) continue;
            break;
        }
        if (fds[1].revents & POLLIN) break;
        if (!(fds[0].revents & POLLIN)) continue;
        int conn = ::accept4(listen_fd.get(), nullptr, nullptr, SOCK_CLOEXEC);
        if (conn < 0) continue;
        std::size_t index;
        {
            std::lock_guard<std::mutex> lock(log_mutex);
            index = logs.size();
            logs.emplace_back();
        }
        try {
            handle_connection(conn, index);
        } catch (const std::exception&) {
            // A broken connection must not take the service loop down.
        }
        ::close(conn);
        {
            std::lock_guard<std::mutex> lock(log_mutex);
            logs[index].closed = true;
        }
    }
}

void MockServer::Impl::handle_connection(int fd, std::size_t log_index) {
    net::SocketSource socket_source(fd, wake_read.get());
    RecordingSource source(socket_source,
                           [this, log_index](std::string_view bytes) { record_received(log_index, bytes); });
    wire::MessageReader reader(source);

    auto send_reply = [&](ResponseKind kind, const std::string& body) {
        send_recorded(log_index, fd,
                      wire::encode_server_message(reply_text(kind, body), scenario.long_format_threshold));
    };

    // Password gate: nothing else runs before a correct password line.
    auto first = reader.read_message();
    if (!first || stopping.load()) return;
    if (scenario.faults.reject_password || *first != scenario.password) {
        send_reply(ResponseKind::Error, "\"Bad password\"");
        return;
    }
    send_reply(ResponseKind::Ok, scenario.welcome_body);

    for (;;) {
        std::optional<std::string> message;
        try {
            message = reader.read_message();
        } catch (const TruncatedMessage&) {
            return;
        }
        if (!message || stopping.load()) return;

        std::string_view command(*message);
        std::string_view argument;
        if (std::size_t sp = command.find(' '); sp != std::string_view::npos) {
            argument = command.substr(sp + 1);
            command = command.substr(0, sp);
        }

        auto handler = scenario.handlers.find(std::string(command));
        if (handler == scenario.handlers.end()) {
            send_reply(ResponseKind::Error, "\"Bad command: " + std::string(command) + "\"");
            continue;
        }

        RenderContext ctx;
        // Three draws per invocation: the id stream must not depend on which
        // placeholders a template uses.
        ctx.task = next_id();
        ctx.task2 = next_id();
        ctx.session_id = next_id();
        ctx.arg_text = std::string(argument);
        if (!argument.empty() && (argument.front() == '{' || argument.front() == '[')) {
            json parsed = json::parse(argument, nullptr, false);
            if (!parsed.is_discarded()) ctx.arg_json = std::move(parsed);
        }

        const auto& entries = handler->second.entries;
        for (std::size_t i = 0; i < entries.size(); ++i) {
            const ReplyEntry& entry = entries[i];
            if (!sleep_for(entry.delay + scenario.faults.stall)) return;
            std::string body = render_template(entry.body_template, &ctx);
            std::string encoded =
                wire::encode_server_message(reply_text(entry.kind, body), scenario.long_format_threshold);
            bool last = (i + 1 == entries.size());
            if (last && scenario.faults.close_mid_message) {
                send_recorded(log_index, fd, std::string_view(encoded).substr(0, encoded.size() / 2));
                return;
            }
            send_recorded(log_index, fd, encoded);
        }

        if (command == "shutdown") return;
    }
}

}  // namespace isaclient::mock
