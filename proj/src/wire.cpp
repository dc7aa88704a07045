#include "isaclient/wire.hpp"

#include <algorithm>
#include <cstdint>
#include <cstring>

#include "isaclient/errors.hpp"

namespace isaclient::wire {

namespace {

bool has_line_terminator(std::string_view text) {
    return text.find('\n') != std::string_view::npos || text.find('\r') != std::string_view::npos;
}

// Strips one trailing "\r\n", "\n" or "\r" in place, like the server does
// when reading back a counted block.
void trim_line(std::string& text) {
    std::size_t n = text.size();
    if (n >= 2 && text[n - 2] == '\r' && text[n - 1] == '\n') {
        text.resize(n - 2);
    } else if (n >= 1 && (text[n - 1] == '\n' || text[n - 1] == '\r')) {
        text.resize(n - 1);
    }
}

}  // namespace

bool is_valid_utf8(std::string_view text) {
    const auto* p = reinterpret_cast<const unsigned char*>(text.data());
    const auto* end = p + text.size();
    while (p < end) {
        unsigned char c = *p;
        if (c < 0x80) {
            ++p;
            continue;
        }
        int len;
        std::uint32_t cp;
        if ((c & 0xE0) == 0xC0) {
            len = 2;
            cp = c & 0x1Fu;
        } else if ((c & 0xF0) == 0xE0) {
            len = 3;
            cp = c & 0x0Fu;
        } else if ((c & 0xF8) == 0xF0) {
            len = 4;
            cp = c & 0x07u;
        } else {
            return false;
        }
        if (end - p < len) return false;
        for (int i = 1; i < len; ++i) {
            unsigned char cont = p[i];
            if ((cont & 0xC0) != 0x80) return false;
            cp = (cp << 6) | (cont & 0x3Fu);
        }
        // Overlong encodings, surrogates, and out-of-range values are invalid.
        static constexpr std::uint32_t kMin[5] = {0, 0, 0x80, 0x800, 0x10000};
        if (cp < kMin[len]) return false;
        if (cp >= 0xD800 && cp <= 0xDFFF) return false;
        if (cp > 0x10FFFF) return false;
        p += len;
    }
    return true;
}

bool is_length_header(std::string_view line) {
    if (line.empty()) return false;
    return std::all_of(line.begin(), line.end(), [](char c) { return c >= '0' && c <= '9'; });
}

std::string encode_client_message(std::string_view text) {
    if (has_line_terminator(text)) {
        throw EmbeddedNewline("client message contains a line terminator; commands must be single-line");
    }
    std::string out;
    out.reserve(text.size() + 1);
    out.append(text);
    out.push_back('\n');
    return out;
}

std::string encode_server_short(std::string_view text) {
    if (has_line_terminator(text)) {
        throw EmbeddedNewline("server message contains a line terminator");
    }
    if (is_length_header(text)) {
        throw InvalidArgs("an all-digit message cannot be sent short: it would decode as a length header");
    }
    std::string out;
    out.reserve(text.size() + 1);
    out.append(text);
    out.push_back('\n');
    return out;
}

std::string encode_server_long(std::string_view text) {
    if (has_line_terminator(text)) {
        throw EmbeddedNewline("server message contains a line terminator");
    }
    // Header counts the body plus its trailing newline.
    std::string out = std::to_string(text.size() + 1);
    out.reserve(out.size() + text.size() + 2);
    out.push_back('\n');
    out.append(text);
    out.push_back('\n');
    return out;
}

std::string encode_server_message(std::string_view text, std::size_t threshold) {
    if (text.size() > threshold || is_length_header(text)) {
        return encode_server_long(text);
    }
    return encode_server_short(text);
}

std::size_t MemorySource::read_some(char* buf, std::size_t max) {
    std::size_t n = std::min(max, data_.size() - pos_);
    std::memcpy(buf, data_.data() + pos_, n);
    pos_ += n;
    return n;
}

bool MessageReader::fill_buffer() {
    if (buffer_pos_ == buffer_.size()) {
        buffer_.clear();
        buffer_pos_ = 0;
    }
    char chunk[8192];
    std::size_t n = source_.read_some(chunk, sizeof chunk);
    if (n == 0) return false;
    buffer_.append(chunk, n);
    return true;
}

bool MessageReader::read_line(std::string& line) {
    line.clear();
    bool got_any = false;
    for (;;) {
        std::size_t nl = buffer_.find('\n', buffer_pos_);
        if (nl != std::string::npos) {
            line.append(buffer_, buffer_pos_, nl - buffer_pos_);
            buffer_pos_ = nl + 1;
            if (!line.empty() && line.back() == '\r') line.pop_back();
            return true;
        }
        if (buffer_pos_ < buffer_.size()) {
            line.append(buffer_, buffer_pos_, buffer_.size() - buffer_pos_);
            buffer_pos_ = buffer_.size();
            got_any = true;
        }
        if (!fill_buffer()) {
            if (got_any || !line.empty()) {
                throw TruncatedMessage("stream closed in the middle of a line");
            }
            return false;
        }
    }
}

std::optional<std::string> MessageReader::read_message() {
    std::string line;
    if (!read_line(line)) {
        return std::nullopt;  // clean end of stream at a message boundary
    }
    std::string text;
    if (is_length_header(line)) {
        std::uint64_t count = 0;
        for (char c : line) {
            count = count * 10 + static_cast<std::uint64_t>(c - '0');
            if (count > cap_) {
                throw OversizeMessage("length header " + line + " exceeds cap of " + std::to_string(cap_) + " bytes");
            }
        }
        text.reserve(static_cast<std::size_t>(count));
        while (text.size() < count) {
            std::size_t avail = buffer_.size() - buffer_pos_;
            if (avail == 0) {
                if (!fill_buffer()) {
                    throw TruncatedMessage("stream closed after " + std::to_string(text.size()) + " of " +
                                           std::to_string(count) + " counted bytes");
                }
                continue;
            }
            std::size_t want = std::min<std::size_t>(avail, static_cast<std::size_t>(count) - text.size());
            text.append(buffer_, buffer_pos_, want);
            buffer_pos_ += want;
        }
        trim_line(text);
        if (has_line_terminator(text)) {
            throw EmbeddedNewline("counted block contains an interior line terminator");
        }
    } else {
        text = std::move(line);
    }
    if (!is_valid_utf8(text)) {
        throw InvalidUtf8("message is not valid UTF-8");
    }
    return text;
}

}  // namespace isaclient::wire
