#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>

namespace isaclient::wire {

/// Default cap on the length header of an incoming message (256 MiB).
inline constexpr std::size_t kDefaultMessageCap = 256u * 1024u * 1024u;

/// Long-format threshold used by the real server and the mock's default.
inline constexpr std::size_t kDefaultLongThreshold = 100;

bool is_valid_utf8(std::string_view text);

/// True for a non-empty line consisting solely of ASCII decimal digits.
/// Such a line is always a length header on the wire, never a message body.
bool is_length_header(std::string_view line);

/// Encode one client command line: UTF-8 bytes of `text` plus a single 0x0A.
/// Client messages always use the short format.
/// Throws EmbeddedNewline if `text` contains 0x0A or 0x0D (caller bug).
std::string encode_client_message(std::string_view text);

/// Short server frame: `text` + 0x0A. Throws EmbeddedNewline on interior
/// terminators and InvalidArgs when `text` is all digits (it would be read
/// back as a length header).
std::string encode_server_short(std::string_view text);

/// Long server frame: decimal byte count + 0x0A, then the body.
/// The count includes the body's trailing newline, matching the convention
/// of the Isabelle 2021-1 server (header = body bytes + 1).
std::string encode_server_long(std::string_view text);

/// Pick short or long format: long when the text exceeds `threshold` bytes
/// or would be mistaken for a length header.
std::string encode_server_message(std::string_view text, std::size_t threshold = kDefaultLongThreshold);

/// Abstract byte stream the decoder pulls from. Implementations block until
/// at least one byte is available, and return 0 only at end of stream.
class ByteSource {
public:
    virtual ~ByteSource() = default;

    /// Read up to `max` bytes into `buf`; returns the number of bytes read,
    /// 0 at end of stream. May throw transport-specific errors.
    virtual std::size_t read_some(char* buf, std::size_t max) = 0;
};

/// ByteSource over an in-memory buffer (tests, captured transcripts).
class MemorySource : public ByteSource {
public:
    explicit MemorySource(std::string data) : data_(std::move(data)) {}

    std::size_t read_some(char* buf, std::size_t max) override;

private:
    std::string data_;
    std::size_t pos_ = 0;
};

/// Incremental decoder for one direction of a connection.
///
/// Reads one message per call: a line, or — when the line is all digits —
/// a length-prefixed block with one trailing line terminator stripped.
/// Accepts both "\n" and "\r\n" terminators; exactly one decoder may own a
/// source at a time.
class MessageReader {
public:
    explicit MessageReader(ByteSource& source, std::size_t max_message_bytes = kDefaultMessageCap)
        : source_(source), cap_(max_message_bytes) {}

    MessageReader(const MessageReader&) = delete;
    MessageReader& operator=(const MessageReader&) = delete;

    /// Next complete message with framing stripped, or nullopt at a clean
    /// end of stream. Throws TruncatedMessage, InvalidUtf8, OversizeMessage,
    /// or EmbeddedNewline (interior terminator inside a counted block).
    std::optional<std::string> read_message();

private:
    // Reads one terminator-stripped line into `line`; false on EOF before
    // any byte. Throws TruncatedMessage when EOF hits mid-line.
    bool read_line(std::string& line);
    bool fill_buffer();

    ByteSource& source_;
    std::size_t cap_;
    std::string buffer_;
    std::size_t buffer_pos_ = 0;
};

}  // namespace isaclient::wire
