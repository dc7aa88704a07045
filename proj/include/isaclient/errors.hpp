#pragma once

#include <stdexcept>
#include <string>

namespace isaclient {

/// Base class for every error raised by this library.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& what) : std::runtime_error(what) {}
};

// ---- wire-level framing errors ----

/// A message that must be a single line contained a line terminator.
class EmbeddedNewline : public Error {
public:
    using Error::Error;
};

/// The peer closed the stream in the middle of a message.
class TruncatedMessage : public Error {
public:
    using Error::Error;
};

/// A decoded message was not valid UTF-8.
class InvalidUtf8 : public Error {
public:
    using Error::Error;
};

/// A length header exceeded the configured cap; the stream is likely desynced.
class OversizeMessage : public Error {
public:
    using Error::Error;
};

// ---- protocol parsing errors ----

/// A reply did not start with one of the five reply keywords.
class UnknownKind : public Error {
public:
    using Error::Error;
};

/// A server startup line did not match the expected info-line shape.
class MalformedInfoLine : public Error {
public:
    using Error::Error;
};

/// Command arguments violated an invariant (empty theory list, embedded newline, ...).
class InvalidArgs : public Error {
public:
    using Error::Error;
};

// ---- connection / process errors ----

class ConnectRefused : public Error {
public:
    using Error::Error;
};

class AuthFailed : public Error {
public:
    using Error::Error;
};

class Timeout : public Error {
public:
    using Error::Error;
};

/// Starting the server is not possible on this platform.
class UnsupportedPlatform : public Error {
public:
    using Error::Error;
};

class ExecutableNotFound : public Error {
public:
    using Error::Error;
};

/// The server process produced no parseable info line in time.
class ReadyTimeout : public Error {
public:
    using Error::Error;
};

/// The mock server could not bind its listening socket.
class BindFailure : public Error {
public:
    using Error::Error;
};

/// A second command was issued while one was still being collected.
class CommandInFlight : public Error {
public:
    using Error::Error;
};

}  // namespace isaclient
