#pragma once

#include <stdexcept>
#include <string>

namespace sgpt {

/// Base class for every error raised by the library. Subclasses distinguish
/// caller mistakes (bad shapes, bad files, bad arguments) from runtime
/// failures so the CLI can map them to exit codes.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& what) : std::runtime_error(what) {}
};

/// Tensor shape or dimension mismatch. The message names both shapes.
class ShapeError : public Error {
public:
    using Error::Error;
};

/// Violated precondition of a documented operation.
class ContractError : public Error {
public:
    using Error::Error;
};

/// Invalid model or training configuration.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Degenerate numeric input (zero vector, empty sequence, bound <= 0).
class InputError : public Error {
public:
    using Error::Error;
};

/// Unrecognized magic bytes or unsupported version in a persisted file.
class FormatError : public Error {
public:
    using Error::Error;
};

/// Persisted file is structurally damaged (truncation, trailing bytes,
/// inconsistent sizes).
class CorruptionError : public Error {
public:
    using Error::Error;
};

/// Malformed text input (JSON lines, qrels, run files); carries line numbers
/// where applicable.
class ParseError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

/// Prompt fixed text plus the query alone exceed the length budget, so no
/// amount of document truncation can make the render fit.
class PromptOverflowError : public Error {
public:
    using Error::Error;
};

/// Structurally invalid prompt template (missing or misplaced slots).
class TemplateError : public Error {
public:
    using Error::Error;
};

/// Numeric failure during optimization (NaN loss and similar).
class TrainingError : public Error {
public:
    using Error::Error;
};

}  // namespace sgpt
