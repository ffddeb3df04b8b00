#pragma once

#include <stdexcept>
#include <string>

namespace atome {

// Root of every error raised by the library. The CLI maps these to exit code 2.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Shape mismatch, too-short input, out-of-range id...
class InputError : public Error {
public:
    using Error::Error;
};

// Merge policy outside its allowed range (e.g. ratio > 0.5).
class PolicyError : public Error {
public:
    using Error::Error;
};

// Pair selection that overlaps or runs past the sequence.
class SelectionError : public Error {
public:
    using Error::Error;
};

// Malformed file (ATMX header, config line, manifest).
class FormatError : public Error {
public:
    using Error::Error;
};

// Bad command-line usage that survives argument parsing. CLI exit code 1.
class UsageError : public Error {
public:
    using Error::Error;
};

}  // namespace atome
