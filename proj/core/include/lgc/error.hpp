#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace lgc {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Tensor or vector extents do not agree.
class ShapeError : public Error {
public:
    using Error::Error;
};

// A caller violated a documented precondition.
class ContractError : public Error {
public:
    using Error::Error;
};

// Bad user data: out-of-range token ids, malformed keep lists.
class InputError : public Error {
public:
    using Error::Error;
};

class EmptyDataError : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

class DivergenceError : public Error {
public:
    using Error::Error;
};

class FormatError : public Error {
public:
    FormatError(const std::string& what, std::uint64_t offset)
        : Error(what + " (at byte offset " + std::to_string(offset) + ")"), offset_(offset) {}
    std::uint64_t offset() const noexcept { return offset_; }

private:
    std::uint64_t offset_;
};

}  // namespace lgc
