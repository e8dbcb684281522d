#pragma once

#include <stdexcept>
#include <string>

namespace dynaseg {

/// Base class for every error raised by the library.
class Error : public std::runtime_error
{
public:
    using std::runtime_error::runtime_error;
};

/// A caller broke a documented precondition (shape mismatch, label out of range, ...).
class ContractViolation : public Error
{
public:
    using Error::Error;
};

/// Input is well-formed but too small or flat for the requested computation.
class DegenerateInput : public Error
{
public:
    using Error::Error;
};

/// Training produced a non-finite loss or gradient.
class NumericDivergence : public Error
{
public:
    NumericDivergence(std::size_t iteration, const std::string& what)
        : Error("numeric divergence at iteration " + std::to_string(iteration) + ": " + what)
        , iteration_(iteration)
    {
    }

    std::size_t iteration() const noexcept { return iteration_; }

private:
    std::size_t iteration_;
};

class DecodeError : public Error
{
public:
    DecodeError(const std::string& path, const std::string& reason)
        : Error(path + ": " + reason)
    {
    }
};

class WriteError : public Error
{
public:
    WriteError(const std::string& path, const std::string& reason)
        : Error(path + ": " + reason)
    {
    }
};

namespace detail {

inline void require(bool condition, const char* message)
{
    if (!condition)
        throw ContractViolation(message);
}

inline void require(bool condition, const std::string& message)
{
    if (!condition)
        throw ContractViolation(message);
}

} // namespace detail
} // namespace dynaseg
