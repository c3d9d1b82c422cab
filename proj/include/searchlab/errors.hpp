// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace searchlab
{

/// Invalid configuration values (world, training or experiment settings).
class ConfigError: public std::invalid_argument
{
  public:
    using std::invalid_argument::invalid_argument;
};

/// A trajectory violates its structural invariants.
class StructuralError: public std::logic_error
{
  public:
    using std::logic_error::logic_error;
};

/// A caller broke an operation precondition.
class PreconditionError: public std::logic_error
{
  public:
    using std::logic_error::logic_error;
};

/// Malformed tagged text or record input. `position()` is the 1-based line.
class ParseError: public std::runtime_error
{
  public:
    ParseError(std::size_t position, const std::string& what):
        std::runtime_error("line " + std::to_string(position) + ": " + what), _position(position)
    {
    }

    [[nodiscard]] std::size_t position() const noexcept { return _position; }

  private:
    std::size_t _position;
};

/// A trajectory cannot be scored under a policy (action outside legal support).
class EvaluationError: public std::runtime_error
{
  public:
    using std::runtime_error::runtime_error;
};

/// Enumeration would exceed its configured trajectory bound.
class CapacityError: public std::runtime_error
{
  public:
    CapacityError(std::size_t count, std::size_t bound):
        std::runtime_error("trajectory space exceeds bound: " + std::to_string(count) + " > "
                           + std::to_string(bound)),
        _count(count)
    {
    }

    [[nodiscard]] std::size_t count() const noexcept { return _count; }

  private:
    std::size_t _count;
};

/// Non-finite intermediates or a diverging parameter vector.
class NumericalError: public std::runtime_error
{
  public:
    using std::runtime_error::runtime_error;
};

} // namespace searchlab
