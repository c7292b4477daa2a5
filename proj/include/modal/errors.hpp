#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace modal {

/// Bad input: malformed parameters, inconsistent dimensions, rejected graphs.
class ValidationError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Mathematically undefined request (e.g. damping ratio of a zero pole).
class DomainError : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

/// A filter lost numerical integrity: singular innovation covariance or NaN state.
class DivergenceError : public std::runtime_error {
public:
    static constexpr std::size_t no_node = static_cast<std::size_t>(-1);

    DivergenceError(const std::string& what, std::size_t step, std::size_t node = no_node)
        : std::runtime_error(describe(what, step, node)), step_(step), node_(node) {}

    std::size_t step() const noexcept { return step_; }
    std::size_t node() const noexcept { return node_; }

private:
    static std::string describe(const std::string& what, std::size_t step, std::size_t node) {
        std::string msg = what + " at step " + std::to_string(step);
        if (node != no_node) msg += " on node " + std::to_string(node);
        return msg;
    }

    std::size_t step_;
    std::size_t node_;
};

/// Signal has no usable oscillatory content for a least-squares fit.
class DegenerateSignalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Iterative solver ran out of iterations. Carries the last iterate.
template <typename Iterate>
class NonConvergenceError : public std::runtime_error {
public:
    NonConvergenceError(const std::string& what, Iterate last)
        : std::runtime_error(what), last_(std::move(last)) {}

    const Iterate& last() const noexcept { return last_; }

private:
    Iterate last_;
};

/// Internal bookkeeping broke (should never reach a user).
class InvariantViolation : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

}  // namespace modal
