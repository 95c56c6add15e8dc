#pragma once

#include <stdexcept>
#include <string>

namespace smartlab {

// Bad caller input maps to std::invalid_argument, inconsistent object state to
// std::logic_error. The types below mark failures of the numerical construction
// itself so callers can report provenance (which step, which atom).

class singular_split_error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ill_conditioned_error : public std::runtime_error {
public:
    explicit ill_conditioned_error(const std::string& msg, double cond = 0.0)
        : std::runtime_error(msg), condition(cond) {}
    double condition;
};

class near_singular_error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Perturbation size lambda produced a non-positive density; carries the
// location where positivity first failed.
class lambda_too_large_error : public std::runtime_error {
public:
    lambda_too_large_error(const std::string& msg, int step_level, long long atom_index)
        : std::runtime_error(msg), level(step_level), atom(atom_index) {}
    int level;
    long long atom;
};

} // namespace smartlab
