// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace lorasched {

/// Bad user input: malformed files, out-of-range parameters, infeasible requests.
/// The CLI maps this to exit code 2.
class InputError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// An internal invariant was breached at runtime. The CLI maps this to exit code 3.
class InvariantViolation : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

inline void require_input(bool ok, const std::string& what) {
    if (!ok) throw InputError(what);
}

inline void check_invariant(bool ok, const std::string& what) {
    if (!ok) throw InvariantViolation(what);
}

}  // namespace lorasched
