#pragma once

#include <stdexcept>
#include <string>

namespace hypergen {

struct error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Shape or rank mismatch between operands.
struct shape_error : error {
    using error::error;
};

// Non-finite value or ill-conditioned input (zero-norm vector, NaN intermediate).
// The NaN policy is fail-fast: the offending operation aborts the step.
struct numeric_error : error {
    using error::error;
};

struct config_error : error {
    using error::error;
};

struct checkpoint_error : error {
    using error::error;
};

}  // namespace hypergen
