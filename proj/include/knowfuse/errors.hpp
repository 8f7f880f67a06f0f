#pragma once

#include <stdexcept>
#include <string>

namespace knowfuse {

// Bad user input: malformed files, unknown ids, invalid configuration.
class InputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A violated internal invariant (a bug or a corrupted artifact).
class InvariantError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

}  // namespace knowfuse
