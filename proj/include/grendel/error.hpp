#pragma once

#include <stdexcept>
#include <string>

namespace grendel {

/// Raised for invalid user input: bad files, bad configs, contract
/// violations detectable from arguments.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace grendel
