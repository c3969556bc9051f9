#pragma once

#include <stdexcept>
#include <string>

namespace vismem {

// Broad failure categories. The CLI maps these onto exit codes.
enum class Errc {
  usage,      // bad arguments or violated preconditions on inputs
  bad_magic,  // file is not the expected format
  truncated,  // payload shorter than the header declares
  format,     // other structural problems in a file
  invariant,  // data violates a type invariant (NaN, unsorted ids, ...)
  io,         // open/read/write failures
};

const char* to_string(Errc code) noexcept;

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(what), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

// CLI exit status for an error category: 2 usage, 3 format, 4 invariant, 5 I/O.
int exit_code(Errc code) noexcept;

}  // namespace vismem
