#include "vismem/error.hpp"

namespace vismem {

const char* to_string(Errc code) noexcept {
  switch (code) {
    case Errc::usage: return "usage";
    case Errc::bad_magic: return "bad magic";
    case Errc::truncated: return "truncated";
    case Errc::format: return "format";
    case Errc::invariant: return "invariant violation";
    case Errc::io: return "I/O";
  }
  return "unknown";
}

int exit_code(Errc code) noexcept {
  switch (code) {
    case Errc::usage: return 2;
    case Errc::bad_magic:
    case Errc::truncated:
    case Errc::format: return 3;
    case Errc::invariant: return 4;
    case Errc::io: return 5;
  }
  return 1;
}

}  // namespace vismem
