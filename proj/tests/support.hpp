#pragma once

#include <doctest.h>

#include "capgen/error.hpp"

namespace capgen::testing {

// Runs `f` and returns the code of the Error it throws; fails the test if nothing is thrown.
template <typename F>
ErrorCode code_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an Error");
  return ErrorCode::kIo;
}

}  // namespace capgen::testing
