#pragma once

#include <stdexcept>
#include <string>

namespace freesde {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DegreeOverflow : Error {
  using Error::Error;
};
struct AlphabetError : Error {
  using Error::Error;
};
struct NonTermination : Error {
  using Error::Error;
};
struct PsdViolation : Error {
  using Error::Error;
};
struct ConvergenceError : Error {
  using Error::Error;
};
struct CflViolation : Error {
  using Error::Error;
};
struct AdaptednessError : Error {
  using Error::Error;
};
struct ConfigError : Error {
  using Error::Error;
};
struct ParseError : Error {
  using Error::Error;
};

}  // namespace freesde
