#ifndef REFBCM_ERROR_HPP
#define REFBCM_ERROR_HPP

#include <stdexcept>
#include <string>

namespace refbcm {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Out-of-domain argument (non-positive sd, k1 outside (0,1), bad index).
class InvalidParameter : public Error {
 public:
  using Error::Error;
};

// Malformed text input: CSV fields, arm labels, prior specs, scenario files.
class ParseError : public Error {
 public:
  using Error::Error;
};

// Input parsed but breaks a data invariant (intermittent missingness, ...).
class ValidationError : public Error {
 public:
  using Error::Error;
};

// Factorization failures and non-finite results.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Model fitting could not proceed (too few observations, divergent chain).
class EstimationError : public Error {
 public:
  using Error::Error;
};

}  // namespace refbcm

#endif  // REFBCM_ERROR_HPP
