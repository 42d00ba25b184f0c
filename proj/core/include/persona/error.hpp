#pragma once

#include <stdexcept>
#include <string>

namespace persona {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed input file or response body. Carries human-readable location
// context ("file.json:12") when available.
class ParseError : public Error {
 public:
  using Error::Error;
};

// Structurally valid input that violates a domain invariant. The message
// names the offending item or field.
class ValidationError : public Error {
 public:
  using Error::Error;
};

class MissingLanguageError : public Error {
 public:
  using Error::Error;
};

// Respondent hard failure: network error after retries, timeout, or a
// reply the wire protocol cannot interpret.
class BackendError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace persona
