#pragma once

#include <stdexcept>
#include <string>

namespace edgecap {

// Base class for every error the toolkit raises. Subclasses name the
// contract that was violated so callers (and the CLI) can map them to
// user-facing diagnostics.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionError : public Error { using Error::Error; };
class GroupError : public Error { using Error::Error; };
class ContractError : public Error { using Error::Error; };
class ConfigError : public Error { using Error::Error; };
class LookupError : public Error { using Error::Error; };
class LengthError : public Error { using Error::Error; };
class ValidationError : public Error { using Error::Error; };
class StoreError : public Error { using Error::Error; };
class ParseError : public Error { using Error::Error; };
class SchemaError : public Error { using Error::Error; };
class IoError : public Error { using Error::Error; };

}  // namespace edgecap
