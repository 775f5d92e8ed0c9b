#pragma once

#include <stdexcept>
#include <string>

namespace taxon {

/// Broad failure classes. The CLI maps these onto process exit codes.
enum class ErrorKind {
  kArgument,    // bad caller-supplied parameter
  kFormat,      // file does not parse
  kValidation,  // file parses but violates an invariant
  kData,        // inconsistent inputs (missing truth, empty split, ...)
  kConfig,      // experiment configuration problem
  kRegistry,    // unknown or unavailable architecture
  kLoad,        // checkpoint / weight file problem
  kShape,       // tensor dimension mismatch
  kNumeric,     // non-finite values
  kIo,          // filesystem failure
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

#define TAXON_DEFINE_ERROR(Name, Kind)                                      \
  class Name : public Error {                                               \
   public:                                                                  \
    explicit Name(const std::string& what) : Error(ErrorKind::Kind, what) {} \
  };

TAXON_DEFINE_ERROR(ArgumentError, kArgument)
TAXON_DEFINE_ERROR(FormatError, kFormat)
TAXON_DEFINE_ERROR(ValidationError, kValidation)
TAXON_DEFINE_ERROR(DataError, kData)
TAXON_DEFINE_ERROR(ConfigError, kConfig)
TAXON_DEFINE_ERROR(RegistryError, kRegistry)
TAXON_DEFINE_ERROR(LoadError, kLoad)
TAXON_DEFINE_ERROR(ShapeError, kShape)
TAXON_DEFINE_ERROR(NumericError, kNumeric)
TAXON_DEFINE_ERROR(IoError, kIo)

#undef TAXON_DEFINE_ERROR

}  // namespace taxon
