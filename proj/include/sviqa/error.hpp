#pragma once

#include <stdexcept>
#include <string>

namespace sviqa {

// Every failure raised by the library derives from Error. The CLI maps
// NumericError to exit code 3 and every other Error to exit code 2.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define SVIQA_ERROR(Name)                 \
  class Name : public Error {             \
   public:                                \
    using Error::Error;                   \
  };

SVIQA_ERROR(DimensionError)
SVIQA_ERROR(NumericError)
SVIQA_ERROR(IndexError)
SVIQA_ERROR(EmptyLossError)
SVIQA_ERROR(ReplayError)
SVIQA_ERROR(MissingGradError)
SVIQA_ERROR(FormatError)
SVIQA_ERROR(ParseError)
SVIQA_ERROR(TooShortError)
SVIQA_ERROR(EmptyInputError)
SVIQA_ERROR(ConfigError)
SVIQA_ERROR(ProtocolError)
SVIQA_ERROR(AssemblyError)
SVIQA_ERROR(ContextLengthError)
SVIQA_ERROR(IoError)
SVIQA_ERROR(UniquenessError)
SVIQA_ERROR(CollisionError)
SVIQA_ERROR(CoverageError)
SVIQA_ERROR(CompatibilityError)
SVIQA_ERROR(ModeError)

#undef SVIQA_ERROR

}  // namespace sviqa
