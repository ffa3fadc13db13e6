#pragma once

#include <stdexcept>
#include <string>

namespace toptrap {

/// Base class for every failure raised by the library.
class Error : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

/// Bad or inconsistent user input (schema, ranges, preconditions).
class InputError : public Error {
  public:
    using Error::Error;
};

/// A numerical routine could not deliver a result at the requested accuracy.
class NumericalError : public Error {
  public:
    using Error::Error;
};

#define TOPTRAP_DEFINE_ERROR(Name, Base)                                       \
    class Name : public Base {                                                 \
      public:                                                                  \
        using Base::Base;                                                      \
    }

TOPTRAP_DEFINE_ERROR(ConfigParseError, InputError);
TOPTRAP_DEFINE_ERROR(SchemaError, InputError);
TOPTRAP_DEFINE_ERROR(DegenerateConfinement, InputError);
TOPTRAP_DEFINE_ERROR(DisturbanceTooLarge, InputError);
TOPTRAP_DEFINE_ERROR(FlatSpectrum, InputError);

TOPTRAP_DEFINE_ERROR(QuadratureNotConverged, NumericalError);
TOPTRAP_DEFINE_ERROR(DidNotConverge, NumericalError);
TOPTRAP_DEFINE_ERROR(SingularNormalMatrix, NumericalError);
TOPTRAP_DEFINE_ERROR(IllConditioned, NumericalError);
TOPTRAP_DEFINE_ERROR(StepUnderflow, NumericalError);
TOPTRAP_DEFINE_ERROR(InsufficientPhaseCoverage, NumericalError);
TOPTRAP_DEFINE_ERROR(NonlinearRegime, NumericalError);

#undef TOPTRAP_DEFINE_ERROR

// Names used by the calibration and Bloch layers for the same conditions.
using FitDidNotConverge = DidNotConverge;
using IntegratorStepFailure = StepUnderflow;

} // namespace toptrap
