#pragma once

#include <stdexcept>
#include <string>

namespace mmalign {

// Error taxonomy shared across the library. CLI maps these to exit codes:
// ConfigError -> 2, IoError -> 3, NumericError -> 4.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ConfigError : Error {
    using Error::Error;
};
struct IoError : Error {
    using Error::Error;
};
struct NumericError : Error {
    using Error::Error;
};

struct ZeroNormError : NumericError {
    ZeroNormError() : NumericError("vector norm below epsilon (1e-12)") {}
};
struct DimMismatchError : NumericError {
    explicit DimMismatchError(const std::string& what) : NumericError(what) {}
};
struct BatchMismatchError : NumericError {
    explicit BatchMismatchError(const std::string& what) : NumericError(what) {}
};
struct BatchTooSmallError : NumericError {
    BatchTooSmallError() : NumericError("batch must contain at least 2 rows") {}
};
struct DegenerateColumnError : NumericError {
    explicit DegenerateColumnError(const std::string& what) : NumericError(what) {}
};
struct UnknownParameterError : Error {
    explicit UnknownParameterError(const std::string& name)
        : Error("unknown parameter: " + name) {}
};
struct NonFiniteLossError : NumericError {
    explicit NonFiniteLossError(const std::string& what) : NumericError(what) {}
};
struct TooFewModalitiesError : ConfigError {
    TooFewModalitiesError() : ConfigError("need at least 2 modality batches") {}
};
struct NoOtherModalitiesError : ConfigError {
    NoOtherModalitiesError() : ConfigError("anchored loss needs at least one non-anchor modality") {}
};
struct EmptyCurveError : NumericError {
    EmptyCurveError() : NumericError("DOS curve has no tokens") {}
};
struct GridSizeMismatchError : NumericError {
    explicit GridSizeMismatchError(const std::string& what) : NumericError(what) {}
};

}  // namespace mmalign
