#ifndef LATNET_ERRORS_HPP
#define LATNET_ERRORS_HPP

#include <stdexcept>

namespace latnet {

/// Base class for all library errors.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// linear algebra
struct NonSymmetric : Error { using Error::Error; };
struct NotPositiveDefinite : Error { using Error::Error; };
struct NoConvergence : Error { using Error::Error; };
struct EmptyInput : Error { using Error::Error; };

// model evaluation
struct DimensionMismatch : Error { using Error::Error; };
struct DegenerateColumn : Error { using Error::Error; };
struct NonPositiveVariance : Error { using Error::Error; };

// anchor construction
struct InvalidCount : Error { using Error::Error; };
struct TooFewPoints : Error { using Error::Error; };
struct NonFiniteLoss : Error { using Error::Error; };

// sampling
struct AdaptationFailed : Error { using Error::Error; };
struct InitializationFailed : Error { using Error::Error; };

// analysis
struct TooFewDraws : Error { using Error::Error; };
struct IndexOutOfRange : Error { using Error::Error; };
struct SizeMismatch : Error { using Error::Error; };

// data ingestion
struct ParseError : Error { using Error::Error; };
struct MissingValue : Error { using Error::Error; };

}  // namespace latnet

#endif  // LATNET_ERRORS_HPP
