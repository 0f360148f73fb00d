#pragma once

#include <stdexcept>
#include <string>

namespace magnet {

/// Base class for all library errors.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

#define MAGNET_DEFINE_ERROR(NAME) \
    struct NAME : Error {         \
        using Error::Error;       \
    }

// geometry
MAGNET_DEFINE_ERROR(DegenerateRotation);
MAGNET_DEFINE_ERROR(NotARotation);
MAGNET_DEFINE_ERROR(GimbalDegenerate);

// dataset
MAGNET_DEFINE_ERROR(InvalidConfig);
MAGNET_DEFINE_ERROR(UnsupportedFps);
MAGNET_DEFINE_ERROR(EmptyKeepSet);
MAGNET_DEFINE_ERROR(IoError);
MAGNET_DEFINE_ERROR(ParseError);
MAGNET_DEFINE_ERROR(SchemaVersionMismatch);

// nn
MAGNET_DEFINE_ERROR(ShapeMismatch);
MAGNET_DEFINE_ERROR(OddDimension);
MAGNET_DEFINE_ERROR(OddHeadDim);
MAGNET_DEFINE_ERROR(NonScalarLoss);
MAGNET_DEFINE_ERROR(GraphCycle);
MAGNET_DEFINE_ERROR(ConfigError);
MAGNET_DEFINE_ERROR(NonFiniteLoss);

// dfot
MAGNET_DEFINE_ERROR(OutOfRange);
MAGNET_DEFINE_ERROR(MissingDerivedTransforms);

// sampler
MAGNET_DEFINE_ERROR(InvalidStrategyParams);
MAGNET_DEFINE_ERROR(DegenerateLevel);
MAGNET_DEFINE_ERROR(PlanModelMismatch);
MAGNET_DEFINE_ERROR(MissingConditioning);
MAGNET_DEFINE_ERROR(InvalidMode);
MAGNET_DEFINE_ERROR(InvalidWindow);

// metrics
MAGNET_DEFINE_ERROR(DimensionMismatch);
MAGNET_DEFINE_ERROR(TooFewSamples);
MAGNET_DEFINE_ERROR(LengthMismatch);

#undef MAGNET_DEFINE_ERROR

}  // namespace magnet
