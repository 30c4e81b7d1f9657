#pragma once

// Scalar type of the tensor core. The default build is 32-bit; defining
// HAT_DOUBLE=1 compiles the same sources in 64-bit. Each precision lives in
// its own inline namespace so both variants can be linked into one binary.

#if defined(HAT_DOUBLE) && HAT_DOUBLE
#define HAT_PRECISION_NS f64
#else
#define HAT_PRECISION_NS f32
#endif

#define HAT_NS_BEGIN \
    namespace hat {  \
    inline namespace HAT_PRECISION_NS {
#define HAT_NS_END \
    }              \
    }

HAT_NS_BEGIN

#if defined(HAT_DOUBLE) && HAT_DOUBLE
using Scalar = double;
inline constexpr int kScalarBits = 64;
#else
using Scalar = float;
inline constexpr int kScalarBits = 32;
#endif

HAT_NS_END
