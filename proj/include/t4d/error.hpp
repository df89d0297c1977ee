#pragma once

#include <stdexcept>
#include <string>

namespace t4d {

// Base for every domain error raised by the library. Callers that only care
// about "something was invalid" catch this; tests match the concrete type.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

#define T4D_DEFINE_ERROR(Name)                   \
    class Name : public Error {                  \
    public:                                      \
        using Error::Error;                      \
    }

T4D_DEFINE_ERROR(PointBehindCamera);
T4D_DEFINE_ERROR(BehindNearPlane);
T4D_DEFINE_ERROR(OutOfBounds);
T4D_DEFINE_ERROR(OutOfBox);
T4D_DEFINE_ERROR(ZeroDescriptor);
T4D_DEFINE_ERROR(ShapeMismatch);
T4D_DEFINE_ERROR(InvalidRange);
T4D_DEFINE_ERROR(DegenerateSignal);
T4D_DEFINE_ERROR(IndexOutOfRange);
T4D_DEFINE_ERROR(TooFewGaussians);
T4D_DEFINE_ERROR(InvalidArgument);

// I/O failures are kept apart from validation failures so the CLI can map
// them to distinct exit codes.
T4D_DEFINE_ERROR(IoError);

#undef T4D_DEFINE_ERROR

} // namespace t4d
