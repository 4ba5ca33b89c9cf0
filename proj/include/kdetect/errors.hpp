#pragma once

#include <stdexcept>
#include <string>

namespace kdetect {

// Base of all pipeline errors. Concrete class names are prefixed into the
// message so callers (and the CLI) can surface them without RTTI games.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Category bases; the CLI maps these to exit codes.
class FormatError : public Error {
public:
    using Error::Error;
};
class IoError : public Error {
public:
    using Error::Error;
};
class ConfigError : public Error {
public:
    using Error::Error;
};

#define KDETECT_ERROR(Name, Base)                                            \
    class Name : public Base {                                                \
    public:                                                                   \
        explicit Name(const std::string& msg) : Base(std::string(#Name ": ") + msg) {} \
    }

// volume_io
KDETECT_ERROR(BadMagic, FormatError);
KDETECT_ERROR(UnsupportedDatatype, FormatError);
KDETECT_ERROR(UnsupportedDimension, FormatError);
KDETECT_ERROR(TruncatedPixelData, FormatError);
KDETECT_ERROR(NonFiniteVoxel, FormatError);
KDETECT_ERROR(ValueOutOfRangeForDtype, FormatError);
KDETECT_ERROR(IoFailure, IoError);
KDETECT_ERROR(UnsupportedTransferSyntax, FormatError);
KDETECT_ERROR(MissingRequiredTag, FormatError);
KDETECT_ERROR(InconsistentGeometry, FormatError);
KDETECT_ERROR(NonUniformSliceGap, FormatError);
KDETECT_ERROR(DicomParseError, FormatError);

// preprocess
KDETECT_ERROR(DegenerateOutput, Error);
KDETECT_ERROR(TooFewVoxels, Error);

// annotations
KDETECT_ERROR(NonBinaryMask, Error);
KDETECT_ERROR(MalformedLine, FormatError);
KDETECT_ERROR(OutOfRangeValue, FormatError);
KDETECT_ERROR(TooFewPatients, Error);

// detector
KDETECT_ERROR(ShapeMismatch, Error);
KDETECT_ERROR(NonFiniteActivation, Error);
KDETECT_ERROR(NonFiniteUpdate, Error);
KDETECT_ERROR(DivergedTraining, Error);
KDETECT_ERROR(EmptyDataset, Error);
KDETECT_ERROR(FingerprintMismatch, Error);

// evaluation
KDETECT_ERROR(ZeroGroundTruth, Error);
KDETECT_ERROR(TooFewReports, Error);

// selftrain
KDETECT_ERROR(MissingWeights, Error);
KDETECT_ERROR(LeakageDetected, Error);
KDETECT_ERROR(AllBenchmarksDiverged, Error);

// phantom
KDETECT_ERROR(EllipsoidOutOfBounds, Error);

#undef KDETECT_ERROR

}  // namespace kdetect
