#pragma once

#include <stdexcept>
#include <string>

namespace ct {

// Root of every error the toolkit throws on purpose.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

#define CT_DEFINE_ERROR(Name)                        \
    class Name : public ::ct::Error {                \
    public:                                          \
        explicit Name(const std::string& what)       \
            : ::ct::Error(#Name ": " + what) {}      \
    }

CT_DEFINE_ERROR(IrreparableEncoding);
CT_DEFINE_ERROR(EmptyCorpus);
CT_DEFINE_ERROR(IdOutOfRange);
CT_DEFINE_ERROR(SequenceTooLong);
CT_DEFINE_ERROR(StaleTape);
CT_DEFINE_ERROR(CorruptCheckpoint);
CT_DEFINE_ERROR(VersionMismatch);
CT_DEFINE_ERROR(NoMaskedPositions);
CT_DEFINE_ERROR(ShapeMismatch);
CT_DEFINE_ERROR(DivergedLoss);
CT_DEFINE_ERROR(AllMasked);
CT_DEFINE_ERROR(ZeroVector);
CT_DEFINE_ERROR(EmptyInput);
CT_DEFINE_ERROR(ObjectiveDatasetMismatch);
CT_DEFINE_ERROR(ClassTooSmall);
CT_DEFINE_ERROR(LengthMismatch);
CT_DEFINE_ERROR(EmptyClass);
CT_DEFINE_ERROR(UnknownClass);
CT_DEFINE_ERROR(InvalidConfig);
CT_DEFINE_ERROR(IoError);
CT_DEFINE_ERROR(ParseError);

}  // namespace ct
