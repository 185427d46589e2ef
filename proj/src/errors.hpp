#pragma once

#include <stdexcept>
#include <string>

namespace argus {

// Error taxonomy shared by the C++ core. The C API maps these onto status
// codes at the boundary; the CLI maps them onto exit codes.
enum class ErrCode {
  Ok = 0,
  InvalidConfig,
  Placement,
  DatasetFormat,
  EmptyQA,
  Shape,
  UndefinedLoss,
  Grad,
  Range,
  Numeric,
  Vocab,
  EmptyInput,
  Transfer,
  FreezeViolation,
  Checksum,
  StageOrder,
  Io,
  Internal,
};

class ArgusError : public std::runtime_error {
public:
  ArgusError(ErrCode code, const std::string& msg)
      : std::runtime_error(msg), code_(code) {}
  ErrCode code() const { return code_; }

private:
  ErrCode code_;
};

#define ARGUS_DEFINE_ERROR(NAME, CODE)                       \
  struct NAME : ArgusError {                                 \
    explicit NAME(const std::string& msg)                    \
        : ArgusError(ErrCode::CODE, msg) {}                  \
  }

ARGUS_DEFINE_ERROR(InvalidConfig, InvalidConfig);
ARGUS_DEFINE_ERROR(PlacementError, Placement);
ARGUS_DEFINE_ERROR(DatasetFormatError, DatasetFormat);
ARGUS_DEFINE_ERROR(EmptyQAError, EmptyQA);
ARGUS_DEFINE_ERROR(ShapeError, Shape);
ARGUS_DEFINE_ERROR(UndefinedLossError, UndefinedLoss);
ARGUS_DEFINE_ERROR(GradError, Grad);
ARGUS_DEFINE_ERROR(RangeError, Range);
ARGUS_DEFINE_ERROR(NumericError, Numeric);
ARGUS_DEFINE_ERROR(VocabError, Vocab);
ARGUS_DEFINE_ERROR(EmptyInputError, EmptyInput);
ARGUS_DEFINE_ERROR(TransferError, Transfer);
ARGUS_DEFINE_ERROR(FreezeViolationError, FreezeViolation);
ARGUS_DEFINE_ERROR(ChecksumError, Checksum);
ARGUS_DEFINE_ERROR(StageOrderError, StageOrder);
ARGUS_DEFINE_ERROR(IoError, Io);

#undef ARGUS_DEFINE_ERROR

}  // namespace argus
