// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace icn {

// Base for every library error; `kind()` is the stable machine-readable name.
class Error : public std::runtime_error {
public:
  Error(std::string kind, const std::string& msg)
      : std::runtime_error(kind + ": " + msg), kind_(std::move(kind)) {}
  const std::string& kind() const { return kind_; }

private:
  std::string kind_;
};

#define ICN_DEFINE_ERROR(Name)                                    \
  class Name : public Error {                                     \
  public:                                                         \
    explicit Name(const std::string& msg) : Error(#Name, msg) {}  \
  }

ICN_DEFINE_ERROR(UnsupportedFormat);
ICN_DEFINE_ERROR(CorruptHeader);
ICN_DEFINE_ERROR(SampleRateMismatch);
ICN_DEFINE_ERROR(ClipTooShort);
ICN_DEFINE_ERROR(BadFrequencyRange);
ICN_DEFINE_ERROR(IoError);
ICN_DEFINE_ERROR(ShapeMismatch);
ICN_DEFINE_ERROR(DegenerateBatch);
ICN_DEFINE_ERROR(NotNormalized);
ICN_DEFINE_ERROR(EmptySequence);
ICN_DEFINE_ERROR(HeadMismatch);
ICN_DEFINE_ERROR(InvalidWidth);
ICN_DEFINE_ERROR(InputTooSmall);
ICN_DEFINE_ERROR(BadMagic);
ICN_DEFINE_ERROR(VersionMismatch);
ICN_DEFINE_ERROR(ChecksumMismatch);
ICN_DEFINE_ERROR(EmptyDataset);
ICN_DEFINE_ERROR(BadSpec);
ICN_DEFINE_ERROR(ConfigError);
ICN_DEFINE_ERROR(CheckpointMismatch);
ICN_DEFINE_ERROR(LabelSetMismatch);
ICN_DEFINE_ERROR(EmptyList);
ICN_DEFINE_ERROR(NumericFailure);

#undef ICN_DEFINE_ERROR

}  // namespace icn
