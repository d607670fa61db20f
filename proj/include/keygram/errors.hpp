#pragma once

#include <stdexcept>
#include <string>

namespace keygram {

// Base of every error raised by the library. The CLI maps these to exit code 2.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define KEYGRAM_DEFINE_ERROR(Name)          \
  class Name : public Error {               \
   public:                                  \
    explicit Name(const std::string& what)  \
        : Error(#Name ": " + what) {}       \
  }

// instruction parsing
KEYGRAM_DEFINE_ERROR(EmptyInstruction);
KEYGRAM_DEFINE_ERROR(NoCandidates);
KEYGRAM_DEFINE_ERROR(SchemaError);
KEYGRAM_DEFINE_ERROR(BudgetError);
KEYGRAM_DEFINE_ERROR(LengthError);

// memory addressing and storage
KEYGRAM_DEFINE_ERROR(UnknownLayer);
KEYGRAM_DEFINE_ERROR(UnknownSlot);
KEYGRAM_DEFINE_ERROR(SlotMismatch);
KEYGRAM_DEFINE_ERROR(AddressOutOfRange);
KEYGRAM_DEFINE_ERROR(IoError);
KEYGRAM_DEFINE_ERROR(FormatError);
KEYGRAM_DEFINE_ERROR(ChecksumError);
KEYGRAM_DEFINE_ERROR(MissingShard);

// numerics and training
KEYGRAM_DEFINE_ERROR(DimMismatch);
KEYGRAM_DEFINE_ERROR(DivergenceError);
KEYGRAM_DEFINE_ERROR(NoInsertedLayers);
KEYGRAM_DEFINE_ERROR(ConfigError);

#undef KEYGRAM_DEFINE_ERROR

}  // namespace keygram
