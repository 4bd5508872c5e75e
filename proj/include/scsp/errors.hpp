#pragma once

#include <stdexcept>
#include <string>

namespace scsp {

// Every failure raised by the library derives from Error so callers can
// catch the whole family at the experiment boundary.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DimensionError : Error { using Error::Error; };
struct NumericError : Error { using Error::Error; };
struct ParameterError : Error { using Error::Error; };
struct ContractError : Error { using Error::Error; };
struct FormatError : Error { using Error::Error; };
struct LengthError : Error { using Error::Error; };
struct DataError : Error { using Error::Error; };
struct IoError : Error { using Error::Error; };
struct VersionError : Error { using Error::Error; };

// Raised when every filter of a layer is zero.
struct EmptyLayerError : Error { using Error::Error; };

// Raised when a layer has fewer nonzero filters than requested clusters;
// the pruning loop leaves such a layer untouched for the round.
struct LayerSkip : Error { using Error::Error; };

}  // namespace scsp
