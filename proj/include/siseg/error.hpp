#pragma once

#include <stdexcept>
#include <string>

namespace siseg {

// Base class for every error raised by this library.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// --- layout / geometry ---
struct LayoutMismatch : Error { using Error::Error; };
struct BadTarget : Error { using Error::Error; };
struct OutOfBounds : Error { using Error::Error; };
struct DimMismatch : Error { using Error::Error; };

// --- file formats ---
struct BadMagic : Error { using Error::Error; };
struct BadVersion : Error { using Error::Error; };
struct TruncatedFile : Error { using Error::Error; };
struct DimOverflow : Error { using Error::Error; };
struct BadManifest : Error { using Error::Error; };
struct BadChannel : Error { using Error::Error; };
struct IoError : Error { using Error::Error; };

// --- tensors / network ---
struct ShapeMismatch : Error { using Error::Error; };
struct NonScalarLoss : Error { using Error::Error; };
struct BadShape : Error { using Error::Error; };

// --- metrics / experiments ---
struct NonBinaryInput : Error { using Error::Error; };
struct EmptyList : Error { using Error::Error; };
struct BadK : Error { using Error::Error; };
struct InfeasibleSpec : Error { using Error::Error; };
struct NumericalDivergence : Error { using Error::Error; };
struct ConfigError : Error { using Error::Error; };

}  // namespace siseg
