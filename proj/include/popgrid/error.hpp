#pragma once

#include <stdexcept>
#include <string>

namespace popgrid {

// Exception taxonomy. The CLI maps these onto exit codes:
// DataError/FormatError -> 2, NumericalError -> 3.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Malformed bytes or text in an input file.
class FormatError : public Error {
public:
    using Error::Error;
};

// Well-formed input that violates a contract (misaligned rasters, missing ids, ...).
class DataError : public Error {
public:
    using Error::Error;
};

// NaN/Inf or other breakdown during optimization.
class NumericalError : public Error {
public:
    using Error::Error;
};

}  // namespace popgrid
