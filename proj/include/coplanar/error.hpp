#pragma once

#include <stdexcept>
#include <string>

namespace coplanar {

/// Base class for every error raised by the library.
class Error : public std::runtime_error
{
public:
    using std::runtime_error::runtime_error;
};

/// Malformed or missing input data (files, degenerate geometry, bad labels).
class DataError : public Error
{
public:
    using Error::Error;
};

/// Invalid arguments or configuration values.
class UsageError : public Error
{
public:
    using Error::Error;
};

/// The nonlinear solver failed (non-finite iterate or similar).
class SolverError : public Error
{
public:
    using Error::Error;
};

}  // namespace coplanar
