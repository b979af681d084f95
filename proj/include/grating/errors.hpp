// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace grating
{

class Error : public std::runtime_error
{
public:
  using std::runtime_error::runtime_error;
};

// Invalid input that is not tied to a particular numerical failure.
class InvalidArgument : public Error
{
public:
  using Error::Error;
};

// beta_n vanishes (to threshold) for some mode inside the truncation.
class WoodAnomaly : public Error
{
public:
  using Error::Error;
};

class WrongHalfSpace : public Error
{
public:
  using Error::Error;
};

class SourcePlane : public Error
{
public:
  using Error::Error;
};

class SingularSystem : public Error
{
public:
  SingularSystem(const std::string &what, double rcond) : Error(what), rcond_(rcond) {}
  double rcond() const { return rcond_; }

private:
  double rcond_;
};

class UnsupportedCombination : public Error
{
public:
  using Error::Error;
};

class SourceOnInterface : public Error
{
public:
  using Error::Error;
};

class HeightBelowInterface : public Error
{
public:
  using Error::Error;
};

class EvanescentIncidence : public Error
{
public:
  using Error::Error;
};

class NonConvergence : public Error
{
public:
  using Error::Error;
};

class DegenerateJacobian : public Error
{
public:
  using Error::Error;
};

class ConstraintProjectionLoop : public Error
{
public:
  using Error::Error;
};

class QuadratureNonconvergence : public Error
{
public:
  using Error::Error;
};

// Configuration problems: unknown keys or wrong types.
class SchemaError : public Error
{
public:
  using Error::Error;
};

// Configuration values that violate cross-field constraints.
class ConstraintError : public Error
{
public:
  using Error::Error;
};

class MissingPayload : public Error
{
public:
  using Error::Error;
};

}  // namespace grating
