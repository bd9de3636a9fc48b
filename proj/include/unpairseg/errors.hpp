#pragma once

#include <stdexcept>
#include <string>

namespace unpairseg {

/// Base of every error raised by the toolkit.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class FileNotFoundError : public Error {
 public:
  explicit FileNotFoundError(const std::string& path) : Error("file not found: " + path) {}
};

class CorruptHeaderError : public Error {
 public:
  using Error::Error;
};

class NotA3DVolumeError : public Error {
 public:
  explicit NotA3DVolumeError(const std::string& detail) : Error("not a 3D volume: " + detail) {}
};

class ObliqueAffineError : public Error {
 public:
  using Error::Error;
};

class NonFiniteDataError : public Error {
 public:
  using Error::Error;
};

class UnwritablePathError : public Error {
 public:
  explicit UnwritablePathError(const std::string& path) : Error("cannot write: " + path) {}
};

class InvalidOrientationError : public Error {
 public:
  explicit InvalidOrientationError(const std::string& code)
      : Error("invalid orientation code '" + code + "'") {}
};

class ShapeMismatchError : public Error {
 public:
  using Error::Error;
};

class InvalidConfigError : public Error {
 public:
  using Error::Error;
};

class ContrastiveLossError : public Error {
 public:
  ContrastiveLossError() : Error("contrastive loss needs negatives (N >= 2)") {}
};

class ClassOutOfRangeError : public Error {
 public:
  using Error::Error;
};

/// Raised when a training loss turns non-finite. Carries the location of the
/// diagnostic snapshot written before aborting.
class DivergenceError : public Error {
 public:
  DivergenceError(const std::string& what, std::string snapshot)
      : Error(what), snapshot_path(std::move(snapshot)) {}
  std::string snapshot_path;
};

class MissingCropRecordError : public Error {
 public:
  using Error::Error;
};

class MissingPrerequisiteError : public Error {
 public:
  using Error::Error;
};

class WorkdirLockedError : public Error {
 public:
  using Error::Error;
};

}  // namespace unpairseg
