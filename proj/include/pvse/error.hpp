#ifndef PVSE_ERROR_HPP_
#define PVSE_ERROR_HPP_

#include <stdexcept>
#include <string>

namespace pvse {

// Base of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Caller passed inconsistent dimensions, indices or sizes.
class ArgumentError : public Error {
 public:
  using Error::Error;
};

// A file or document could not be parsed or failed validation.
class IngestError : public Error {
 public:
  IngestError(std::string path, std::string reason)
      : Error(path.empty() ? reason : path + ": " + reason),
        path_(std::move(path)),
        reason_(std::move(reason)) {}

  const std::string& path() const { return path_; }
  const std::string& reason() const { return reason_; }

 private:
  std::string path_;
  std::string reason_;
};

// Lookup of an image id or a tag string failed.
class NotFoundError : public Error {
 public:
  enum class Kind { kTag, kImage, kPart };

  NotFoundError(Kind kind, std::string name)
      : Error(KindName(kind) + " not found: " + name), kind_(kind), name_(std::move(name)) {}

  Kind kind() const { return kind_; }
  const std::string& name() const { return name_; }

  static std::string KindName(Kind kind) {
    switch (kind) {
      case Kind::kTag: return "tag";
      case Kind::kImage: return "image";
      case Kind::kPart: return "part";
    }
    return "entity";
  }

 private:
  Kind kind_;
  std::string name_;
};

// Training diverged (non-finite loss) or could not start.
class TrainingError : public Error {
 public:
  TrainingError(const std::string& what, long batch_index = -1)
      : Error(batch_index < 0 ? what : what + " (batch " + std::to_string(batch_index) + ")"),
        batch_index_(batch_index) {}

  long batch_index() const { return batch_index_; }

 private:
  long batch_index_;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace pvse

#endif  // PVSE_ERROR_HPP_
