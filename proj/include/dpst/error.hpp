#pragma once

#include <stdexcept>
#include <string>

namespace dpst {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor extents disagree with what an operation requires.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A file does not follow its documented layout (bad magic, bad header, bad line).
class FormatError : public Error {
 public:
  using Error::Error;
};

/// A binary file ended before a record was complete.
class TruncationError : public FormatError {
 public:
  using FormatError::FormatError;
};

/// Invalid user input: missing files, bad flag values, mismatched images.
class InputError : public Error {
 public:
  using Error::Error;
};

/// A word was looked up that the taxonomy does not contain.
class UnknownWordError : public Error {
 public:
  explicit UnknownWordError(const std::string& word)
      : Error("word not in taxonomy: '" + word + "'"), word_(word) {}

  const std::string& word() const noexcept { return word_; }

 private:
  std::string word_;
};

/// Non-finite values showed up in a computation.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// A job would exceed the configured image-size limit.
class MemoryLimitError : public Error {
 public:
  using Error::Error;
};

}  // namespace dpst
