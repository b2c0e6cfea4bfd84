/*
 * Copyright 2026 The medcf Authors.
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#ifndef MEDCF_ERROR_H_
#define MEDCF_ERROR_H_

#include <stdexcept>
#include <string>

namespace medcf {

// Base class of every domain error raised by the library. The CLI maps these
// to exit code 1 and the service to a 4xx response.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Caller supplied an argument outside the operation's domain.
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

// Tensor or vector dimensions do not agree.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Malformed input file. The message carries the 1-based line number.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, int line)
      : Error("line " + std::to_string(line) + ": " + what), line_(line) {}
  int line() const { return line_; }

 private:
  int line_;
};

// Well-formed input that disagrees with the declared vocabularies.
class SchemaError : public Error {
 public:
  using Error::Error;
};

// A numeric computation produced NaN/Inf or an undefined quantity.
class NumericError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace medcf

#endif  // MEDCF_ERROR_H_
