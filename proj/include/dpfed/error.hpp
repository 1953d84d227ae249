// Copyright 2026 The dpfed Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef DPFED_ERROR_HPP_
#define DPFED_ERROR_HPP_

#include <stdexcept>
#include <string>

namespace dpfed {

// Base of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid parameters or inconsistent configuration. The CLI maps this to
// exit code 1; every other Error maps to 2.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Arithmetic on ParamVectors whose layer names, order or lengths differ.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Non-finite values, failed numerical integration and similar.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace dpfed

#endif  // DPFED_ERROR_HPP_
