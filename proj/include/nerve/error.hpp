/*
 * Copyright 2026 The nerve Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *    http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <stdexcept>
#include <string>

namespace nerve {

// Error categories map onto CLI exit codes: config 1, data 2, numeric 3.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class DataError : public Error {
 public:
  using Error::Error;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

// Incompatible tensor shapes or widths.
class ShapeError : public ConfigError {
 public:
  using ConfigError::ConfigError;
};

// Raised when a checkpoint is truncated or fails its checksum.
class CorruptFileError : public DataError {
 public:
  using DataError::DataError;
};

// Raised when a checkpoint does not match the configuration it is loaded into.
class ConfigMismatchError : public ConfigError {
 public:
  using ConfigError::ConfigError;
};

}  // namespace nerve
