/*
 * Copyright (c) 2026 The hmic Authors. All rights reserved.
 * SPDX-License-Identifier: Apache-2.0
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
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

namespace hmic {

// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed filename, manifest row, or other textual input.
class ParseError : public Error {
 public:
  using Error::Error;
};

// Section or attribute combination that is not part of a label space.
class UnknownLabelError : public Error {
 public:
  using Error::Error;
};

// Tensor, matrix, or vector dimensions that do not agree.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Invalid configuration, or a stage output produced under a different config.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// AUC / pAUC / harmonic mean requested on inputs where it is undefined.
class MetricError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace hmic
