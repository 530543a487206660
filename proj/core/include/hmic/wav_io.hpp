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

#include <filesystem>

#include "hmic/dsp_frontend.hpp"

namespace hmic {

// Reads a 16-bit PCM mono RIFF/WAVE file; samples are scaled to [-1, 1).
// Stereo, other bit depths, and compressed formats are rejected.
Waveform read_wav(const std::filesystem::path& file);

// Writes 16-bit PCM mono. Samples are clipped to [-1, 1] and rounded.
void write_wav(const std::filesystem::path& file, const Waveform& wave);

}  // namespace hmic
