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

#include <filesystem>
#include <optional>

#include "nerve/mae.hpp"

namespace nerve {

inline constexpr char kCheckpointMagic[10] = {'N', 'E', 'R', 'V', 'E', 'C', 'K', 'P', 'T', '1'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct LoadedCheckpoint {
  MAEModel model;
  /// Present when the checkpoint was written with optimiser state.
  std::optional<TrainState> state;
};

/// Layout: magic, u32 version, u32 length + key/value config text (model config,
/// parcellation, training counters), u32 tensor count, then per tensor
/// (u32 name length, name, u32 rank, u32 dims..., f64 data), trailing CRC32 of
/// every preceding byte. All integers little-endian.
void save_checkpoint(const MAEModel& model, const std::filesystem::path& path,
                     const TrainState* state = nullptr);

/// Throws CorruptFileError on truncation or checksum failure and DataError on a
/// version mismatch.
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);
/// Additionally throws ConfigMismatchError when the stored architecture differs
/// from `expected`.
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path, const MAEConfig& expected);

}  // namespace nerve
