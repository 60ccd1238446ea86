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
#include <string>
#include <string_view>
#include <vector>

#include "nerve/fc.hpp"

namespace nerve::io {

inline constexpr char kFcMagic[8] = {'F', 'C', 'M', 'A', 'T', '0', '0', '1'};

/// Reads either the binary FCMAT001 format or plain CSV; the format is sniffed from
/// the first eight bytes.
FCMatrix read_fc(const std::filesystem::path& path);
void write_fc_binary(const std::filesystem::path& path, const FCMatrix& fc);
void write_fc_csv(const std::filesystem::path& path, const FCMatrix& fc);

/// `region_index,network_id` per line, regions in matrix order. Blank lines and
/// lines starting with '#' are skipped.
Parcellation read_parcellation(const std::filesystem::path& path);
void write_parcellation(const std::filesystem::path& path, const Parcellation& parc);

/// Manifest header: subject_id,fc_path,age,sex,<targets...>. Relative fc paths are
/// resolved against the manifest's directory.
Cohort read_cohort(const std::filesystem::path& manifest);
/// Writes `dir/cohort.csv` and one binary FC file per subject under `dir/fc/`.
void write_cohort(const std::filesystem::path& dir, const Cohort& cohort);

/// Splits on ',', ';', tab or runs of spaces; trims surrounding whitespace.
std::vector<std::string> split_fields(std::string_view line);
double parse_double(const std::string& s, const std::string& what);
int parse_int(const std::string& s, const std::string& what);

}  // namespace nerve::io
