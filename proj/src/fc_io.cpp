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

#include "nerve/fc_io.hpp"

#include <bit>
#include <cctype>
#include <charconv>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "nerve/error.hpp"

namespace nerve::io {

static_assert(std::endian::native == std::endian::little, "binary formats assume little-endian hosts");

namespace fs = std::filesystem;

std::vector<std::string> split_fields(std::string_view line) {
  std::vector<std::string> out;
  const bool has_delim = line.find_first_of(",;\t") != std::string_view::npos;
  std::string cur;
  auto flush = [&] {
    const auto b = cur.find_first_not_of(" \t\r\n");
    const auto e = cur.find_last_not_of(" \t\r\n");
    out.push_back(b == std::string::npos ? std::string() : cur.substr(b, e - b + 1));
    cur.clear();
  };
  for (char c : line) {
    const bool sep = has_delim ? (c == ',' || c == ';' || c == '\t') : (c == ' ');
    if (sep) {
      if (has_delim || !cur.empty()) flush();
    } else {
      cur.push_back(c);
    }
  }
  if (has_delim || !cur.empty()) flush();
  return out;
}

double parse_double(const std::string& s, const std::string& what) {
  try {
    std::size_t used = 0;
    double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw DataError("cannot parse " + what + " from '" + s + "'");
  }
}

int parse_int(const std::string& s, const std::string& what) {
  int v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size())
    throw DataError("cannot parse " + what + " from '" + s + "'");
  return v;
}

namespace {

bool skip_line(const std::string& line) {
  const auto b = line.find_first_not_of(" \t\r");
  return b == std::string::npos || line[b] == '#';
}

std::ifstream open_in(const fs::path& path, std::ios::openmode mode = std::ios::in) {
  std::ifstream in(path, mode);
  if (!in) throw DataError("cannot open " + path.string());
  return in;
}

std::ofstream open_out(const fs::path& path, std::ios::openmode mode = std::ios::out) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, mode | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  return out;
}

FCMatrix read_fc_binary(std::ifstream& in, const fs::path& path) {
  std::uint32_t r = 0;
  if (!in.read(reinterpret_cast<char*>(&r), sizeof r) || r == 0)
    throw DataError("truncated FC header in " + path.string());
  Matrix m(r, r);
  const auto bytes = static_cast<std::streamsize>(sizeof(double)) * r * r;
  if (!in.read(reinterpret_cast<char*>(m.data()), bytes))
    throw DataError("truncated FC payload in " + path.string());
  return FCMatrix(std::move(m));
}

FCMatrix read_fc_csv(std::ifstream& in, const fs::path& path) {
  std::vector<std::vector<double>> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (skip_line(line)) continue;
    std::vector<double> row;
    for (const auto& f : split_fields(line)) row.push_back(parse_double(f, "FC entry"));
    rows.push_back(std::move(row));
  }
  const auto n = rows.size();
  if (n == 0) throw DataError("empty FC file " + path.string());
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    if (rows[i].size() != n) throw DataError("FC CSV " + path.string() + " is not square");
    for (std::size_t j = 0; j < n; ++j) m(i, j) = rows[i][j];
  }
  return FCMatrix(std::move(m));
}

}  // namespace

FCMatrix read_fc(const fs::path& path) {
  auto in = open_in(path, std::ios::binary);
  char magic[8] = {};
  in.read(magic, sizeof magic);
  if (in.gcount() == sizeof magic && std::memcmp(magic, kFcMagic, sizeof magic) == 0)
    return read_fc_binary(in, path);
  in.clear();
  in.seekg(0);
  return read_fc_csv(in, path);
}

void write_fc_binary(const fs::path& path, const FCMatrix& fc) {
  auto out = open_out(path, std::ios::binary);
  const auto r = static_cast<std::uint32_t>(fc.size());
  out.write(kFcMagic, sizeof kFcMagic);
  out.write(reinterpret_cast<const char*>(&r), sizeof r);
  out.write(reinterpret_cast<const char*>(fc.values().data()),
            static_cast<std::streamsize>(sizeof(double)) * r * r);
  if (!out) throw DataError("failed writing " + path.string());
}

void write_fc_csv(const fs::path& path, const FCMatrix& fc) {
  auto out = open_out(path);
  out << std::setprecision(17);
  for (int i = 0; i < fc.size(); ++i) {
    for (int j = 0; j < fc.size(); ++j) out << (j ? "," : "") << fc(i, j);
    out << '\n';
  }
}

Parcellation read_parcellation(const fs::path& path) {
  auto in = open_in(path);
  std::vector<int> assignment;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (skip_line(line)) continue;
    auto f = split_fields(line);
    if (f.size() != 2) throw DataError(path.string() + ":" + std::to_string(lineno) + ": expected region_index,network_id");
    // Tolerate a header line.
    if (assignment.empty() && !f[0].empty() && !std::isdigit(static_cast<unsigned char>(f[0][0]))) continue;
    const int region = parse_int(f[0], "region index");
    if (region != static_cast<int>(assignment.size()))
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": regions must be listed in matrix order");
    assignment.push_back(parse_int(f[1], "network id"));
  }
  return Parcellation(std::move(assignment));
}

void write_parcellation(const fs::path& path, const Parcellation& parc) {
  auto out = open_out(path);
  for (int r = 0; r < parc.region_count(); ++r) out << r << ',' << parc.network_of(r) << '\n';
}

Cohort read_cohort(const fs::path& manifest) {
  auto in = open_in(manifest);
  std::string line;
  std::vector<std::string> header;
  while (header.empty() && std::getline(in, line))
    if (!skip_line(line)) header = split_fields(line);
  if (header.size() < 4 || header[0] != "subject_id" || header[1] != "fc_path" ||
      header[2] != "age" || header[3] != "sex")
    throw DataError("cohort manifest " + manifest.string() +
                    " must start with subject_id,fc_path,age,sex");
  Cohort cohort;
  cohort.target_names.assign(header.begin() + 4, header.end());
  const fs::path base = manifest.parent_path();
  while (std::getline(in, line)) {
    if (skip_line(line)) continue;
    auto f = split_fields(line);
    if (f.size() != header.size())
      throw DataError("manifest row for '" + (f.empty() ? std::string() : f[0]) + "' has " +
                      std::to_string(f.size()) + " fields, expected " + std::to_string(header.size()));
    Subject s;
    s.id = f[0];
    fs::path fc_path = f[1];
    if (fc_path.is_relative()) fc_path = base / fc_path;
    s.fc = read_fc(fc_path);
    s.confounds.age = parse_double(f[2], "age");
    s.confounds.sex = parse_int(f[3], "sex");
    if (s.confounds.sex != 0 && s.confounds.sex != 1) throw DataError("sex must be encoded 0/1 for " + s.id);
    for (std::size_t t = 4; t < f.size(); ++t) s.targets.push_back(parse_double(f[t], header[t]));
    cohort.subjects.push_back(std::move(s));
  }
  cohort.validate();
  return cohort;
}

void write_cohort(const fs::path& dir, const Cohort& cohort) {
  fs::create_directories(dir / "fc");
  auto out = open_out(dir / "cohort.csv");
  out << "subject_id,fc_path,age,sex";
  for (const auto& t : cohort.target_names) out << ',' << t;
  out << '\n' << std::setprecision(17);
  for (const auto& s : cohort.subjects) {
    const fs::path rel = fs::path("fc") / (s.id + ".fcm");
    write_fc_binary(dir / rel, s.fc);
    out << s.id << ',' << rel.generic_string() << ',' << s.confounds.age << ',' << s.confounds.sex;
    for (double t : s.targets) out << ',' << t;
    out << '\n';
  }
}

}  // namespace nerve::io
