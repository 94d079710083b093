// Copyright 2026 The dtrain Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <cctype>
#include <charconv>
#include <cstdio>
#include <fstream>

#include "dtrain/bench.hpp"
#include "dtrain/error.hpp"

namespace dtrain {

namespace {

std::vector<std::string_view> split(std::string_view line, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (;;) {
    const auto pos = line.find(sep, start);
    out.push_back(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) return out;
    start = pos + 1;
  }
}

template <typename T>
T parse_number(std::string_view s, const char* field) {
  T v{};
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) {
    fail(Errc::format_error, std::string("bad ") + field + " '" + std::string(s) + "'");
  }
  return v;
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) fail(Errc::io_error, "cannot open " + path + " for writing");
  f << text;
  if (!f) fail(Errc::io_error, "write to " + path + " failed");
}

}  // namespace

std::string to_csv(const std::vector<BenchRow>& rows) {
  std::string out(kCsvHeader);
  out += '\n';
  char buf[512];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%s,%s,%d,%llu,%.17g,%.17g,%s\n", r.scenario.c_str(), r.algorithm.c_str(), r.n_ranks,
                  static_cast<unsigned long long>(r.payload_bytes), r.median_time_s, r.throughput_GBps,
                  r.backend.c_str());
    out += buf;
  }
  return out;
}

std::vector<BenchRow> parse_csv(std::string_view text) {
  std::vector<BenchRow> rows;
  auto lines = split(text, '\n');
  if (!lines.empty() && lines.back().empty()) lines.pop_back();
  if (lines.empty() || lines.front() != kCsvHeader) fail(Errc::format_error, "missing or wrong CSV header");
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const auto f = split(lines[i], ',');
    if (f.size() != 7) fail(Errc::format_error, "line " + std::to_string(i + 1) + " has " + std::to_string(f.size()) + " fields");
    BenchRow r;
    r.scenario = std::string(f[0]);
    r.algorithm = std::string(f[1]);
    r.n_ranks = parse_number<int>(f[2], "n_ranks");
    r.payload_bytes = parse_number<std::uint64_t>(f[3], "payload_bytes");
    r.median_time_s = parse_number<double>(f[4], "median_time_s");
    r.throughput_GBps = parse_number<double>(f[5], "throughput_GBps");
    r.backend = std::string(f[6]);
    rows.push_back(std::move(r));
  }
  return rows;
}

void emit_csv(const std::vector<BenchRow>& rows, const std::string& path) { write_text(path, to_csv(rows)); }

void dump_topology(const ColorTreeSet& ts, const std::string& path) { write_text(path, to_json(ts).dump(2) + "\n"); }

std::uint64_t parse_size(std::string_view text) {
  std::size_t digits = 0;
  while (digits < text.size() && std::isdigit(static_cast<unsigned char>(text[digits]))) ++digits;
  if (digits == 0) fail(Errc::invalid_config, "bad size '" + std::string(text) + "'");
  std::uint64_t value = parse_number<std::uint64_t>(text.substr(0, digits), "size");
  std::string_view suffix = text.substr(digits);
  if (suffix.ends_with("iB")) suffix.remove_suffix(2);
  else if (suffix.ends_with("B") && suffix.size() == 2) suffix.remove_suffix(1);
  int shift = 0;
  if (suffix.empty()) shift = 0;
  else if (suffix == "K" || suffix == "k") shift = 10;
  else if (suffix == "M" || suffix == "m") shift = 20;
  else if (suffix == "G" || suffix == "g") shift = 30;
  else fail(Errc::invalid_config, "bad size suffix in '" + std::string(text) + "'");
  if (shift > 0 && value > (UINT64_MAX >> shift)) fail(Errc::invalid_config, "size out of range");
  return value << shift;
}

}  // namespace dtrain
