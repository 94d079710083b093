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

#include <gtest/gtest.h>
#include <sys/wait.h>

#include <array>
#include <cstdio>
#include <filesystem>
#include <string>

#include "dtrain/bench.hpp"
#include "json.hpp"

namespace {

namespace fs = std::filesystem;

struct Result {
  int code = -1;
  std::string out;
};

Result cli(const std::string& args) {
  const std::string cmd = std::string(DTRAIN_CLI) + " " + args + " 2>/dev/null";
  Result r;
  FILE* p = popen(cmd.c_str(), "r");
  if (!p) return r;
  std::array<char, 4096> buf{};
  std::size_t n = 0;
  while ((n = fread(buf.data(), 1, buf.size(), p)) > 0) r.out.append(buf.data(), n);
  const int status = pclose(p);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

TEST(Cli, HelpDocumentsThroughputConvention) {
  const auto r = cli("--help");
  EXPECT_EQ(r.code, 0);
  EXPECT_NE(r.out.find("2 * payload_bytes * (n_ranks - 1) / n_ranks"), std::string::npos) << r.out;
}

TEST(Cli, UsageErrorsExitTwo) {
  EXPECT_EQ(cli("").code, 2);
  EXPECT_EQ(cli("bench allreduce --no-such-flag").code, 2);
  EXPECT_EQ(cli("bench allreduce --reps 2").code, 2);
  EXPECT_EQ(cli("bench allreduce --algo tree").code, 2);
  EXPECT_EQ(cli("bench allreduce --payload 3X").code, 2);
}

TEST(Cli, BenchAllreduceWritesCsv) {
  const auto r = cli("bench allreduce --ranks 4 --payload 64K,1M --algo ring,multicolor --reps 3");
  EXPECT_EQ(r.code, 0);
  const auto rows = dtrain::parse_csv(r.out);
  ASSERT_EQ(rows.size(), 4u);
  EXPECT_EQ(rows[0].algorithm, "ring");
  EXPECT_EQ(rows[0].payload_bytes, 65536u);
  EXPECT_EQ(cli("bench allreduce --ranks 4 --payload 64K,1M --algo ring,multicolor --reps 3").out, r.out);
}

TEST(Cli, FailedConfigExitsOne) {
  // Multicolor with four binary trees on eight ranks cannot keep interiors
  // disjoint.
  const auto r = cli("bench allreduce --ranks 8 --colors 4 --arity 2 --algo multicolor --payload 4K");
  EXPECT_EQ(r.code, 1);
  EXPECT_EQ(cli("topo dump --ranks 8 --colors 4 --arity 2").code, 1);
}

TEST(Cli, TopoDump) {
  const auto r = cli("topo dump --ranks 8 --colors 4 --arity 4");
  ASSERT_EQ(r.code, 0);
  const auto ts = dtrain::tree_set_from_json(nlohmann::json::parse(r.out));
  EXPECT_EQ(ts.trees[0].interior, (std::vector<int>{0, 1}));
  EXPECT_TRUE(dtrain::validate_tree_set(ts).empty());
}

TEST(Cli, DimdBuildVerifyShuffle) {
  const auto dir = fs::temp_directory_path() / ("dtrain_cli_" + std::to_string(::getpid()));
  fs::create_directories(dir);
  const std::string files = "--blob " + (dir / "b").string() + " --index " + (dir / "i").string();
  EXPECT_EQ(cli("dimd build " + files + " --records 200 --seed 3").code, 0);
  const auto v = cli("dimd verify " + files);
  EXPECT_EQ(v.code, 0);
  EXPECT_NE(v.out.find("200 records"), std::string::npos);
  const auto s = cli("dimd shuffle " + files + " --ranks 4 --groups 2 --segments 2 --seed 9");
  EXPECT_EQ(s.code, 0);
  EXPECT_NE(s.out.find("rank 3 group 1"), std::string::npos);
  EXPECT_EQ(cli("dimd shuffle " + files + " --ranks 4 --groups 3").code, 1);
  fs::resize_file(dir / "i", fs::file_size(dir / "i") - 1);
  EXPECT_EQ(cli("dimd verify " + files).code, 1);
  fs::remove_all(dir);
}

}  // namespace
