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

#include <gtest/gtest.h>

#include <sstream>

#include "hmic/error.hpp"
#include "hmic/manifest.hpp"
#include "test_support.hpp"

namespace hmic {
namespace {

ManifestEntry entry(const std::string& id, Split split, Condition cond, AttributeMap attrs) {
  ManifestEntry e;
  e.meta.clip_id = id;
  e.meta.machine_type = "fan";
  e.meta.section_id = 2;
  e.meta.domain = Domain::kTarget;
  e.meta.split = split;
  e.meta.condition = cond;
  e.meta.attributes = std::move(attrs);
  e.path = "fan/" + id + ".wav";
  return e;
}

TEST(Manifest, AttributesFormatSortedAndParseBack) {
  const AttributeMap a{{"spd", "28V"}, {"car", "A1"}};
  EXPECT_EQ(format_attributes(a), "car=A1;spd=28V");
  EXPECT_EQ(parse_attributes("car=A1;spd=28V"), a);
  EXPECT_TRUE(parse_attributes("").empty());
  EXPECT_THROW(parse_attributes("car"), ParseError);
  EXPECT_THROW(format_attributes({{"a;b", "1"}}), Error);
}

TEST(Manifest, StreamRoundTrip) {
  const std::vector<ManifestEntry> in{
      entry("a", Split::kTrain, Condition::kNormal, {{"x", "1"}}),
      entry("b", Split::kTest, Condition::kAnomalous, {{"x", "2"}, {"y", "z"}}),
      entry("c", Split::kTest, Condition::kUnknown, {}),
  };
  std::stringstream ss;
  write_manifest(ss, in);
  EXPECT_EQ(ss.str().substr(0, kManifestHeader.size()), kManifestHeader);
  EXPECT_EQ(read_manifest(ss), in);
}

TEST(Manifest, RejectsMalformedRows) {
  std::stringstream bad_header("clip,path\n");
  EXPECT_THROW(read_manifest(bad_header), ParseError);
  std::stringstream short_row(std::string(kManifestHeader) + "\na,b,c\n");
  EXPECT_THROW(read_manifest(short_row), ParseError);
  std::stringstream anomalous_train(std::string(kManifestHeader) +
                                    "\nid,p.wav,fan,0,source,train,anomaly,x=1\n");
  EXPECT_THROW(read_manifest(anomalous_train), ParseError);
}

TEST(Manifest, ToleratesBomAndCrlf) {
  std::stringstream ss("\xEF\xBB\xBF" + std::string(kManifestHeader) +
                       "\r\nid,p.wav,fan,1,source,test,normal,x=1\r\n");
  const auto rows = read_manifest(ss);
  ASSERT_EQ(rows.size(), 1u);
  EXPECT_EQ(rows[0].meta.section_id, 1);
  EXPECT_EQ(rows[0].meta.attributes, (AttributeMap{{"x", "1"}}));
}

TEST(Manifest, RelativePathsResolveAgainstManifestDirectory) {
  const auto e = entry("a", Split::kTrain, Condition::kNormal, {});
  EXPECT_EQ(resolve_clip_path("/data/corpus/manifest.csv", e), std::filesystem::path("/data/corpus/fan/a.wav"));
  auto abs = e;
  abs.path = "/elsewhere/a.wav";
  EXPECT_EQ(resolve_clip_path("/data/corpus/manifest.csv", abs), std::filesystem::path("/elsewhere/a.wav"));
}

TEST(Manifest, FileRoundTrip) {
  testing::TempDir dir;
  const std::vector<ManifestEntry> in{entry("a", Split::kTrain, Condition::kNormal, {{"x", "1"}})};
  write_manifest(dir / "m.csv", in);
  EXPECT_EQ(read_manifest(dir / "m.csv"), in);
  EXPECT_THROW(read_manifest(dir / "missing.csv"), IoError);
}

}  // namespace
}  // namespace hmic
