// Copyright 2026 The qacpt Authors
// SPDX-License-Identifier: Apache-2.0

#include <filesystem>
#include <fstream>

#include <gtest/gtest.h>

#include "qac/error.hpp"
#include "qac/manifest.hpp"

namespace qac {
namespace {

namespace fs = std::filesystem;

TEST(Sha256, KnownVectors) {
  EXPECT_EQ(sha256_hex(""), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  EXPECT_EQ(sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  const auto path = fs::temp_directory_path() / "qac-manifest-abc.txt";
  std::ofstream(path, std::ios::binary) << "abc";
  EXPECT_EQ(sha256_file(path), sha256_hex("abc"));
  EXPECT_THROW(sha256_file(path.string() + ".missing"), IoError);
}

TEST(Manifest, JsonRoundTrip) {
  const auto dir = fs::temp_directory_path() / "qac-manifest-test";
  fs::create_directories(dir);
  std::ofstream(dir / "in.txt") << "input";
  std::ofstream(dir / "out.bin") << "output";
  Manifest m;
  m.stage = "prep";
  m.seed = 42;
  m.config_sha256 = sha256_hex("config");
  m.settings = {{"queries.count", "5"}};
  m.add_input(dir / "in.txt", "corpus/in.txt");
  m.add_output(dir / "out.bin");
  EXPECT_EQ(m.outputs[0].name, "out.bin");
  EXPECT_EQ(m.hash_of("corpus/in.txt"), sha256_hex("input"));
  EXPECT_THROW(m.hash_of("nothing"), DataError);
  m.write(dir / "manifest.json");
  EXPECT_EQ(Manifest::read(dir / "manifest.json"), m);
  EXPECT_EQ(Manifest::read(dir / "manifest.json").to_json(), m.to_json());
}

TEST(Manifest, MissingOrBrokenFiles) {
  const auto dir = fs::temp_directory_path() / "qac-manifest-test";
  fs::create_directories(dir);
  EXPECT_THROW(Manifest::read(dir / "absent.json"), DependencyError);
  std::ofstream(dir / "broken.json") << "{\"stage\": 3";
  EXPECT_THROW(Manifest::read(dir / "broken.json"), DataError);
}

}  // namespace
}  // namespace qac
