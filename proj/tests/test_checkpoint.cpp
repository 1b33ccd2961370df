#include <cstring>
#include <fstream>
#include <iterator>

#include <gtest/gtest.h>

#include "apdraw/checkpoint.hpp"
#include "apdraw/networks.hpp"
#include "test_util.hpp"

using namespace apdraw;
using apdraw::testing::TempDir;

namespace {

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

void dump(const std::filesystem::path& p, const std::string& bytes) {
  std::ofstream(p, std::ios::binary) << bytes;
}

// Re-seals an edited archive: 64-bit FNV-1a over everything but the trailing checksum.
void reseal(std::string& bytes) {
  uint64_t h = 14695981039346656037ull;
  for (size_t i = 0; i + 8 < bytes.size(); ++i) {
    h ^= static_cast<unsigned char>(bytes[i]);
    h *= 1099511628211ull;
  }
  std::memcpy(bytes.data() + bytes.size() - 8, &h, 8);
}

nlohmann::json toy_config() { return GeneratorConfig::toy(32).to_json(); }

ResnetGenerator toy(uint64_t seed) {
  auto G = make_drawing_generator(GeneratorConfig::toy(32));
  init_weights(*G, seed);
  return G;
}

}  // namespace

TEST(Checkpoint, RoundTripRestoresWeights) {
  TempDir dir;
  auto G = toy(1);
  save_checkpoint(dir / "G.ckpt", *G, "G", toy_config());
  auto H = toy(2);
  auto header = load_checkpoint(dir / "G.ckpt", *H, "G", toy_config());
  EXPECT_EQ(header.kind, "G");
  EXPECT_EQ(header.schema_version, kCheckpointSchema);
  EXPECT_EQ(header.config, toy_config());
  EXPECT_EQ(header.config_hash, config_hash(toy_config()));
  auto a = G->named_parameters(), b = H->named_parameters();
  for (const auto& p : a) EXPECT_TRUE(torch::equal(p.value(), b[p.key()])) << p.key();
}

TEST(Checkpoint, ConfigHashIsStable) {
  EXPECT_EQ(config_hash(toy_config()), config_hash(toy_config()));
  EXPECT_NE(config_hash(toy_config()), config_hash(GeneratorConfig::toy(64).to_json()));
  EXPECT_EQ(config_hash(nlohmann::json{{"a", 1}, {"b", 2}}), config_hash(nlohmann::json{{"b", 2}, {"a", 1}}));
}

TEST(Checkpoint, HeaderReadsWithoutWeights) {
  TempDir dir;
  auto G = toy(3);
  save_checkpoint(dir / "G.ckpt", *G, "G", toy_config());
  auto h = read_checkpoint_header(dir / "G.ckpt");
  EXPECT_EQ(h.kind, "G");
  EXPECT_EQ(h.config["image_size"], 32);
}

TEST(Checkpoint, RejectsMismatches) {
  TempDir dir;
  auto G = toy(4);
  save_checkpoint(dir / "G.ckpt", *G, "G", toy_config());
  auto H = toy(5);
  EXPECT_THROW(load_checkpoint(dir / "G.ckpt", *H, "F"), CheckpointError);
  EXPECT_THROW(load_checkpoint(dir / "G.ckpt", *H, "G", GeneratorConfig::toy(64).to_json()), CheckpointError);
  auto F = make_photo_generator(GeneratorConfig::toy(32));
  EXPECT_THROW(load_checkpoint(dir / "G.ckpt", *F, "G"), CheckpointError);
  EXPECT_THROW(load_checkpoint(dir / "missing.ckpt", *H, "G"), CheckpointError);
}

TEST(Checkpoint, DetectsCorruption) {
  TempDir dir;
  auto G = toy(6);
  save_checkpoint(dir / "G.ckpt", *G, "G", toy_config());
  const auto good = slurp(dir / "G.ckpt");
  auto H = toy(7);

  auto flipped = good;
  flipped[flipped.size() / 2] ^= 0x01;
  dump(dir / "flip.ckpt", flipped);
  EXPECT_THROW(load_checkpoint(dir / "flip.ckpt", *H, "G"), CheckpointError);

  dump(dir / "short.ckpt", good.substr(0, good.size() / 3));
  EXPECT_THROW(load_checkpoint(dir / "short.ckpt", *H, "G"), CheckpointError);

  auto magic = good;
  magic[0] = 'X';
  reseal(magic);
  dump(dir / "magic.ckpt", magic);
  EXPECT_THROW(read_checkpoint_header(dir / "magic.ckpt"), CheckpointError);

  // A failed load leaves the module untouched.
  auto before = H->parameters().front().clone();
  EXPECT_THROW(load_checkpoint(dir / "flip.ckpt", *H, "G"), CheckpointError);
  EXPECT_TRUE(torch::equal(before, H->parameters().front()));
}

TEST(Checkpoint, RejectsOtherSchemaVersion) {
  TempDir dir;
  auto G = toy(8);
  save_checkpoint(dir / "G.ckpt", *G, "G", toy_config());
  auto bytes = slurp(dir / "G.ckpt");
  const std::string key = "\"schema_version\":1";
  const auto at = bytes.find(key);
  ASSERT_NE(at, std::string::npos);
  bytes[at + key.size() - 1] = '2';
  reseal(bytes);
  dump(dir / "v2.ckpt", bytes);
  try {
    read_checkpoint_header(dir / "v2.ckpt");
    FAIL() << "expected CheckpointError";
  } catch (const CheckpointError& e) {
    EXPECT_NE(std::string(e.what()).find("schema version 2"), std::string::npos) << e.what();
  }
}
