#include <doctest.h>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>

#include "cbamnet/checkpoint.hpp"
#include "cbamnet/model.hpp"

using namespace cbamnet;
namespace fs = std::filesystem;

namespace {

// Small architecture for fast end-to-end passes: 16x16 input, 8-filter blocks.
ModelSpec tiny_spec() {
  ModelSpec s;
  s.input_size = 16;
  s.blocks = {{8, 3}, {8, 3}, {8, 3}, {8, 3}};
  s.head = {16, 16};
  s.num_classes = 3;
  return s;
}

fs::path tmp_file(const char* name) {
  return fs::temp_directory_path() / name;
}

std::vector<char> read_all(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_all(const fs::path& p, const std::vector<char>& bytes) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace

TEST_CASE("model spec: malformed specs rejected") {
  ModelSpec s;
  s.blocks = {{32, 7}};
  CHECK_THROWS_AS(s.validate(), ValueError);
  s = ModelSpec{};
  s.blocks[0].kernel = 4;
  CHECK_THROWS_AS(s.validate(), ValueError);
  s = ModelSpec{};
  s.blocks[0].filters = 30;  // not divisible by r=8
  CHECK_THROWS_AS(s.validate(), ValueError);
  s = ModelSpec{};
  s.dropout_rate = 1.0f;
  CHECK_THROWS_AS(s.validate(), ValueError);
}

TEST_CASE("default model: per-group parameter counts") {
  Model m(ModelSpec{}, 1);
  // first conv: 32 filters of 3x7x7
  CHECK(m.find("block1.conv1.weight")->numel() == 4704);

  std::int64_t conv = 0, head = 0, cbam = 0, bn = 0;
  for (const auto& e : m.registry()) {
    const std::int64_t n = e.tensor.numel();
    if (e.name.find("conv") != std::string::npos)
      conv += n;
    else if (e.name.rfind("head.", 0) == 0)
      head += n;
    else if (e.name.find("cbam") != std::string::npos)
      cbam += n;
    else
      bn += n;
  }
  CHECK(conv == 1314400);
  CHECK(head == 789507);
  CHECK(cbam == 22696);
  CHECK(bn == 3840);
}

TEST_CASE("default model: total budget about 2.13M parameters / 8.13 MiB") {
  Model m(ModelSpec{}, 1);
  const ParamCounts c = m.count_parameters();
  CHECK(c.total() >= 2127000);
  CHECK(c.total() <= 2131000);
  const double mib = static_cast<double>(c.bytes()) / (1024.0 * 1024.0);
  CHECK(mib == doctest::Approx(8.13).epsilon(0.01));
}

TEST_CASE("default model: architecture audit matches the block diagram") {
  Model m(ModelSpec{}, 1);
  const auto arch = m.architecture();
  // 4 blocks x (2x[conv,bn,relu] + cbam + pool) + gap + 2x[dense,relu,drop] + dense
  CHECK(arch.size() == 4 * 8 + 1 + 2 * 3 + 1);
  CHECK(arch[0] == "Conv2d(3->32,k7,same)");
  CHECK(arch[1] == "BatchNorm2d(32)");
  CHECK(arch[6] == "CBAM(32,r=8)");
  CHECK(arch[7] == "MaxPool2x2");
  CHECK(arch[32] == "GlobalAvgPool");
  CHECK(arch.back() == "Dense(512->3)");
  CHECK(m.capture_names() ==
        std::vector<std::string>{"block1", "block2", "block3", "block4"});
}

TEST_CASE("tiny model: forward is deterministic for a fixed seed") {
  std::mt19937_64 rng(7);
  auto x = Tensor::randn({2, 3, 16, 16}, rng);
  Model a(tiny_spec(), 5), b(tiny_spec(), 5);
  a.set_mode(Mode::kTrain);
  b.set_mode(Mode::kTrain);
  NoGradGuard ng;
  auto ya = a.forward(x);
  auto yb = b.forward(x);
  CHECK(ya.values() == yb.values());
  CHECK(ya.shape() == Shape{2, 3, 1, 1});
}

TEST_CASE("tiny model: infer-mode logits are batch independent") {
  std::mt19937_64 rng(8);
  auto x = Tensor::randn({3, 3, 16, 16}, rng);
  Model m(tiny_spec(), 5);
  m.mark_stats_ready();
  m.set_mode(Mode::kInfer);
  NoGradGuard ng;
  auto batched = m.forward(x);
  for (int n = 0; n < 3; ++n) {
    auto one = Tensor::zeros({1, 3, 16, 16});
    std::copy_n(x.values().begin() + n * 3 * 256, 3 * 256,
                one.values().begin());
    auto y = m.forward(one);
    for (int k = 0; k < 3; ++k)
      CHECK(y.values()[k] ==
            doctest::Approx(batched.values()[n * 3 + k]).epsilon(1e-5));
  }
}

TEST_CASE("tiny model: wrong input shape rejected") {
  Model m(tiny_spec(), 5);
  CHECK_THROWS_AS(m.forward(Tensor::zeros({1, 3, 8, 8})), ShapeError);
  CHECK_THROWS_AS(m.forward(Tensor::zeros({1, 1, 16, 16})), ShapeError);
}

TEST_CASE("checkpoint: round trip is bit exact and preserves logits") {
  const fs::path path = tmp_file("cbamnet_roundtrip.ckpt");
  Model m(tiny_spec(), 11);
  std::mt19937_64 rng(9);
  auto x = Tensor::randn({2, 3, 16, 16}, rng);
  {
    // one train pass populates BatchNorm statistics
    NoGradGuard ng;
    m.forward(x);
  }
  m.set_mode(Mode::kInfer);
  NoGradGuard ng;
  auto before = m.forward(x);
  save_checkpoint(m, path);

  Model back = load_checkpoint(path);
  CHECK(back.mode() == Mode::kInfer);
  CHECK(back.stats_ready());
  REQUIRE(back.registry().size() == m.registry().size());
  for (size_t i = 0; i < m.registry().size(); ++i) {
    CHECK(back.registry()[i].name == m.registry()[i].name);
    CHECK(back.registry()[i].tensor.values() ==
          m.registry()[i].tensor.values());
  }
  auto after = back.forward(x);
  CHECK(after.values() == before.values());
  fs::remove(path);
}

TEST_CASE("checkpoint: corruption modes raise distinct errors") {
  const fs::path good = tmp_file("cbamnet_good.ckpt");
  Model m(tiny_spec(), 11);
  save_checkpoint(m, good);
  const auto bytes = read_all(good);

  const fs::path bad = tmp_file("cbamnet_bad.ckpt");
  SUBCASE("bad magic") {
    auto b = bytes;
    b[0] = 'X';
    write_all(bad, b);
    CHECK_THROWS_AS(load_checkpoint(bad), BadMagicError);
  }
  SUBCASE("version mismatch") {
    auto b = bytes;
    b[4] = 99;
    write_all(bad, b);
    CHECK_THROWS_AS(load_checkpoint(bad), VersionMismatchError);
  }
  SUBCASE("truncated payload") {
    auto b = bytes;
    b.resize(b.size() - 64);
    write_all(bad, b);
    CHECK_THROWS_AS(load_checkpoint(bad), TruncatedCheckpointError);
  }
  SUBCASE("shape disagreement") {
    auto b = bytes;
    // flip the first conv shape [8,3,3,3] -> [3,8,3,3] inside the header
    const std::string want = "\"shape\":[8,3,3,3]";
    const std::string repl = "\"shape\":[3,8,3,3]";
    auto it = std::search(b.begin(), b.end(), want.begin(), want.end());
    REQUIRE(it != b.end());
    std::copy(repl.begin(), repl.end(), it);
    write_all(bad, b);
    CHECK_THROWS_AS(load_checkpoint(bad), TensorMismatchError);
  }
  fs::remove(good);
  fs::remove(bad);
}

TEST_CASE("tiny model: infer-mode forward does not mutate any state") {
  Model m(tiny_spec(), 13);
  std::mt19937_64 rng(14);
  auto x = Tensor::randn({2, 3, 16, 16}, rng);
  m.mark_stats_ready();
  m.set_mode(Mode::kInfer);
  std::vector<std::vector<float>> snapshot;
  for (const auto& e : m.registry()) snapshot.push_back(e.tensor.values());
  NoGradGuard ng;
  m.forward(x);
  for (size_t i = 0; i < snapshot.size(); ++i)
    CHECK(m.registry()[i].tensor.values() == snapshot[i]);
}
