#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "cbamnet/gradcam.hpp"

using namespace cbamnet;

namespace {

ModelSpec tiny_spec() {
  ModelSpec s;
  s.input_size = 16;  // block4 map is 2x2x8
  s.blocks = {{8, 3}, {8, 3}, {8, 3}, {8, 3}};
  s.head = {16, 16};
  s.num_classes = 3;
  s.dropout_rate = 0.0f;
  return s;
}

// Rewires the head so logit 0 passes channel 0 of the pooled block-4 map
// straight through, and logits 1 and 2 are the constant zero.
Model passthrough_model(std::uint64_t seed) {
  Model m(tiny_spec(), seed);
  for (const char* name :
       {"head.fc1.weight", "head.fc2.weight", "head.fc3.weight",
        "head.fc1.bias", "head.fc2.bias", "head.fc3.bias"}) {
    auto* t = m.find(name);
    std::fill(t->values().begin(), t->values().end(), 0.0f);
  }
  m.find("head.fc1.weight")->values()[0] = 1.0f;  // row 0 <- input 0
  m.find("head.fc2.weight")->values()[0] = 1.0f;
  m.find("head.fc3.weight")->values()[0] = 1.0f;
  m.mark_stats_ready();
  m.set_mode(Mode::kInfer);
  return m;
}

Tensor random_input(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return Tensor::randn({1, 3, 16, 16}, rng);
}

// Channel-0 values of the captured block-4 map for the same input.
std::vector<float> block4_channel0(Model& m, const Tensor& x) {
  NoGradGuard ng;
  std::map<std::string, Tensor> cap;
  m.forward(x, &cap);
  const Tensor& a = cap.at("block4");
  return {a.values().begin(), a.values().begin() + a.shape().h * a.shape().w};
}

}  // namespace

TEST_CASE("gradcam: pass-through head yields a map proportional to ReLU(A_0)") {
  Model m = passthrough_model(4);
  Tensor x = random_input(5);
  Heatmap map = compute_gradcam(m, x, 0, "block4");
  CHECK_FALSE(map.all_zero);
  CHECK(map.height == 16);
  CHECK(map.width == 16);

  auto a0 = block4_channel0(m, x);  // 2x2, non-negative post-CBAM
  const float mx = *std::max_element(a0.begin(), a0.end());
  REQUIRE(mx > 0.0f);
  // align-corners upsampling pins the 2x2 source to the four map corners
  CHECK(map.at(0, 0) == doctest::Approx(a0[0] / mx).epsilon(1e-5));
  CHECK(map.at(0, 15) == doctest::Approx(a0[1] / mx).epsilon(1e-5));
  CHECK(map.at(15, 0) == doctest::Approx(a0[2] / mx).epsilon(1e-5));
  CHECK(map.at(15, 15) == doctest::Approx(a0[3] / mx).epsilon(1e-5));

  // full bilinear interior check against a hand interpolation
  for (int y = 0; y < 16; ++y)
    for (int x2 = 0; x2 < 16; ++x2) {
      const float fy = y / 15.0f, fx = x2 / 15.0f;
      const float top = a0[0] * (1 - fx) + a0[1] * fx;
      const float bot = a0[2] * (1 - fx) + a0[3] * fx;
      const float want = (top * (1 - fy) + bot * fy) / mx;
      CHECK(map.at(y, x2) == doctest::Approx(want).epsilon(1e-4));
    }
}

TEST_CASE("gradcam: constant logit produces the flagged all-zero map") {
  Model m = passthrough_model(4);
  Tensor x = random_input(6);
  Heatmap map = compute_gradcam(m, x, 1, "block4");  // logit 1 is constant 0
  CHECK(map.all_zero);
  for (float v : map.values) CHECK(v == 0.0f);
}

TEST_CASE("gradcam: invariant to positive rescaling of the target logit") {
  Model m = passthrough_model(7);
  Tensor x = random_input(8);
  Heatmap base = compute_gradcam(m, x, 0, "block4");
  m.find("head.fc3.weight")->values()[0] = 2.0f;  // double the target row
  Heatmap doubled = compute_gradcam(m, x, 0, "block4");
  REQUIRE(base.values.size() == doubled.values.size());
  for (size_t i = 0; i < base.values.size(); ++i)
    CHECK(std::abs(base.values[i] - doubled.values[i]) < 1e-5f);
}

TEST_CASE("gradcam: values normalized into [0,1] with max exactly 1") {
  Model m(tiny_spec(), 21);
  m.mark_stats_ready();
  m.set_mode(Mode::kInfer);
  Tensor x = random_input(22);
  Heatmap map = compute_gradcam(m, x, 2, "block2");
  if (!map.all_zero) {
    CHECK(*std::max_element(map.values.begin(), map.values.end()) == 1.0f);
    for (float v : map.values) {
      CHECK(v >= 0.0f);
      CHECK(v <= 1.0f);
    }
  }
}

TEST_CASE("gradcam: unknown layer rejected listing valid names") {
  Model m = passthrough_model(4);
  Tensor x = random_input(5);
  try {
    compute_gradcam(m, x, 0, "block9");
    FAIL("expected rejection");
  } catch (const ValueError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("block1") != std::string::npos);
    CHECK(msg.find("block4") != std::string::npos);
  }
  CHECK_THROWS_AS(compute_gradcam(m, x, 7, "block4"), ValueError);
}

TEST_CASE("heat_color: documented anchors") {
  CHECK(heat_color(0.0f) == std::array<float, 3>{0, 0, 1});
  CHECK(heat_color(1.0f / 3.0f) == std::array<float, 3>{0, 1, 0});
  CHECK(heat_color(2.0f / 3.0f) == std::array<float, 3>{1, 1, 0});
  CHECK(heat_color(1.0f) == std::array<float, 3>{1, 0, 0});
}

TEST_CASE("overlay: blend arithmetic at the endpoints and midpoint") {
  std::mt19937_64 rng(31);
  ImageF img = ImageF::make(4, 4);
  std::uniform_real_distribution<float> uni(0.0f, 1.0f);
  for (auto& v : img.data) v = uni(rng);

  Heatmap flat;
  flat.height = 4;
  flat.width = 4;
  flat.values.assign(16, 0.0f);

  // alpha 0 is the identity
  CHECK(overlay(flat, img, 0.0f).data == img.data);

  // alpha 1 with a constant-1 map is solid anchor red
  std::fill(flat.values.begin(), flat.values.end(), 1.0f);
  ImageF red = overlay(flat, img, 1.0f);
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 4; ++x) {
      CHECK(red.at(0, y, x) == 1.0f);
      CHECK(red.at(1, y, x) == 0.0f);
      CHECK(red.at(2, y, x) == 0.0f);
    }

  // alpha 0.5 with a zero map averages the image with anchor blue
  std::fill(flat.values.begin(), flat.values.end(), 0.0f);
  ImageF half = overlay(flat, img, 0.5f);
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 4; ++x) {
      CHECK(half.at(0, y, x) == doctest::Approx(0.5f * img.at(0, y, x)));
      CHECK(half.at(1, y, x) == doctest::Approx(0.5f * img.at(1, y, x)));
      CHECK(half.at(2, y, x) ==
            doctest::Approx(0.5f * img.at(2, y, x) + 0.5f));
    }

  // size mismatch and bad alpha rejected
  Heatmap wrong;
  wrong.height = 3;
  wrong.width = 4;
  wrong.values.assign(12, 0.0f);
  CHECK_THROWS_AS(overlay(wrong, img, 0.4f), ShapeError);
  CHECK_THROWS_AS(overlay(flat, img, 1.5f), ValueError);
}
