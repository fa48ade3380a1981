#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>

#include "cbamnet/trainer.hpp"

using namespace cbamnet;
namespace fs = std::filesystem;

namespace {

ModelSpec tiny_spec() {
  ModelSpec s;
  s.input_size = 16;
  s.blocks = {{8, 3}, {8, 3}, {8, 3}, {8, 3}};
  s.head = {16, 16};
  s.num_classes = 3;
  s.dropout_rate = 0.0f;  // keep tiny runs deterministic and easy
  return s;
}

std::vector<ParamEntry> scalar_param(float value) {
  return {{"p", Tensor::full({1, 1, 1, 1}, value, true), true}};
}

// Deterministic toy set: class = brightest channel.
void make_toy_data(int n, std::uint64_t seed, std::vector<Tensor>* xs,
                   std::vector<int>* ys) {
  std::mt19937_64 rng(seed);
  for (int i = 0; i < n; ++i) {
    const int cls = i % 3;
    auto x = Tensor::randn({1, 3, 16, 16}, rng, 0.3f);
    for (auto& v : x.values()) v = std::abs(v);
    for (int j = 0; j < 256; ++j) x.values()[cls * 256 + j] += 1.5f;
    xs->push_back(x);
    ys->push_back(cls);
  }
}

}  // namespace

TEST_CASE("adam_step: zero gradients are a bit-exact no-op") {
  auto params = scalar_param(0.75f);
  AdamState st;
  GradientMap grads{{"p", {0.0f}}};
  for (int i = 0; i < 3; ++i) adam_step(st, grads, params);
  CHECK(params[0].tensor.values()[0] == 0.75f);
}

TEST_CASE("adam_step: single-step oracle with canonical betas") {
  auto params = scalar_param(0.0f);
  AdamState st;  // lr 0.001, beta1 0.9, beta2 0.999, eps 1e-8
  adam_step(st, GradientMap{{"p", {1.0f}}}, params);
  // m-hat = v-hat = 1 after bias correction -> p = -lr/(1+eps)
  CHECK(params[0].tensor.values()[0] ==
        doctest::Approx(-0.000999999).epsilon(1e-6));
}

TEST_CASE("adam_step: drives f(p)=p^2 toward zero") {
  auto params = scalar_param(1.0f);
  AdamState st;
  st.lr = 0.01f;
  for (int i = 0; i < 500; ++i) {
    const float p = params[0].tensor.values()[0];
    adam_step(st, GradientMap{{"p", {2.0f * p}}}, params);
  }
  CHECK(std::abs(params[0].tensor.values()[0]) < 0.05f);
}

TEST_CASE("adam_step: missing gradient rejected naming the parameter") {
  auto params = scalar_param(0.0f);
  AdamState st;
  try {
    adam_step(st, GradientMap{}, params);
    FAIL("expected rejection");
  } catch (const ValueError& e) {
    CHECK(std::string(e.what()).find("p") != std::string::npos);
  }
}

TEST_CASE("make_batches: exact fit and trailing-singleton merge") {
  std::vector<std::int64_t> order(128);
  std::iota(order.begin(), order.end(), 0);
  auto exact = make_batches(order, 64);
  CHECK(exact.size() == 2);
  CHECK(exact[0].size() == 64);
  CHECK(exact[1].size() == 64);

  order.resize(65);
  auto merged = make_batches(order, 64);
  CHECK(merged.size() == 1);
  CHECK(merged[0].size() == 65);

  order.resize(5);
  auto small = make_batches(order, 2);
  CHECK(small.size() == 2);
  CHECK(small[0].size() == 2);
  CHECK(small[1].size() == 3);

  order.resize(1);
  auto single = make_batches(order, 4);
  CHECK(single.size() == 1);
  CHECK(single[0].size() == 1);
}

TEST_CASE("evaluate_split: zeroed final layer predicts class 0 everywhere") {
  Model m(tiny_spec(), 3);
  auto* w = m.find("head.fc3.weight");
  auto* b = m.find("head.fc3.bias");
  std::fill(w->values().begin(), w->values().end(), 0.0f);
  std::fill(b->values().begin(), b->values().end(), 0.0f);
  m.mark_stats_ready();
  m.set_mode(Mode::kInfer);

  std::vector<Tensor> xs;
  std::vector<int> ys;
  make_toy_data(10, 2, &xs, &ys);  // labels 0,1,2,0,1,2,0,1,2,0
  auto eval = evaluate_split(m, xs, ys);
  CHECK(eval.accuracy == doctest::Approx(0.4));  // class-0 frequency
  for (int p : eval.predictions) CHECK(p == 0);
  for (const auto& row : eval.probabilities) {
    double s = 0;
    for (float v : row) s += v;
    CHECK(s == doctest::Approx(1.0).epsilon(1e-6));
  }
  CHECK(eval.loss == doctest::Approx(std::log(3.0)).epsilon(1e-5));
}

TEST_CASE("evaluate_split: empty split and train-mode model rejected") {
  Model m(tiny_spec(), 3);
  std::vector<Tensor> xs;
  std::vector<int> ys;
  m.mark_stats_ready();
  m.set_mode(Mode::kInfer);
  CHECK_THROWS_AS(evaluate_split(m, xs, ys), ValueError);
  make_toy_data(2, 2, &xs, &ys);
  m.set_mode(Mode::kTrain);
  CHECK_THROWS_AS(evaluate_split(m, xs, ys), ValueError);
}

TEST_CASE("fit: deterministic history, checkpoints, and CSV emission") {
  std::vector<Tensor> train_x, val_x;
  std::vector<int> train_y, val_y;
  make_toy_data(12, 4, &train_x, &train_y);
  make_toy_data(6, 5, &val_x, &val_y);

  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.batch_size = 4;
  cfg.seed = 17;
  cfg.verbose = false;

  Model a(tiny_spec(), 17);
  auto ra = fit(a, train_x, train_y, val_x, val_y, cfg);
  Model b(tiny_spec(), 17);
  auto rb = fit(b, train_x, train_y, val_x, val_y, cfg);

  REQUIRE(ra.history.size() == 2);
  for (size_t i = 0; i < ra.history.size(); ++i) {
    CHECK(ra.history[i].train_loss == rb.history[i].train_loss);
    CHECK(ra.history[i].val_acc == rb.history[i].val_acc);
    CHECK(std::isfinite(ra.history[i].train_loss));
    CHECK(std::isfinite(ra.history[i].val_loss));
  }
  CHECK(ra.best_val_acc == rb.best_val_acc);

  const fs::path csv = fs::temp_directory_path() / "cbamnet_history.csv";
  write_history_csv(ra.history, csv);
  std::ifstream in(csv);
  std::string header;
  std::getline(in, header);
  CHECK(header == "epoch,train_loss,train_acc,val_loss,val_acc");
  int rows = 0;
  for (std::string line; std::getline(in, line);) rows += !line.empty();
  CHECK(rows == 2);
  fs::remove(csv);
}

TEST_CASE("fit: one batch when samples equal the batch size") {
  std::vector<Tensor> train_x, val_x;
  std::vector<int> train_y, val_y;
  make_toy_data(8, 6, &train_x, &train_y);
  make_toy_data(3, 7, &val_x, &val_y);
  TrainConfig cfg;
  cfg.epochs = 1;
  cfg.batch_size = 8;
  cfg.verbose = false;
  Model m(tiny_spec(), 1);
  auto r = fit(m, train_x, train_y, val_x, val_y, cfg);
  REQUIRE(r.history.size() == 1);  // exactly one optimization step recorded
}

TEST_CASE("fit: learns the brightest-channel toy problem") {
  std::vector<Tensor> train_x, val_x;
  std::vector<int> train_y, val_y;
  make_toy_data(24, 8, &train_x, &train_y);
  make_toy_data(9, 9, &val_x, &val_y);
  TrainConfig cfg;
  cfg.epochs = 20;
  cfg.batch_size = 8;
  cfg.seed = 3;
  cfg.verbose = false;
  Model m(tiny_spec(), 3);
  auto r = fit(m, train_x, train_y, val_x, val_y, cfg);
  CHECK(r.history.back().train_acc >= 0.95);

  // Early stop: rerunning with a threshold ends at the first epoch whose
  // train accuracy reaches it, reproducing that prefix of the history.
  double thresh = 0.95;
  size_t stop_epoch = 0;
  while (stop_epoch < r.history.size() &&
         r.history[stop_epoch].train_acc < thresh)
    ++stop_epoch;
  ++stop_epoch;  // 1-based epoch count
  cfg.stop_train_acc = thresh;
  Model m2(tiny_spec(), 3);
  auto r2 = fit(m2, train_x, train_y, val_x, val_y, cfg);
  REQUIRE(r2.history.size() == stop_epoch);
  for (size_t i = 0; i < r2.history.size(); ++i) {
    CHECK(r2.history[i].train_loss == r.history[i].train_loss);
    CHECK(r2.history[i].val_acc == r.history[i].val_acc);
  }
  CHECK(r2.history.back().train_acc >= thresh);
}
