#include "cbamnet/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>

#include "cbamnet/checkpoint.hpp"

namespace cbamnet {

GradientMap collect_gradients(const Model& model) {
  GradientMap grads;
  for (const auto& e : model.registry()) {
    if (!e.trainable) continue;
    if (!e.tensor.grad().empty()) grads[e.name] = e.tensor.grad();
  }
  return grads;
}

void adam_step(AdamState& state, const GradientMap& grads,
               std::vector<ParamEntry>& params) {
  ++state.t;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.t));
  for (auto& e : params) {
    if (!e.trainable) continue;
    auto it = grads.find(e.name);
    if (it == grads.end())
      throw ValueError("adam_step: missing gradient for parameter " + e.name);
    const auto& g = it->second;
    if (g.size() != e.tensor.values().size())
      throw ShapeError("adam_step: gradient size mismatch for " + e.name);
    auto& [m, v] = state.moments[e.name];
    if (m.empty()) {
      m.assign(g.size(), 0.0f);
      v.assign(g.size(), 0.0f);
    }
    auto& p = e.tensor.values();
    for (size_t i = 0; i < g.size(); ++i) {
      m[i] = state.beta1 * m[i] + (1.0f - state.beta1) * g[i];
      v[i] = state.beta2 * v[i] + (1.0f - state.beta2) * g[i] * g[i];
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      p[i] -= static_cast<float>(state.lr * mhat /
                                 (std::sqrt(vhat) + state.eps));
    }
  }
}

std::vector<std::vector<std::int64_t>> make_batches(
    const std::vector<std::int64_t>& order, int batch_size) {
  if (batch_size < 1) throw ValueError("make_batches: batch size must be >= 1");
  std::vector<std::vector<std::int64_t>> batches;
  for (size_t i = 0; i < order.size(); i += batch_size) {
    const size_t end = std::min(order.size(), i + batch_size);
    batches.emplace_back(order.begin() + i, order.begin() + end);
  }
  // A trailing singleton starves BatchNorm of statistics; fold it back.
  if (batches.size() >= 2 && batches.back().size() == 1) {
    batches[batches.size() - 2].push_back(batches.back()[0]);
    batches.pop_back();
  }
  return batches;
}

Tensor stack_images(const std::vector<Tensor>& images,
                    const std::vector<std::int64_t>& ids) {
  if (ids.empty()) throw ValueError("stack_images: empty batch");
  const Shape first = images.at(ids[0]).shape();
  Tensor out = Tensor::zeros({static_cast<std::int64_t>(ids.size()), first.c,
                              first.h, first.w});
  const std::int64_t per = first.numel();
  for (size_t b = 0; b < ids.size(); ++b) {
    const Tensor& img = images.at(ids[b]);
    if (!(img.shape() == first))
      throw ShapeError("stack_images: mixed shapes " + first.str() + " vs " +
                       img.shape().str());
    std::copy_n(img.values().begin(), per, out.values().begin() + b * per);
  }
  return out;
}

Tensor one_hot(const std::vector<int>& labels,
               const std::vector<std::int64_t>& ids, int num_classes) {
  Tensor out = Tensor::zeros(
      {static_cast<std::int64_t>(ids.size()), num_classes, 1, 1});
  for (size_t b = 0; b < ids.size(); ++b) {
    const int y = labels.at(ids[b]);
    if (y < 0 || y >= num_classes)
      throw ValueError("one_hot: label " + std::to_string(y) +
                       " out of range for " + std::to_string(num_classes) +
                       " classes");
    out.values()[b * num_classes + y] = 1.0f;
  }
  return out;
}

namespace {

int argmax_row(const float* row, int k) {
  int best = 0;
  for (int j = 1; j < k; ++j)
    if (row[j] > row[best]) best = j;  // ties keep the lowest index
  return best;
}

void zero_all_grads(Model& model) {
  for (auto& e : model.registry()) e.tensor.zero_grad();
}

}  // namespace

FitResult fit(Model& model, const std::vector<Tensor>& train_x,
              const std::vector<int>& train_y, const std::vector<Tensor>& val_x,
              const std::vector<int>& val_y, const TrainConfig& cfg) {
  if (train_x.empty() || val_x.empty())
    throw ValueError("fit: train and val splits must be non-empty");
  if (cfg.epochs < 1) throw ValueError("fit: epochs must be >= 1");
  const int k = model.spec().num_classes;

  AdamState adam;
  adam.lr = cfg.lr;
  FitResult result;
  result.best_val_acc = -1.0;

  std::vector<std::int64_t> order(train_x.size());
  for (size_t i = 0; i < order.size(); ++i)
    order[i] = static_cast<std::int64_t>(i);

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::mt19937_64 rng(cfg.seed + static_cast<std::uint64_t>(epoch));
    std::shuffle(order.begin(), order.end(), rng);
    model.set_mode(Mode::kTrain);

    double loss_sum = 0;
    std::int64_t correct = 0, seen = 0;
    const auto batches = make_batches(order, cfg.batch_size);
    for (size_t bi = 0; bi < batches.size(); ++bi) {
      const auto& ids = batches[bi];
      Tensor x = stack_images(train_x, ids);
      Tensor y = one_hot(train_y, ids, k);
      Tensor probs = softmax(model.forward(x));
      Tensor loss = cross_entropy_loss(probs, y);
      const float lv = loss.values()[0];
      if (!std::isfinite(lv))
        throw Error("fit: non-finite loss at epoch " + std::to_string(epoch) +
                    ", batch " + std::to_string(bi + 1));
      backward(loss);
      adam_step(adam, collect_gradients(model), model.registry());
      zero_all_grads(model);

      loss_sum += static_cast<double>(lv) * static_cast<double>(ids.size());
      for (size_t b = 0; b < ids.size(); ++b)
        correct += argmax_row(probs.values().data() + b * k, k) ==
                   train_y.at(ids[b]);
      seen += static_cast<std::int64_t>(ids.size());
    }

    model.set_mode(Mode::kInfer);
    EvalResult val = evaluate_split(model, val_x, val_y, cfg.batch_size);

    EpochStats stats;
    stats.epoch = epoch;
    stats.train_loss = loss_sum / static_cast<double>(seen);
    stats.train_acc = static_cast<double>(correct) / static_cast<double>(seen);
    stats.val_loss = val.loss;
    stats.val_acc = val.accuracy;
    result.history.push_back(stats);
    if (cfg.verbose)
      std::printf(
          "epoch %d/%d  train_loss %.4f  train_acc %.4f  val_loss %.4f  "
          "val_acc %.4f\n",
          epoch, cfg.epochs, stats.train_loss, stats.train_acc, stats.val_loss,
          stats.val_acc);

    if (val.accuracy > result.best_val_acc) {
      result.best_val_acc = val.accuracy;
      result.best_epoch = epoch;
      if (cfg.policy == CheckpointPolicy::kBestValAcc &&
          !cfg.checkpoint_path.empty())
        save_checkpoint(model, cfg.checkpoint_path);
    }
    model.set_mode(Mode::kTrain);
    if (cfg.stop_train_acc >= 0.0 && stats.train_acc >= cfg.stop_train_acc)
      break;
  }
  if (cfg.policy == CheckpointPolicy::kLast && !cfg.checkpoint_path.empty()) {
    model.set_mode(Mode::kInfer);
    save_checkpoint(model, cfg.checkpoint_path);
  }
  model.set_mode(Mode::kInfer);
  return result;
}

EvalResult evaluate_split(Model& model, const std::vector<Tensor>& xs,
                          const std::vector<int>& ys, int batch_size) {
  if (xs.empty()) throw ValueError("evaluate_split: empty split");
  if (model.mode() != Mode::kInfer)
    throw ValueError("evaluate_split: model must be in infer mode");
  NoGradGuard ng;
  const int k = model.spec().num_classes;
  EvalResult result;
  std::vector<std::int64_t> order(xs.size());
  for (size_t i = 0; i < order.size(); ++i)
    order[i] = static_cast<std::int64_t>(i);
  double loss_sum = 0;
  std::int64_t correct = 0;
  for (const auto& ids : make_batches(order, batch_size)) {
    Tensor x = stack_images(xs, ids);
    Tensor probs = softmax(model.forward(x));
    for (size_t b = 0; b < ids.size(); ++b) {
      const float* row = probs.values().data() + b * k;
      result.probabilities.emplace_back(row, row + k);
      const int pred = argmax_row(row, k);
      result.predictions.push_back(pred);
      const int y = ys.at(ids[b]);
      correct += pred == y;
      loss_sum -= std::log(std::max(static_cast<double>(row[y]), 1e-12));
    }
  }
  result.loss = loss_sum / static_cast<double>(xs.size());
  result.accuracy =
      static_cast<double>(correct) / static_cast<double>(xs.size());
  return result;
}

void write_history_csv(const std::vector<EpochStats>& history,
                       const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw ValueError("cannot write history " + path.string());
  out << "epoch,train_loss,train_acc,val_loss,val_acc\n";
  char line[160];
  for (const auto& h : history) {
    std::snprintf(line, sizeof(line), "%d,%.6f,%.6f,%.6f,%.6f\n", h.epoch,
                  h.train_loss, h.train_acc, h.val_loss, h.val_acc);
    out << line;
  }
}

std::vector<Tensor> load_images(const DatasetIndex& index,
                                const std::vector<std::int64_t>& ids,
                                int size) {
  std::vector<Tensor> out;
  out.reserve(ids.size());
  for (std::int64_t i : ids) out.push_back(load_image(index.samples.at(i), size));
  return out;
}

}  // namespace cbamnet
