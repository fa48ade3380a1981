#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "cbamnet/data.hpp"
#include "cbamnet/model.hpp"

namespace cbamnet {

/// Parameter name -> gradient values, one entry per trainable parameter.
using GradientMap = std::map<std::string, std::vector<float>>;

/// Gradients of every trainable registry entry after a backward pass.
GradientMap collect_gradients(const Model& model);

struct AdamState {
  float lr = 0.001f;
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float eps = 1e-8f;
  std::int64_t t = 0;
  // Per-parameter first/second moments, keyed by registry name.
  std::map<std::string, std::pair<std::vector<float>, std::vector<float>>>
      moments;
};

/// One Adam update over the trainable entries of `params`.
/// Throws ValueError naming the parameter if its gradient is missing.
void adam_step(AdamState& state, const GradientMap& grads,
               std::vector<ParamEntry>& params);

enum class CheckpointPolicy { kBestValAcc, kLast };

struct TrainConfig {
  int epochs = 300;
  int batch_size = 64;
  float lr = 0.001f;
  std::uint64_t seed = 42;
  CheckpointPolicy policy = CheckpointPolicy::kBestValAcc;
  std::filesystem::path checkpoint_path;  // no checkpointing when empty
  bool verbose = true;
  // Early stop: end training after the first epoch whose training accuracy
  // reaches this threshold. Disabled when negative.
  double stop_train_acc = -1.0;
};

struct EpochStats {
  int epoch = 0;
  double train_loss = 0, train_acc = 0;
  double val_loss = 0, val_acc = 0;
};

struct FitResult {
  std::vector<EpochStats> history;
  double best_val_acc = 0;
  int best_epoch = 0;
};

/// Seeded index order chopped into batches; a trailing batch of exactly one
/// sample is merged into the previous batch.
std::vector<std::vector<std::int64_t>> make_batches(
    const std::vector<std::int64_t>& order, int batch_size);

/// Stacks per-sample (1,C,H,W) tensors selected by `ids` into (B,C,H,W).
Tensor stack_images(const std::vector<Tensor>& images,
                    const std::vector<std::int64_t>& ids);

/// One-hot rows (B,K,1,1) for the selected labels.
Tensor one_hot(const std::vector<int>& labels,
               const std::vector<std::int64_t>& ids, int num_classes);

/// Adam training loop: per epoch, seeded shuffle, batched forward/backward,
/// then a validation pass in infer mode. Aborts with epoch/batch coordinates
/// on a non-finite loss.
FitResult fit(Model& model, const std::vector<Tensor>& train_x,
              const std::vector<int>& train_y, const std::vector<Tensor>& val_x,
              const std::vector<int>& val_y, const TrainConfig& cfg);

struct EvalResult {
  double loss = 0;
  double accuracy = 0;
  std::vector<std::vector<float>> probabilities;  // one row per sample
  std::vector<int> predictions;                   // lowest-index argmax
};

/// Infer-mode pass over a split. Rejects an empty split.
EvalResult evaluate_split(Model& model, const std::vector<Tensor>& xs,
                          const std::vector<int>& ys, int batch_size = 16);

/// CSV rows `epoch,train_loss,train_acc,val_loss,val_acc`, values to 6 d.p.
void write_history_csv(const std::vector<EpochStats>& history,
                       const std::filesystem::path& path);

/// Decoded, resized tensors for the samples selected by `ids`.
std::vector<Tensor> load_images(const DatasetIndex& index,
                                const std::vector<std::int64_t>& ids,
                                int size = 224);

}  // namespace cbamnet
