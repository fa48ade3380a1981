#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "cbamnet/cbam.hpp"
#include "cbamnet/layers.hpp"
#include "cbamnet/tensor.hpp"

namespace cbamnet {

struct BlockSpec {
  int filters = 0;
  int kernel = 0;
};

/// Architecture description: four conv blocks with attention, then a dense
/// head. Defaults give the 2.13M-parameter network.
struct ModelSpec {
  int input_channels = 3;
  int input_size = 224;
  std::vector<BlockSpec> blocks{{32, 7}, {64, 5}, {128, 3}, {256, 3}};
  std::vector<int> head{1024, 512};
  int num_classes = 3;
  int reduction_ratio = 8;
  float dropout_rate = 0.5f;
  bool mlp_bias = true;

  void validate() const;
};

/// Named tensor in the model registry.
struct ParamEntry {
  std::string name;
  Tensor tensor;
  bool trainable = false;
};

struct ParamCounts {
  std::int64_t trainable = 0;
  std::int64_t buffers = 0;
  std::int64_t total() const { return trainable + buffers; }
  std::int64_t bytes() const { return 4 * total(); }
};

class Model {
 public:
  Model(ModelSpec spec, std::uint64_t seed);

  /// Forward to logits (N, K, 1, 1). When `capture` is non-null, the
  /// post-attention feature map of each block is stored under
  /// "block1".."block4".
  Tensor forward(const Tensor& x, std::map<std::string, Tensor>* capture = nullptr);

  void set_mode(Mode mode);
  Mode mode() const { return mode_; }

  const ModelSpec& spec() const { return spec_; }
  std::vector<ParamEntry>& registry() { return registry_; }
  const std::vector<ParamEntry>& registry() const { return registry_; }
  Tensor* find(const std::string& name);

  ParamCounts count_parameters() const;
  /// Rows of {name, shape, count, trainable} plus totals, printable.
  std::string parameter_table() const;

  /// Ordered human-readable layer sequence, for structural audits.
  std::vector<std::string> architecture() const;

  /// Valid --layer names for explanation targets.
  std::vector<std::string> capture_names() const;

  bool stats_ready() const;
  void mark_stats_ready();

 private:
  struct Block {
    Conv2D conv1, conv2;
    BatchNorm2D bn1, bn2;
    CBAMBlock cbam;
  };

  void register_tensor(const std::string& name, Tensor t, bool trainable);

  ModelSpec spec_;
  Mode mode_ = Mode::kTrain;
  std::vector<Block> blocks_;
  std::vector<Dense> head_;
  std::vector<Dropout> dropouts_;
  std::vector<ParamEntry> registry_;
};

}  // namespace cbamnet
