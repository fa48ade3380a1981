#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "cbamnet/image.hpp"
#include "cbamnet/tensor.hpp"

namespace cbamnet {

struct LabeledSample {
  std::filesystem::path path;
  int class_index = 0;
  std::string class_name;
};

struct DatasetIndex {
  std::vector<LabeledSample> samples;
  std::vector<std::string> class_names;
  std::vector<std::int64_t> counts;  // per class

  int num_classes() const { return static_cast<int>(class_names.size()); }
};

struct SplitFractions {
  double train = 0.8, val = 0.1, test = 0.1;
};

struct SplitAssignment {
  std::vector<std::int64_t> train, val, test;  // indices into samples
  std::uint64_t seed = 0;
  SplitFractions fractions;
};

/// Scans root/<class_name>/*.{jpg,jpeg,png}; class indices follow the
/// lexicographic order of directory names.
DatasetIndex scan_dataset(const std::filesystem::path& root);

/// Decode + bilinear resize to (1,3,224,224), values scaled to [0,1].
Tensor load_image(const LabeledSample& sample, int size = 224);

/// Per class: seeded shuffle, floor(test_frac*n) to test, floor(val_frac*n)
/// to val, remainder to train.
SplitAssignment stratified_split(const DatasetIndex& index, std::uint64_t seed,
                                 SplitFractions fractions = {});

void save_split_audit(const DatasetIndex& index, const SplitAssignment& split,
                      const std::filesystem::path& path);

/// Reads a `path<TAB>split` audit file back into index positions.
SplitAssignment load_split_audit(const DatasetIndex& index,
                                 const std::filesystem::path& path);

/// One output per augmentation kind: flip, brightness, contrast, rotation.
std::vector<ImageF> augment_image(const ImageF& img, std::uint64_t seed);

/// Quadrant (0=TL, 1=TR, 2=BL, 3=BR) holding class c's planted blob.
int synth_quadrant(int class_index);

/// Writes a deterministic synthetic dataset: per class, 224x224 PNGs with a
/// class-colored blob planted in a class-specific quadrant over a black,
/// lightly noisy background. Returns the scanned index of the written tree.
DatasetIndex synth_dataset(const std::filesystem::path& out_dir, int classes,
                           int per_class, std::uint64_t seed,
                           float noise_sigma = 0.02f);

}  // namespace cbamnet
