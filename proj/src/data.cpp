#include "cbamnet/data.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <random>

namespace cbamnet {

namespace fs = std::filesystem;

namespace {

bool has_image_extension(const fs::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(),
                 [](unsigned char c) { return std::tolower(c); });
  return ext == ".jpg" || ext == ".jpeg" || ext == ".png";
}

}  // namespace

DatasetIndex scan_dataset(const fs::path& root) {
  std::error_code ec;
  if (!fs::is_directory(root, ec))
    throw ValueError("dataset root is not a readable directory: " +
                     root.string());
  std::vector<std::string> class_dirs;
  for (const auto& entry : fs::directory_iterator(root))
    if (entry.is_directory()) class_dirs.push_back(entry.path().filename().string());
  std::sort(class_dirs.begin(), class_dirs.end());
  if (class_dirs.size() < 2)
    throw ValueError("dataset needs at least 2 class directories, found " +
                     std::to_string(class_dirs.size()));

  DatasetIndex index;
  index.class_names = class_dirs;
  for (int ci = 0; ci < static_cast<int>(class_dirs.size()); ++ci) {
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(root / class_dirs[ci]))
      if (entry.is_regular_file() && has_image_extension(entry.path()))
        files.push_back(entry.path());
    std::sort(files.begin(), files.end());
    if (files.empty())
      throw ValueError("class directory has no images: " +
                       (root / class_dirs[ci]).string());
    for (auto& f : files)
      index.samples.push_back({std::move(f), ci, class_dirs[ci]});
    index.counts.push_back(
        static_cast<std::int64_t>(index.samples.size()) -
        (index.counts.empty() ? 0 : std::accumulate(index.counts.begin(),
                                                    index.counts.end(),
                                                    std::int64_t{0})));
  }
  return index;
}

Tensor load_image(const LabeledSample& sample, int size) {
  ImageF img;
  try {
    img = decode_image(sample.path);
  } catch (const Error& e) {
    throw ValueError(std::string("load_image: ") + e.what());
  }
  return image_to_tensor(resize_bilinear(img, size, size));
}

SplitAssignment stratified_split(const DatasetIndex& index, std::uint64_t seed,
                                 SplitFractions fractions) {
  if (fractions.train < 0 || fractions.val < 0 || fractions.test < 0 ||
      fractions.train + fractions.val + fractions.test > 1.0 + 1e-9)
    throw ValueError("split fractions must be non-negative and sum to at most 1");
  SplitAssignment out;
  out.seed = seed;
  out.fractions = fractions;
  std::mt19937_64 rng(seed);
  for (int ci = 0; ci < index.num_classes(); ++ci) {
    std::vector<std::int64_t> members;
    for (std::int64_t i = 0; i < static_cast<std::int64_t>(index.samples.size()); ++i)
      if (index.samples[i].class_index == ci) members.push_back(i);
    if (members.size() < 3)
      throw ValueError("class " + index.class_names[ci] +
                       " has fewer than 3 samples; cannot split");
    std::shuffle(members.begin(), members.end(), rng);
    const auto n = static_cast<std::int64_t>(members.size());
    const auto n_test = static_cast<std::int64_t>(
        std::floor(fractions.test * static_cast<double>(n)));
    const auto n_val = static_cast<std::int64_t>(
        std::floor(fractions.val * static_cast<double>(n)));
    for (std::int64_t i = 0; i < n; ++i) {
      if (i < n_test)
        out.test.push_back(members[i]);
      else if (i < n_test + n_val)
        out.val.push_back(members[i]);
      else
        out.train.push_back(members[i]);
    }
  }
  return out;
}

void save_split_audit(const DatasetIndex& index, const SplitAssignment& split,
                      const fs::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw ValueError("cannot write split audit " + path.string());
  auto emit = [&](const std::vector<std::int64_t>& ids, const char* name) {
    for (std::int64_t i : ids)
      out << index.samples[i].path.string() << "\t" << name << "\n";
  };
  emit(split.train, "train");
  emit(split.val, "val");
  emit(split.test, "test");
}

SplitAssignment load_split_audit(const DatasetIndex& index,
                                 const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ValueError("cannot read split audit " + path.string());
  std::map<std::string, std::int64_t> by_path;
  for (std::int64_t i = 0; i < static_cast<std::int64_t>(index.samples.size()); ++i)
    by_path[index.samples[i].path.string()] = i;
  SplitAssignment out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos)
      throw ValueError("malformed split audit line: " + line);
    const std::string p = line.substr(0, tab);
    const std::string which = line.substr(tab + 1);
    auto it = by_path.find(p);
    if (it == by_path.end())
      throw ValueError("split audit names a sample missing from the dataset: " + p);
    if (which == "train")
      out.train.push_back(it->second);
    else if (which == "val")
      out.val.push_back(it->second);
    else if (which == "test")
      out.test.push_back(it->second);
    else
      throw ValueError("unknown split label: " + which);
  }
  return out;
}

std::vector<ImageF> augment_image(const ImageF& img, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> factor(0.7f, 1.3f);
  std::uniform_real_distribution<float> angle(-25.0f, 25.0f);
  std::vector<ImageF> out;
  out.push_back(flip_horizontal(img));
  out.push_back(adjust_brightness(img, factor(rng)));
  out.push_back(adjust_contrast(img, factor(rng)));
  out.push_back(rotate_bilinear(img, angle(rng)));
  return out;
}

int synth_quadrant(int class_index) { return class_index % 4; }

DatasetIndex synth_dataset(const fs::path& out_dir, int classes, int per_class,
                           std::uint64_t seed, float noise_sigma) {
  if (classes < 2 || classes > 4)
    throw ValueError("synthetic dataset supports 2..4 classes");
  if (per_class < 3)
    throw ValueError("synthetic dataset needs at least 3 images per class");
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (!fs::is_directory(out_dir))
    throw ValueError("cannot create output directory " + out_dir.string());

  constexpr int kSize = 224;
  // distinctive blob colors per class
  const float colors[4][3] = {{0.85f, 0.15f, 0.15f},
                              {0.85f, 0.85f, 0.10f},
                              {0.15f, 0.25f, 0.85f},
                              {0.10f, 0.80f, 0.70f}};
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> noise(0.0f, noise_sigma);
  std::uniform_real_distribution<float> jitter(-8.0f, 8.0f);
  std::uniform_real_distribution<float> radius_jitter(-4.0f, 4.0f);

  for (int c = 0; c < classes; ++c) {
    const fs::path dir = out_dir / ("class" + std::to_string(c));
    fs::create_directories(dir, ec);
    const int q = synth_quadrant(c);
    // Centers sit deep inside their quadrant: saliency peaks spread a few
    // tens of pixels around the disk, and they must not cross the 112-px
    // quadrant boundary that localization oracles test against.
    const float qcy = (q / 2 == 0) ? 56.0f : 176.0f;
    const float qcx = (q % 2 == 0) ? 56.0f : 176.0f;
    for (int i = 0; i < per_class; ++i) {
      // Black background: it matches the convolutions' zero padding, so the
      // planted disk is the only spatial structure any feature map can carry
      // and saliency oracles are not confounded by border or texture
      // responses.
      ImageF img = ImageF::make(kSize, kSize, 0.0f);
      const float cy = qcy + jitter(rng);
      const float cx = qcx + jitter(rng);
      // Large disks keep the saliency peak above the flat background response
      // that batch-norm offsets leave in every feature map.
      const float radius = 30.0f + radius_jitter(rng);
      for (int y = 0; y < kSize; ++y)
        for (int x = 0; x < kSize; ++x) {
          const float d = std::sqrt((y - cy) * (y - cy) + (x - cx) * (x - cx));
          // smooth-edged disk so bilinear resampling stays benign
          const float alpha = 1.0f / (1.0f + std::exp((d - radius) / 2.0f));
          for (int ch = 0; ch < 3; ++ch) {
            float v = img.at(ch, y, x);
            v = (1 - alpha) * v + alpha * colors[c][ch];
            v += noise(rng);
            img.at(ch, y, x) = std::clamp(v, 0.0f, 1.0f);
          }
        }
      char name[32];
      std::snprintf(name, sizeof(name), "img_%04d.png", i);
      write_png_rgb(dir / name, img);
    }
  }
  return scan_dataset(out_dir);
}

}  // namespace cbamnet
