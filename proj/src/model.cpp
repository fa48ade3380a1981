#include "cbamnet/model.hpp"

#include <iomanip>
#include <random>
#include <sstream>

namespace cbamnet {

void ModelSpec::validate() const {
  if (blocks.size() != 4)
    throw ValueError("model spec: exactly 4 blocks required, got " +
                     std::to_string(blocks.size()));
  for (const auto& b : blocks) {
    if (b.kernel % 2 == 0)
      throw ValueError("model spec: kernels must be odd, got " +
                       std::to_string(b.kernel));
    if (b.filters <= 0) throw ValueError("model spec: filters must be positive");
    if (b.filters % reduction_ratio != 0)
      throw ValueError("model spec: filters " + std::to_string(b.filters) +
                       " not divisible by reduction ratio " +
                       std::to_string(reduction_ratio));
  }
  if (num_classes < 2)
    throw ValueError("model spec: at least 2 classes required");
  if (!(dropout_rate >= 0.0f && dropout_rate < 1.0f))
    throw ValueError("model spec: dropout rate must lie in [0,1)");
  if (input_size % 16 != 0)
    throw ValueError("model spec: input size must be divisible by 16");
  if (head.size() != 2)
    throw ValueError("model spec: head must have two hidden layers");
}

namespace {

template <typename Rng>
Tensor he_normal(Shape s, std::int64_t fan_in, Rng& rng) {
  auto t = Tensor::randn(s, rng, std::sqrt(2.0f / static_cast<float>(fan_in)));
  t.set_requires_grad(true);
  return t;
}

}  // namespace

Model::Model(ModelSpec spec, std::uint64_t seed) : spec_(std::move(spec)) {
  spec_.validate();
  std::mt19937_64 rng(seed);

  int c_in = spec_.input_channels;
  for (size_t i = 0; i < spec_.blocks.size(); ++i) {
    const auto& bs = spec_.blocks[i];
    const int k = bs.kernel;
    Block blk;
    blk.conv1.weight =
        he_normal({bs.filters, c_in, k, k}, c_in * k * k, rng);
    blk.bn1 = BatchNorm2D::make(bs.filters);
    blk.conv2.weight =
        he_normal({bs.filters, bs.filters, k, k}, bs.filters * k * k, rng);
    blk.bn2 = BatchNorm2D::make(bs.filters);
    blk.cbam = CBAMBlock::make(bs.filters, spec_.reduction_ratio, rng,
                               spec_.mlp_bias);
    const std::string p = "block" + std::to_string(i + 1) + ".";
    register_tensor(p + "conv1.weight", blk.conv1.weight, true);
    register_tensor(p + "bn1.gamma", blk.bn1.gamma, true);
    register_tensor(p + "bn1.beta", blk.bn1.beta, true);
    register_tensor(p + "bn1.running_mean", blk.bn1.running_mean, false);
    register_tensor(p + "bn1.running_var", blk.bn1.running_var, false);
    register_tensor(p + "conv2.weight", blk.conv2.weight, true);
    register_tensor(p + "bn2.gamma", blk.bn2.gamma, true);
    register_tensor(p + "bn2.beta", blk.bn2.beta, true);
    register_tensor(p + "bn2.running_mean", blk.bn2.running_mean, false);
    register_tensor(p + "bn2.running_var", blk.bn2.running_var, false);
    register_tensor(p + "cbam.ca.w1", blk.cbam.channel.w1, true);
    if (spec_.mlp_bias)
      register_tensor(p + "cbam.ca.b1", blk.cbam.channel.b1, true);
    register_tensor(p + "cbam.ca.w2", blk.cbam.channel.w2, true);
    if (spec_.mlp_bias)
      register_tensor(p + "cbam.ca.b2", blk.cbam.channel.b2, true);
    register_tensor(p + "cbam.sa.weight", blk.cbam.spatial.conv.weight, true);
    register_tensor(p + "cbam.sa.bias", *blk.cbam.spatial.conv.bias, true);
    blocks_.push_back(std::move(blk));
    c_in = bs.filters;
  }

  std::vector<int> widths{c_in};
  widths.insert(widths.end(), spec_.head.begin(), spec_.head.end());
  widths.push_back(spec_.num_classes);
  for (size_t i = 0; i + 1 < widths.size(); ++i) {
    Dense d;
    d.weight = he_normal({widths[i + 1], widths[i], 1, 1}, widths[i], rng);
    d.bias = Tensor::zeros({1, widths[i + 1], 1, 1}, true);
    const std::string p = "head.fc" + std::to_string(i + 1) + ".";
    register_tensor(p + "weight", d.weight, true);
    register_tensor(p + "bias", d.bias, true);
    head_.push_back(std::move(d));
  }
  dropouts_.push_back(Dropout::make(spec_.dropout_rate, seed ^ 0xd1d1d1d1ULL));
  dropouts_.push_back(Dropout::make(spec_.dropout_rate, seed ^ 0xd2d2d2d2ULL));
}

void Model::register_tensor(const std::string& name, Tensor t, bool trainable) {
  for (const auto& e : registry_)
    if (e.name == name) throw ValueError("duplicate parameter name " + name);
  registry_.push_back({name, std::move(t), trainable});
}

Tensor* Model::find(const std::string& name) {
  for (auto& e : registry_)
    if (e.name == name) return &e.tensor;
  return nullptr;
}

void Model::set_mode(Mode mode) {
  mode_ = mode;
  for (auto& b : blocks_) {
    b.bn1.mode = mode;
    b.bn2.mode = mode;
  }
  for (auto& d : dropouts_) d.mode = mode;
}

bool Model::stats_ready() const {
  return blocks_.front().bn1.stats_ready;
}

void Model::mark_stats_ready() {
  for (auto& b : blocks_) {
    b.bn1.stats_ready = true;
    b.bn2.stats_ready = true;
  }
}

Tensor Model::forward(const Tensor& x, std::map<std::string, Tensor>* capture) {
  const Shape& xs = x.shape();
  if (xs.c != spec_.input_channels || xs.h != spec_.input_size ||
      xs.w != spec_.input_size)
    throw ShapeError("model: expected input (N," +
                     std::to_string(spec_.input_channels) + "," +
                     std::to_string(spec_.input_size) + "," +
                     std::to_string(spec_.input_size) + "), got " + xs.str());
  Tensor h = x;
  for (size_t i = 0; i < blocks_.size(); ++i) {
    auto& b = blocks_[i];
    h = relu(b.bn1.forward(b.conv1.forward(h)));
    h = relu(b.bn2.forward(b.conv2.forward(h)));
    h = b.cbam.forward(h);
    if (capture) (*capture)["block" + std::to_string(i + 1)] = h;
    h = maxpool2d(h);
  }
  h = global_avg_pool(h);
  for (size_t i = 0; i + 1 < head_.size(); ++i)
    h = dropouts_[i].forward(relu(head_[i].forward(h)));
  return head_.back().forward(h);
}

ParamCounts Model::count_parameters() const {
  ParamCounts c;
  for (const auto& e : registry_)
    (e.trainable ? c.trainable : c.buffers) += e.tensor.numel();
  return c;
}

std::string Model::parameter_table() const {
  std::ostringstream os;
  os << std::left << std::setw(28) << "name" << std::setw(18) << "shape"
     << std::setw(12) << "count" << "trainable\n";
  for (const auto& e : registry_)
    os << std::left << std::setw(28) << e.name << std::setw(18)
       << e.tensor.shape().str() << std::setw(12) << e.tensor.numel()
       << (e.trainable ? "yes" : "no") << "\n";
  const ParamCounts c = count_parameters();
  os << "trainable: " << c.trainable << "\n";
  os << "buffers:   " << c.buffers << "\n";
  os << "total:     " << c.total() << " (" << std::fixed
     << std::setprecision(2)
     << static_cast<double>(c.bytes()) / (1024.0 * 1024.0) << " MiB)\n";
  return os.str();
}

std::vector<std::string> Model::architecture() const {
  std::vector<std::string> seq;
  int c_in = spec_.input_channels;
  for (const auto& bs : spec_.blocks) {
    for (int rep = 0; rep < 2; ++rep) {
      seq.push_back("Conv2d(" + std::to_string(rep == 0 ? c_in : bs.filters) +
                    "->" + std::to_string(bs.filters) + ",k" +
                    std::to_string(bs.kernel) + ",same)");
      seq.push_back("BatchNorm2d(" + std::to_string(bs.filters) + ")");
      seq.push_back("ReLU");
    }
    seq.push_back("CBAM(" + std::to_string(bs.filters) + ",r=" +
                  std::to_string(spec_.reduction_ratio) + ")");
    seq.push_back("MaxPool2x2");
    c_in = bs.filters;
  }
  seq.push_back("GlobalAvgPool");
  int in = c_in;
  for (int width : spec_.head) {
    seq.push_back("Dense(" + std::to_string(in) + "->" + std::to_string(width) +
                  ")");
    seq.push_back("ReLU");
    std::ostringstream d;
    d << "Dropout(" << spec_.dropout_rate << ")";
    seq.push_back(d.str());
    in = width;
  }
  seq.push_back("Dense(" + std::to_string(in) + "->" +
                std::to_string(spec_.num_classes) + ")");
  return seq;
}

std::vector<std::string> Model::capture_names() const {
  std::vector<std::string> names;
  for (size_t i = 0; i < blocks_.size(); ++i)
    names.push_back("block" + std::to_string(i + 1));
  return names;
}

}  // namespace cbamnet
