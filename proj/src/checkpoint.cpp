#include "cbamnet/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include <json.hpp>

namespace cbamnet {

namespace {

using json = nlohmann::ordered_json;

json spec_to_json(const ModelSpec& s) {
  json blocks = json::array();
  for (const auto& b : s.blocks)
    blocks.push_back({{"filters", b.filters}, {"kernel", b.kernel}});
  return {{"input_channels", s.input_channels},
          {"input_size", s.input_size},
          {"blocks", blocks},
          {"head", s.head},
          {"num_classes", s.num_classes},
          {"reduction_ratio", s.reduction_ratio},
          {"dropout_rate", s.dropout_rate},
          {"mlp_bias", s.mlp_bias}};
}

ModelSpec spec_from_json(const json& j) {
  ModelSpec s;
  s.input_channels = j.at("input_channels");
  s.input_size = j.at("input_size");
  s.blocks.clear();
  for (const auto& b : j.at("blocks"))
    s.blocks.push_back({b.at("filters"), b.at("kernel")});
  s.head = j.at("head").get<std::vector<int>>();
  s.num_classes = j.at("num_classes");
  s.reduction_ratio = j.at("reduction_ratio");
  s.dropout_rate = j.at("dropout_rate");
  s.mlp_bias = j.at("mlp_bias");
  return s;
}

}  // namespace

void save_checkpoint(const Model& model, const std::filesystem::path& path) {
  json tensors = json::array();
  std::uint64_t offset = 0;
  for (const auto& e : model.registry()) {
    const Shape& s = e.tensor.shape();
    tensors.push_back({{"name", e.name},
                       {"shape", {s.n, s.c, s.h, s.w}},
                       {"offset", offset}});
    offset += static_cast<std::uint64_t>(e.tensor.numel()) * 4;
  }
  json header = {{"spec", spec_to_json(model.spec())},
                 {"stats_ready", model.stats_ready()},
                 {"tensors", tensors}};
  const std::string htext = header.dump();

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError("cannot open " + path.string() + " for writing");
  out.write(kCheckpointMagic, 4);
  const std::uint32_t version = kCheckpointVersion;
  const std::uint32_t hlen = static_cast<std::uint32_t>(htext.size());
  out.write(reinterpret_cast<const char*>(&version), 4);
  out.write(reinterpret_cast<const char*>(&hlen), 4);
  out.write(htext.data(), htext.size());
  for (const auto& e : model.registry())
    out.write(reinterpret_cast<const char*>(e.tensor.values().data()),
              e.tensor.numel() * 4);
  if (!out) throw CheckpointError("write failure on " + path.string());
}

Model load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open " + path.string());
  char magic[4];
  if (!in.read(magic, 4))
    throw TruncatedCheckpointError(path.string() + ": shorter than the magic");
  if (std::memcmp(magic, kCheckpointMagic, 4) != 0)
    throw BadMagicError(path.string() + ": bad magic");
  std::uint32_t version = 0, hlen = 0;
  if (!in.read(reinterpret_cast<char*>(&version), 4) ||
      !in.read(reinterpret_cast<char*>(&hlen), 4))
    throw TruncatedCheckpointError(path.string() + ": truncated header fields");
  if (version != kCheckpointVersion)
    throw VersionMismatchError(path.string() + ": format version " +
                               std::to_string(version) + ", expected " +
                               std::to_string(kCheckpointVersion));
  std::string htext(hlen, '\0');
  if (!in.read(htext.data(), hlen))
    throw TruncatedCheckpointError(path.string() + ": truncated header");
  json header;
  try {
    header = json::parse(htext);
  } catch (const json::exception& e) {
    throw CheckpointError(path.string() + ": unparseable header: " + e.what());
  }

  Model model(spec_from_json(header.at("spec")), /*seed=*/0);
  const auto& tensors = header.at("tensors");
  if (tensors.size() != model.registry().size())
    throw TensorMismatchError(path.string() + ": header lists " +
                              std::to_string(tensors.size()) +
                              " tensors, model has " +
                              std::to_string(model.registry().size()));
  for (size_t i = 0; i < tensors.size(); ++i) {
    auto& entry = model.registry()[i];
    const auto& t = tensors[i];
    const std::string name = t.at("name");
    if (name != entry.name)
      throw TensorMismatchError(path.string() + ": tensor " + name +
                                " where " + entry.name + " was expected");
    const auto sh = t.at("shape").get<std::vector<std::int64_t>>();
    const Shape want = entry.tensor.shape();
    if (sh.size() != 4 || Shape{sh[0], sh[1], sh[2], sh[3]} != want)
      throw TensorMismatchError(path.string() + ": tensor " + name +
                                " has unexpected shape");
    if (!in.read(reinterpret_cast<char*>(entry.tensor.values().data()),
                 entry.tensor.numel() * 4))
      throw TruncatedCheckpointError(path.string() +
                                     ": payload truncated at tensor " + name);
  }
  if (header.value("stats_ready", false)) model.mark_stats_ready();
  model.set_mode(Mode::kInfer);
  return model;
}

}  // namespace cbamnet
