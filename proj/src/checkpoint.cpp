#include "nodseg/checkpoint.hpp"

#include <cstdio>
#include <fstream>
#include <map>

#include <nlohmann/json.hpp>

#include "nodseg/config.hpp"
#include "nodseg/error.hpp"
#include "nodseg/imaging_io.hpp"

namespace nodseg {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

struct NamedTensor {
  std::string name;
  torch::Tensor tensor;
  bool is_buffer;
};

std::vector<NamedTensor> all_tensors(MultitaskNet& model) {
  std::vector<NamedTensor> out;
  for (const auto& p : model->named_parameters(true)) out.push_back({p.key(), p.value(), false});
  for (const auto& b : model->named_buffers(true)) out.push_back({b.key(), b.value(), true});
  return out;
}

std::vector<std::int64_t> shape_of(const torch::Tensor& t) { return t.sizes().vec(); }

json read_metadata(const fs::path& dir) {
  std::ifstream in(dir / "metadata.json");
  if (!in) throw CheckpointError("checkpoint " + dir.string() + " has no metadata.json");
  try {
    return json::parse(in);
  } catch (const json::exception& ex) {
    throw CheckpointError("checkpoint metadata is not valid JSON: " + std::string(ex.what()));
  }
}

}  // namespace

std::string fnv1a_hex(const std::string& text) {
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 1099511628211ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

void save_checkpoint(MultitaskNet& model, const fs::path& dir, int epoch, const std::string& config_hash) {
  std::error_code ec;
  fs::create_directories(dir / "tensors", ec);
  if (ec) throw IoError("cannot create checkpoint directory " + dir.string());

  json tensors = json::array();
  for (const auto& nt : all_tensors(model)) {
    const auto data = nt.tensor.detach().to(torch::kCPU, torch::kFloat).contiguous();
    const std::string file = "tensors/" + nt.name + ".bin";
    write_float_raw(dir / file, std::span<const float>(data.data_ptr<float>(), static_cast<std::size_t>(data.numel())));
    tensors.push_back({{"name", nt.name},
                       {"group", group_of(nt.name)},
                       {"kind", nt.is_buffer ? "buffer" : "parameter"},
                       {"dtype", "float32"},
                       {"shape", shape_of(nt.tensor)},
                       {"file", file}});
  }
  const json meta{{"format_version", kCheckpointVersion},
                  {"epoch", epoch},
                  {"config_hash", config_hash},
                  {"groups", model->group_names()},
                  {"model", model_config_to_json(model->config())},
                  {"tensors", tensors}};
  std::ofstream out(dir / "metadata.json");
  if (!out) throw IoError("cannot write checkpoint metadata in " + dir.string());
  out << meta.dump(2) << '\n';
}

CheckpointInfo load_checkpoint(MultitaskNet& model, const fs::path& dir) {
  const json meta = read_metadata(dir);
  CheckpointInfo info;
  std::map<std::string, json> stored;
  try {
    info.format_version = meta.at("format_version").get<int>();
    info.epoch = meta.at("epoch").get<int>();
    info.config_hash = meta.at("config_hash").get<std::string>();
    info.groups = meta.at("groups").get<std::vector<std::string>>();
    for (const auto& t : meta.at("tensors")) stored[t.at("name").get<std::string>()] = t;
  } catch (const json::exception& ex) {
    throw CheckpointError("malformed checkpoint metadata: " + std::string(ex.what()));
  }
  if (info.format_version != kCheckpointVersion)
    throw CheckpointError("unsupported checkpoint format " + std::to_string(info.format_version));

  const auto tensors = all_tensors(model);
  if (tensors.size() != stored.size())
    throw CheckpointError("checkpoint holds " + std::to_string(stored.size()) + " tensors, model has " +
                          std::to_string(tensors.size()));

  torch::NoGradGuard guard;
  for (const auto& nt : tensors) {
    auto it = stored.find(nt.name);
    if (it == stored.end()) throw CheckpointError("checkpoint lacks tensor " + nt.name);
    const auto shape = it->second.at("shape").get<std::vector<std::int64_t>>();
    if (shape != shape_of(nt.tensor))
      throw CheckpointError("tensor " + nt.name + " has incompatible shape in checkpoint");
    auto values = read_float_raw(dir / it->second.at("file").get<std::string>(),
                                 static_cast<std::size_t>(nt.tensor.numel()));
    const auto src = torch::from_blob(values.data(), nt.tensor.sizes(), torch::kFloat);
    nt.tensor.copy_(src.to(nt.tensor.dtype()));
  }
  return info;
}

ModelConfig read_checkpoint_model_config(const fs::path& dir) {
  const json meta = read_metadata(dir);
  if (!meta.contains("model")) throw CheckpointError("checkpoint metadata lacks the model architecture");
  try {
    return model_config_from_json(meta["model"], "checkpoint.model");
  } catch (const ConfigError& e) {
    throw CheckpointError(e.what());
  }
}

}  // namespace nodseg
