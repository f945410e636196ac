#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

#include "medic/error.hpp"
#include "medic/model.hpp"
#include "medic/tensor_io.hpp"

namespace medic::zoo {

namespace {

constexpr char kMagic[] = "MDIC-CKPT";
constexpr std::size_t kMagicLen = sizeof(kMagic) - 1;

}  // namespace

void write_checkpoint(std::ostream& os, const Model& model) {
  os.write(kMagic, kMagicLen);
  binio::write_u32(os, kCheckpointVersion);
  binio::write_string(os, to_string(model.arch.config.kind));
  binio::write_string(os, to_text(model.arch.config));
  const std::size_t records = model.params.size() + 2 * model.buffers.size();
  binio::write_u32(os, static_cast<std::uint32_t>(records));
  for (const auto& [name, t] : model.params.entries()) {
    binio::write_string(os, "param/" + name);
    write_tensor(os, t);
  }
  for (const auto& [layer, stats] : model.buffers) {
    binio::write_string(os, "buffer/" + layer + "/mean");
    write_tensor(os, stats.running_mean);
    binio::write_string(os, "buffer/" + layer + "/var");
    write_tensor(os, stats.running_var);
  }
  if (!os) throw DataError("checkpoint write failed");
}

Model read_checkpoint(std::istream& is) {
  char magic[kMagicLen];
  is.read(magic, kMagicLen);
  if (!is || std::string(magic, kMagicLen) != kMagic) throw DataError("not a checkpoint (bad magic)");
  const std::uint32_t version = binio::read_u32(is);
  if (version != kCheckpointVersion) {
    throw DataError("unsupported checkpoint version " + std::to_string(version));
  }
  const std::string kind = binio::read_string(is);
  ModelConfig config;
  try {
    config = model_config_from_text(binio::read_string(is));
  } catch (const std::exception& e) {
    throw DataError(std::string("bad checkpoint hyperparameters: ") + e.what());
  }
  if (to_string(config.kind) != kind) throw DataError("checkpoint kind mismatch");
  Model model = build(config);

  const std::uint32_t records = binio::read_u32(is);
  std::size_t params_seen = 0;
  std::map<std::string, int> buffers_seen;
  for (std::uint32_t i = 0; i < records; ++i) {
    const std::string name = binio::read_string(is);
    Tensor t = read_tensor(is);
    Tensor* slot = nullptr;
    if (name.rfind("param/", 0) == 0) {
      const std::string p = name.substr(6);
      if (!model.params.contains(p)) throw DataError("checkpoint has unknown parameter '" + p + "'");
      slot = &model.params.get(p);
      ++params_seen;
    } else if (name.rfind("buffer/", 0) == 0) {
      const auto slash = name.rfind('/');
      const std::string layer = name.substr(7, slash - 7);
      const std::string field = name.substr(slash + 1);
      const auto it = model.buffers.find(layer);
      if (it == model.buffers.end() || (field != "mean" && field != "var")) {
        throw DataError("checkpoint has unknown buffer '" + name + "'");
      }
      slot = field == "mean" ? &it->second.running_mean : &it->second.running_var;
      ++buffers_seen[layer];
    } else {
      throw DataError("checkpoint has unknown record '" + name + "'");
    }
    if (slot->shape() != t.shape()) {
      throw DataError("checkpoint record '" + name + "' has shape " + shape_to_string(t.shape()) +
                      ", expected " + shape_to_string(slot->shape()));
    }
    *slot = std::move(t);
  }
  if (params_seen != model.params.size() || buffers_seen.size() != model.buffers.size()) {
    throw DataError("checkpoint is missing records");
  }
  return model;
}

void save_checkpoint(const std::filesystem::path& path, const Model& model) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot open '" + path.string() + "' for writing");
  write_checkpoint(os, model);
}

Model load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open checkpoint '" + path.string() + "'");
  return read_checkpoint(is);
}

}  // namespace medic::zoo
