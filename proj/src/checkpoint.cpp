#include "apdraw/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <iterator>
#include <map>
#include <sstream>

namespace apdraw {
namespace {

constexpr char kMagic[8] = {'A', 'P', 'D', 'R', 'A', 'W', 'C', 'K'};

uint64_t fnv1a(const char* data, size_t n) {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (size_t i = 0; i < n; ++i) {
    h ^= static_cast<unsigned char>(data[i]);
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::map<std::string, torch::Tensor> named_state(torch::nn::Module& module) {
  std::map<std::string, torch::Tensor> out;
  for (const auto& p : module.named_parameters()) out[p.key()] = p.value();
  for (const auto& b : module.named_buffers()) out[b.key()] = b.value();
  return out;
}

std::string dtype_name(torch::ScalarType t) {
  switch (t) {
    case torch::kFloat32: return "float32";
    case torch::kFloat64: return "float64";
    case torch::kInt64: return "int64";
    default: throw CheckpointError("unsupported tensor dtype in checkpoint");
  }
}

torch::ScalarType dtype_from(const std::string& s) {
  if (s == "float32") return torch::kFloat32;
  if (s == "float64") return torch::kFloat64;
  if (s == "int64") return torch::kInt64;
  throw CheckpointError("checkpoint names unknown dtype " + s);
}

struct Archive {
  nlohmann::json header;
  std::string payload;
};

Archive read_archive(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const auto corrupt = [&](const std::string& why) { return CheckpointError("corrupted checkpoint " + path.string() + ": " + why); };
  if (bytes.size() < sizeof(kMagic) + 16) throw corrupt("truncated");
  if (std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) throw corrupt("bad magic");
  uint64_t stored = 0;
  std::memcpy(&stored, bytes.data() + bytes.size() - 8, 8);
  if (stored != fnv1a(bytes.data(), bytes.size() - 8)) throw corrupt("checksum mismatch");
  uint64_t header_len = 0;
  std::memcpy(&header_len, bytes.data() + sizeof(kMagic), 8);
  const size_t header_at = sizeof(kMagic) + 8;
  if (header_len > bytes.size() - header_at - 8) throw corrupt("header overruns file");
  Archive a;
  try {
    a.header = nlohmann::json::parse(bytes.substr(header_at, header_len));
  } catch (const nlohmann::json::exception&) {
    throw corrupt("unreadable header");
  }
  a.payload = bytes.substr(header_at + header_len, bytes.size() - header_at - header_len - 8);
  return a;
}

CheckpointHeader parse_header(const nlohmann::json& j, const std::filesystem::path& path) {
  CheckpointHeader h;
  h.schema_version = j.value("schema_version", -1);
  if (h.schema_version != kCheckpointSchema)
    throw CheckpointError("checkpoint " + path.string() + " has schema version " + std::to_string(h.schema_version) +
                          "; this build reads version " + std::to_string(kCheckpointSchema) +
                          " and the file must be migrated first");
  h.kind = j.value("kind", "");
  h.config = j.value("config", nlohmann::json::object());
  h.config_hash = j.value("config_hash", "");
  return h;
}

}  // namespace

std::string config_hash(const nlohmann::json& config) {
  const auto text = config.dump();
  std::ostringstream os;
  os << std::hex << fnv1a(text.data(), text.size());
  return os.str();
}

void save_checkpoint(const std::filesystem::path& path, torch::nn::Module& module, const std::string& kind,
                     const nlohmann::json& config) {
  nlohmann::json table = nlohmann::json::array();
  std::string payload;
  for (const auto& [name, t] : named_state(module)) {
    auto c = t.detach().cpu().contiguous();
    const size_t nbytes = static_cast<size_t>(c.numel()) * c.element_size();
    table.push_back({{"name", name}, {"shape", c.sizes().vec()}, {"dtype", dtype_name(c.scalar_type())},
                     {"offset", payload.size()}, {"bytes", nbytes}});
    payload.append(static_cast<const char*>(c.data_ptr()), nbytes);
  }
  nlohmann::json header{{"schema_version", kCheckpointSchema},
                        {"kind", kind},
                        {"config", config},
                        {"config_hash", config_hash(config)},
                        {"tensors", table}};
  const auto h = header.dump();
  std::string bytes(kMagic, sizeof(kMagic));
  const uint64_t len = h.size();
  bytes.append(reinterpret_cast<const char*>(&len), 8);
  bytes += h;
  bytes += payload;
  const uint64_t sum = fnv1a(bytes.data(), bytes.size());
  bytes.append(reinterpret_cast<const char*>(&sum), 8);

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw CheckpointError("cannot write checkpoint " + path.string());
  }
  std::filesystem::rename(tmp, path);
}

CheckpointHeader read_checkpoint_header(const std::filesystem::path& path) {
  return parse_header(read_archive(path).header, path);
}

CheckpointHeader load_checkpoint(const std::filesystem::path& path, torch::nn::Module& module,
                                 const std::string& expected_kind, const std::optional<nlohmann::json>& expected_config) {
  auto archive = read_archive(path);
  auto header = parse_header(archive.header, path);
  if (header.kind != expected_kind)
    throw CheckpointError("checkpoint " + path.string() + " holds model " + header.kind + ", expected " + expected_kind);
  if (header.config_hash != config_hash(header.config)) throw CheckpointError("checkpoint config hash does not match its config");
  if (expected_config && config_hash(*expected_config) != header.config_hash)
    throw CheckpointError("checkpoint " + path.string() + " was saved with a different profile/config (" +
                          header.config.dump() + ")");

  auto state = named_state(module);
  const auto& table = archive.header.at("tensors");
  if (table.size() != state.size())
    throw CheckpointError("checkpoint has " + std::to_string(table.size()) + " tensors, model has " +
                          std::to_string(state.size()));
  torch::NoGradGuard no_grad;
  for (const auto& entry : table) {
    const auto name = entry.at("name").get<std::string>();
    auto it = state.find(name);
    if (it == state.end()) throw CheckpointError("checkpoint tensor " + name + " is not in the model");
    const auto shape = entry.at("shape").get<std::vector<int64_t>>();
    const auto dtype = dtype_from(entry.at("dtype").get<std::string>());
    const auto offset = entry.at("offset").get<size_t>();
    const auto nbytes = entry.at("bytes").get<size_t>();
    if (offset + nbytes > archive.payload.size()) throw CheckpointError("corrupted checkpoint: tensor data overruns");
    if (it->second.sizes().vec() != shape) throw CheckpointError("shape mismatch for " + name);
    auto src = torch::empty(shape, torch::TensorOptions().dtype(dtype));
    if (static_cast<size_t>(src.numel()) * src.element_size() != nbytes) throw CheckpointError("size mismatch for " + name);
    std::memcpy(src.data_ptr(), archive.payload.data() + offset, nbytes);
    it->second.copy_(src);
  }
  return header;
}

}  // namespace apdraw
