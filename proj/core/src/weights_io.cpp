#include "nowcast/weights_io.hpp"

#include <cstring>

#include <nlohmann/json.hpp>

#include "nowcast/csv.hpp"
#include "nowcast/digest.hpp"
#include "nowcast/error.hpp"
#include "nowcast/features.hpp"

namespace nowcast {

namespace {

constexpr char kMagic[8] = {'N', 'C', 'W', 'E', 'I', 'G', 'H', 'T'};
constexpr std::uint32_t kVersion = 1;

nlohmann::ordered_json config_to_json(const ModelConfig& c) {
  nlohmann::ordered_json j;
  j["nodes"] = c.nodes;
  j["in_channels"] = c.in_channels;
  j["block_channels"] = c.block_channels;
  j["cheb_order"] = c.cheb_order;
  j["kernel_width"] = c.kernel_width;
  j["window"] = c.window;
  j["horizon"] = c.horizon;
  j["dropout"] = c.dropout;
  j["seed"] = c.seed;
  j["attention"] = c.attention;
  j["graph"] = to_string(c.graph);
  j["channels"] = to_string(c.channels);
  return j;
}

ModelConfig config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.nodes = j.at("nodes").get<std::size_t>();
  c.in_channels = j.at("in_channels").get<std::size_t>();
  c.block_channels = j.at("block_channels").get<std::vector<std::size_t>>();
  c.cheb_order = j.at("cheb_order").get<int>();
  c.kernel_width = j.at("kernel_width").get<std::size_t>();
  c.window = j.at("window").get<std::size_t>();
  c.horizon = j.at("horizon").get<std::size_t>();
  c.dropout = j.at("dropout").get<double>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.attention = j.at("attention").get<bool>();
  c.graph = parse_graph_mode(j.at("graph").get<std::string>());
  c.channels = parse_channel_mode(j.at("channels").get<std::string>());
  c.validate();
  return c;
}

}  // namespace

std::string model_config_json(const ModelConfig& config) { return config_to_json(config).dump(); }

void save_weights(const std::filesystem::path& path, const ModelParams& params) {
  std::string payload;
  nlohmann::ordered_json groups = nlohmann::ordered_json::array();
  for (const auto& [name, tensor] : params.parameters()) {
    groups.push_back({{"name", name}, {"shape", tensor->shape()}});
    const auto v = tensor->values();
    payload.append(reinterpret_cast<const char*>(v.data()), v.size() * sizeof(double));
  }
  nlohmann::ordered_json header;
  header["format"] = "nowcast-weights";
  header["version"] = kVersion;
  header["config"] = config_to_json(params.config);
  header["channel_order"] = std::vector<std::string>(kChannelNames.begin(), kChannelNames.end());
  header["groups"] = groups;
  header["payload_sha256"] = sha256_hex(payload);
  const std::string head = header.dump();

  std::string out(kMagic, sizeof kMagic);
  const std::uint32_t version = kVersion;
  const std::uint64_t head_len = head.size();
  out.append(reinterpret_cast<const char*>(&version), sizeof version);
  out.append(reinterpret_cast<const char*>(&head_len), sizeof head_len);
  out += head;
  out += payload;
  write_text_file(path, out);
}

ModelParams load_weights(const std::filesystem::path& path) {
  const std::string bytes = read_text_file(path);
  const std::size_t fixed = sizeof kMagic + sizeof(std::uint32_t) + sizeof(std::uint64_t);
  if (bytes.size() < fixed || std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0) {
    throw UsageError(path.string() + ": not a nowcast weight file");
  }
  std::uint32_t version = 0;
  std::uint64_t head_len = 0;
  std::memcpy(&version, bytes.data() + sizeof kMagic, sizeof version);
  std::memcpy(&head_len, bytes.data() + sizeof kMagic + sizeof version, sizeof head_len);
  if (version != kVersion) throw UsageError(path.string() + ": unsupported weight file version " + std::to_string(version));
  if (bytes.size() < fixed + head_len) throw UsageError(path.string() + ": truncated header");

  try {
    const auto header = nlohmann::json::parse(bytes.substr(fixed, head_len));
    const std::string payload = bytes.substr(fixed + head_len);
    if (header.at("payload_sha256").get<std::string>() != sha256_hex(payload)) {
      throw UsageError(path.string() + ": payload checksum mismatch");
    }
    ModelParams params = ModelParams::init(config_from_json(header.at("config")));
    auto slots = params.parameters();
    const auto& groups = header.at("groups");
    if (groups.size() != slots.size()) throw UsageError(path.string() + ": parameter group count mismatch");
    std::size_t offset = 0;
    for (std::size_t i = 0; i < slots.size(); ++i) {
      const auto name = groups[i].at("name").get<std::string>();
      const auto shape = groups[i].at("shape").get<Shape>();
      if (name != slots[i].name || shape != slots[i].tensor->shape()) {
        throw UsageError(path.string() + ": unexpected parameter group " + name + " " + shape_str(shape));
      }
      const std::size_t count = shape_numel(shape);
      if (offset + count * sizeof(double) > payload.size()) throw UsageError(path.string() + ": truncated payload");
      std::vector<double> v(count);
      std::memcpy(v.data(), payload.data() + offset, count * sizeof(double));
      offset += count * sizeof(double);
      *slots[i].tensor = Tensor::from(shape, std::move(v), true);
    }
    if (offset != payload.size()) throw UsageError(path.string() + ": trailing payload bytes");
    return params;
  } catch (const nlohmann::json::exception& e) {
    throw UsageError(path.string() + ": bad header: " + e.what());
  }
}

}  // namespace nowcast
