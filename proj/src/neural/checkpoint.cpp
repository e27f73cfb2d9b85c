#include "nesyarith/neural/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

namespace nesyarith::neural {

namespace {

constexpr char kMagic[] = {'N', 'S', 'A', 'R', '1'};

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out += static_cast<char>((v >> (8 * i)) & 0xFF);
}

std::uint32_t get_u32(const char* p) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(p[i])) << (8 * i);
  return v;
}

}  // namespace

nlohmann::json to_json(const ModelConfig& cfg) {
  return {{"d_model", cfg.d_model},
          {"n_heads", cfg.n_heads},
          {"d_ff", cfg.d_ff},
          {"vocab_size", cfg.vocab_size},
          {"max_positions", cfg.max_positions},
          {"pe_mode", std::string(to_string(cfg.pe_mode))},
          {"max_decode_len", cfg.max_decode_len},
          {"dropout", cfg.dropout},
          {"scale_embeddings", cfg.scale_embeddings}};
}

ModelConfig model_config_from_json(const nlohmann::json& j, ModelConfig cfg) {
  if (!j.is_object()) throw std::invalid_argument("model config must be an object");
  for (const auto& [key, value] : j.items()) {
    auto integer = [&]() {
      if (!value.is_number_integer()) throw std::invalid_argument("model." + key + " must be an integer");
      return value.get<int>();
    };
    if (key == "d_model") cfg.d_model = integer();
    else if (key == "n_heads") cfg.n_heads = integer();
    else if (key == "d_ff") cfg.d_ff = integer();
    else if (key == "vocab_size") cfg.vocab_size = integer();
    else if (key == "max_positions") cfg.max_positions = integer();
    else if (key == "max_decode_len") cfg.max_decode_len = integer();
    else if (key == "pe_mode") {
      if (!value.is_string()) throw std::invalid_argument("model.pe_mode must be a string");
      cfg.pe_mode = pe_mode_from_string(value.get<std::string>());
    } else if (key == "dropout") {
      if (!value.is_number()) throw std::invalid_argument("model.dropout must be a number");
      cfg.dropout = value.get<double>();
    } else if (key == "scale_embeddings") {
      if (!value.is_boolean()) throw std::invalid_argument("model.scale_embeddings must be a boolean");
      cfg.scale_embeddings = value.get<bool>();
    } else {
      throw std::invalid_argument("unknown key model." + key);
    }
  }
  cfg.validate();
  return cfg;
}

void save_checkpoint(const ModelParams& params, const ModelConfig& cfg,
                     const std::filesystem::path& path) {
  nlohmann::json manifest = nlohmann::json::array();
  std::string data;
  params.visit([&](const std::string& name, const MatrixF& m) {
    manifest.push_back({{"name", name}, {"shape", {m.rows(), m.cols()}}, {"offset", data.size()}});
    for (Eigen::Index i = 0; i < m.size(); ++i) put_u32(data, std::bit_cast<std::uint32_t>(m.data()[i]));
  });
  const std::string header = nlohmann::json{{"config", to_json(cfg)}, {"tensors", manifest}}.dump();

  std::string out(kMagic, sizeof kMagic);
  const auto len = static_cast<std::uint64_t>(header.size());
  for (int i = 0; i < 8; ++i) out += static_cast<char>((len >> (8 * i)) & 0xFF);
  out += header;
  out += data;

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw std::runtime_error("failed writing '" + path.string() + "'");
}

std::pair<ModelParams, ModelConfig> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open checkpoint '" + path.string() + "'");
  const std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());

  if (bytes.size() < sizeof kMagic + 8 || std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0)
    throw CorruptCheckpoint("bad magic");
  std::uint64_t len = 0;
  for (int i = 0; i < 8; ++i)
    len |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[sizeof kMagic + i])) << (8 * i);
  const std::size_t header_at = sizeof kMagic + 8;
  if (len > bytes.size() - header_at) throw CorruptCheckpoint("truncated header");

  nlohmann::json header;
  ModelConfig cfg;
  try {
    header = nlohmann::json::parse(bytes.substr(header_at, len));
    cfg = model_config_from_json(header.at("config"));
  } catch (const std::exception& e) {
    throw CorruptCheckpoint(std::string("unreadable header: ") + e.what());
  }

  const std::size_t data_at = header_at + len;
  const std::size_t data_size = bytes.size() - data_at;
  ModelParams params = ModelParams::zeros(cfg);
  const auto& tensors = header.at("tensors");
  std::size_t index = 0, expected_offset = 0;
  params.visit([&](const std::string& name, MatrixF& m) {
    if (index >= tensors.size()) throw CorruptCheckpoint("manifest is missing " + name);
    const auto& entry = tensors[index++];
    try {
      if (entry.at("name").get<std::string>() != name)
        throw CorruptCheckpoint("expected tensor " + name);
      const auto shape = entry.at("shape").get<std::vector<long>>();
      if (shape.size() != 2 || shape[0] != m.rows() || shape[1] != m.cols())
        throw CorruptCheckpoint("shape of " + name + " disagrees with the configuration");
      if (entry.at("offset").get<std::size_t>() != expected_offset)
        throw CorruptCheckpoint("unexpected offset for " + name);
    } catch (const nlohmann::json::exception& e) {
      throw CorruptCheckpoint("bad manifest entry: " + std::string(e.what()));
    }
    const std::size_t nbytes = static_cast<std::size_t>(m.size()) * 4;
    if (expected_offset + nbytes > data_size) throw CorruptCheckpoint("truncated tensor data");
    const char* p = bytes.data() + data_at + expected_offset;
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = std::bit_cast<float>(get_u32(p + 4 * i));
    expected_offset += nbytes;
  });
  if (index != tensors.size()) throw CorruptCheckpoint("manifest lists unexpected tensors");
  if (expected_offset != data_size) throw CorruptCheckpoint("trailing bytes after tensor data");
  return {std::move(params), cfg};
}

}  // namespace nesyarith::neural
