#include "ichseg/nn/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <map>

#include "ichseg/volume.hpp"

namespace ichseg::nn {

namespace {

constexpr char kMagic[8] = {'I', 'C', 'H', 'S', 'C', 'K', 'P', '1'};

struct Header {
  nlohmann::json json;
  std::uint64_t data_offset = 0;
};

Header read_header(std::ifstream& in, const std::filesystem::path& path) {
  char magic[8];
  std::uint64_t len = 0;
  if (!in.read(magic, 8) || std::memcmp(magic, kMagic, 8) != 0)
    throw Error(path.string() + ": not a checkpoint file");
  if (!in.read(reinterpret_cast<char*>(&len), sizeof(len)) || len > (1ull << 30))
    throw Error(path.string() + ": truncated checkpoint header");
  std::string text(len, '\0');
  if (!in.read(text.data(), static_cast<std::streamsize>(len))) throw Error(path.string() + ": truncated checkpoint header");
  Header h;
  try {
    h.json = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw Error(path.string() + ": corrupt checkpoint header: " + e.what());
  }
  h.data_offset = 16 + len;
  return h;
}

std::ifstream open(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(path.string() + ": checkpoint does not exist");
  return in;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const nlohmann::json& meta, const ConstParamRefs& params) {
  nlohmann::json table = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const Parameter* p : params) {
    table.push_back({{"name", p->name}, {"shape", p->shape}, {"offset", offset}, {"count", p->size()}});
    offset += p->size();
  }
  const std::string text = nlohmann::json{{"meta", meta}, {"tensors", table}}.dump();
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(path.string() + ": cannot open checkpoint for writing");
    const std::uint64_t len = text.size();
    out.write(kMagic, 8);
    out.write(reinterpret_cast<const char*>(&len), sizeof(len));
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const Parameter* p : params)
      out.write(reinterpret_cast<const char*>(p->value.data()), static_cast<std::streamsize>(p->size() * sizeof(float)));
    if (!out) throw Error(path.string() + ": failed writing checkpoint");
  }
  std::filesystem::rename(tmp, path);
}

nlohmann::json read_checkpoint_meta(const std::filesystem::path& path) {
  auto in = open(path);
  return read_header(in, path).json.at("meta");
}

nlohmann::json load_checkpoint(const std::filesystem::path& path, const ParamRefs& params) {
  auto in = open(path);
  const Header h = read_header(in, path);
  std::map<std::string, nlohmann::json> table;
  for (const auto& t : h.json.at("tensors")) table[t.at("name").get<std::string>()] = t;
  for (Parameter* p : params) {
    const auto it = table.find(p->name);
    if (it == table.end()) throw Error(path.string() + ": checkpoint lacks tensor '" + p->name + "'");
    if (it->second.at("shape").get<std::vector<std::size_t>>() != p->shape)
      throw Error(path.string() + ": shape mismatch for tensor '" + p->name + "'");
    const auto off = it->second.at("offset").get<std::uint64_t>();
    in.seekg(static_cast<std::streamoff>(h.data_offset + off * sizeof(float)));
    if (!in.read(reinterpret_cast<char*>(p->value.data()), static_cast<std::streamsize>(p->size() * sizeof(float))))
      throw Error(path.string() + ": truncated tensor data for '" + p->name + "'");
  }
  return h.json.at("meta");
}

}  // namespace ichseg::nn
