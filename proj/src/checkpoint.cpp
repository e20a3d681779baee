#include "anonact/checkpoint.hpp"

#include <json.hpp>

#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>

namespace anonact {

using nlohmann::json;

static const char kMagic[8] = {'A', 'C', 'K', 'P', 'T', '0', '1', '\n'};

void save_checkpoint(const std::string& path, const ParamList& params, const std::string& config_echo) {
  json header;
  header["config"] = config_echo;
  header["params"] = json::array();
  std::int64_t offset = 0;
  for (const auto& p : params) {
    header["params"].push_back({{"name", p.name}, {"shape", p.var.value().shape()}, {"offset", offset}});
    offset += p.var.value().numel();
  }
  const std::string h = header.dump();
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error(tmp + ": cannot open for writing");
    out.write(kMagic, sizeof(kMagic));
    const std::uint64_t hlen = h.size();
    out.write(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
    out.write(h.data(), static_cast<std::streamsize>(h.size()));
    for (const auto& p : params)
      out.write(reinterpret_cast<const char*>(p.var.value().data()),
                static_cast<std::streamsize>(p.var.value().numel() * sizeof(double)));
    if (!out) throw std::runtime_error(tmp + ": write failed");
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) throw std::runtime_error(path + ": rename failed");
}

namespace {

json read_header(std::ifstream& in, const std::string& path) {
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw std::runtime_error(path + ": not a checkpoint file");
  std::uint64_t hlen = 0;
  in.read(reinterpret_cast<char*>(&hlen), sizeof(hlen));
  std::string h(hlen, '\0');
  in.read(h.data(), static_cast<std::streamsize>(hlen));
  if (!in) throw std::runtime_error(path + ": truncated checkpoint header");
  return json::parse(h);
}

}  // namespace

std::string load_checkpoint(const std::string& path, ParamList& params) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error(path + ": cannot open checkpoint");
  json header = read_header(in, path);
  const std::streampos data_start = in.tellg();

  std::map<std::string, std::pair<std::vector<int>, std::int64_t>> index;
  for (const auto& e : header.at("params"))
    index[e.at("name").get<std::string>()] = {e.at("shape").get<std::vector<int>>(), e.at("offset").get<std::int64_t>()};

  for (auto& p : params) {
    auto it = index.find(p.name);
    if (it == index.end()) throw std::runtime_error(path + ": checkpoint missing parameter " + p.name);
    if (it->second.first != p.var.value().shape())
      throw std::runtime_error(path + ": shape mismatch for parameter " + p.name);
    in.seekg(data_start + static_cast<std::streamoff>(it->second.second * static_cast<std::int64_t>(sizeof(double))));
    Tensor t(it->second.first);
    in.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.numel() * sizeof(double)));
    if (!in) throw std::runtime_error(path + ": truncated checkpoint data for " + p.name);
    p.var.set_value(t);
  }
  return header.value("config", "");
}

std::string checkpoint_config_echo(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error(path + ": cannot open checkpoint");
  return read_header(in, path).value("config", "");
}

}  // namespace anonact
