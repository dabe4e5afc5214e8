#include "kbsr/networks/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <fstream>

#include "json.hpp"

static_assert(std::endian::native == std::endian::little,
              "checkpoints are little-endian float64; big-endian hosts need byte swapping");

namespace kbsr {
namespace {

using nlohmann::json;

constexpr char kMagic[] = "KBSRCKPT1\n";
constexpr std::streamsize kMagicLen = 10;

}  // namespace

void save_tensors(const std::string& path,
                  const std::vector<std::pair<std::string, const Tensor<double>*>>& items) {
  json manifest = json::array();
  for (const auto& [name, t] : items) {
    json shape = json::array();
    for (Eigen::Index d : t->shape()) shape.push_back(d);
    manifest.push_back({{"name", name}, {"dtype", "float64"}, {"shape", shape}});
  }
  const std::string text = manifest.dump();

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  out.write(kMagic, kMagicLen);
  const std::uint64_t len = text.size();
  out.write(reinterpret_cast<const char*>(&len), sizeof(len));
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& [name, t] : items)
    out.write(reinterpret_cast<const char*>(t->data()),
              static_cast<std::streamsize>(t->size()) * static_cast<std::streamsize>(sizeof(double)));
  if (!out) throw std::runtime_error("failed writing " + path);
}

std::map<std::string, Tensor<double>> load_tensors(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  char magic[kMagicLen];
  in.read(magic, kMagicLen);
  if (!in || std::string(magic, kMagicLen) != kMagic)
    throw std::runtime_error(path + " is not a tensor archive");
  std::uint64_t len = 0;
  in.read(reinterpret_cast<char*>(&len), sizeof(len));
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  if (!in) throw std::runtime_error("truncated manifest in " + path);
  const json manifest = json::parse(text);

  std::map<std::string, Tensor<double>> out;
  for (const auto& entry : manifest) {
    const std::string name = entry.at("name").get<std::string>();
    if (entry.at("dtype").get<std::string>() != "float64")
      throw std::runtime_error(path + ": unsupported dtype for " + name);
    Shape shape;
    for (const auto& d : entry.at("shape")) shape.push_back(d.get<Eigen::Index>());
    Tensor<double> t(shape);
    in.read(reinterpret_cast<char*>(t.data()),
            static_cast<std::streamsize>(t.size()) * static_cast<std::streamsize>(sizeof(double)));
    if (!in) throw std::runtime_error("truncated blob for " + name + " in " + path);
    if (!out.emplace(name, std::move(t)).second)
      throw std::runtime_error(path + ": duplicate tensor " + name);
  }
  return out;
}

void save_params(const ParamStore<double>& store, const std::string& path) {
  std::vector<std::pair<std::string, const Tensor<double>*>> items;
  items.reserve(store.count());
  for (const auto& p : store.all()) items.emplace_back(p->name, &p->value);
  save_tensors(path, items);
}

void load_params(ParamStore<double>& store, const std::string& path) {
  auto loaded = load_tensors(path);
  for (const auto& p : store.all()) {
    auto it = loaded.find(p->name);
    if (it == loaded.end()) throw std::runtime_error(path + " lacks parameter " + p->name);
    if (it->second.shape() != p->value.shape())
      throw std::runtime_error("shape mismatch for " + p->name + ": archive has " +
                               shape_str(it->second.shape()) + ", model needs " +
                               shape_str(p->value.shape()));
    p->value = std::move(it->second);
    loaded.erase(it);
  }
  if (!loaded.empty())
    throw std::runtime_error(path + " carries unknown parameter " + loaded.begin()->first);
}

}  // namespace kbsr
