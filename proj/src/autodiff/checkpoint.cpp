#include "dmad/autodiff/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <nlohmann/json.hpp>
#include <stdexcept>

#include "dmad/core/hash.hpp"

namespace dmad::ad {
namespace {

std::filesystem::path with_ext(const std::filesystem::path& stem, const char* ext) {
  auto p = stem;
  p += ext;
  return p;
}

void put_le(std::ofstream& out, double v) {
  auto bits = std::bit_cast<std::uint64_t>(v);
  char bytes[8];
  for (int i = 0; i < 8; ++i) bytes[i] = static_cast<char>((bits >> (8 * i)) & 0xff);
  out.write(bytes, 8);
}

double get_le(const unsigned char* bytes) {
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(bytes[i]) << (8 * i);
  return std::bit_cast<double>(bits);
}

}  // namespace

void save_checkpoint(const ParameterStore& store, const std::filesystem::path& stem) {
  if (stem.has_parent_path()) std::filesystem::create_directories(stem.parent_path());
  nlohmann::json manifest;
  manifest["schema_version"] = kCheckpointSchema;
  manifest["binary"] = with_ext(stem, ".bin").filename().string();
  manifest["parameters"] = nlohmann::json::array();
  std::ofstream bin(with_ext(stem, ".bin"), std::ios::binary);
  if (!bin) throw std::runtime_error("cannot write " + with_ext(stem, ".bin").string());
  std::size_t offset = 0;
  for (const auto* p : store.all()) {
    manifest["parameters"].push_back({{"name", p->name()},
                                      {"shape", {p->shape().rows, p->shape().cols}},
                                      {"offset", offset}});
    for (double v : p->value()) put_le(bin, v);
    offset += p->shape().size() * 8;
  }
  manifest["total_bytes"] = offset;
  manifest["digest"] = parameter_digest(store);
  std::ofstream(with_ext(stem, ".json")) << manifest.dump(2) << "\n";
}

void load_checkpoint(ParameterStore& store, const std::filesystem::path& stem) {
  std::ifstream mf(with_ext(stem, ".json"));
  if (!mf) throw std::runtime_error("missing checkpoint manifest " + with_ext(stem, ".json").string());
  const auto manifest = nlohmann::json::parse(mf);
  if (manifest.at("schema_version").get<int>() != kCheckpointSchema) {
    throw std::runtime_error("unsupported checkpoint schema");
  }
  std::ifstream bin(stem.parent_path() / manifest.at("binary").get<std::string>(), std::ios::binary);
  if (!bin) throw std::runtime_error("missing checkpoint binary for " + stem.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(bin)), std::istreambuf_iterator<char>());

  const auto& entries = manifest.at("parameters");
  if (entries.size() != store.count()) {
    throw ShapeError("checkpoint has " + std::to_string(entries.size()) + " parameters, model has " +
                     std::to_string(store.count()));
  }
  for (const auto& e : entries) {
    const auto name = e.at("name").get<std::string>();
    if (!store.contains(name)) throw ShapeError("checkpoint parameter not in model: " + name);
    auto& p = store.get(name);
    const Shape s{e.at("shape")[0].get<std::size_t>(), e.at("shape")[1].get<std::size_t>()};
    if (s != p.shape()) {
      throw ShapeError("checkpoint shape mismatch for " + name + ": " + s.str() + " vs " +
                       p.shape().str());
    }
    const auto offset = e.at("offset").get<std::size_t>();
    if (offset + s.size() * 8 > bytes.size()) throw std::runtime_error("checkpoint binary truncated");
    auto dst = p.mutable_value();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = get_le(bytes.data() + offset + 8 * i);
  }
}

std::string parameter_digest(const ParameterStore& store) {
  Fnv1a h;
  for (const auto* p : store.all()) {
    h.update(p->name());
    for (double v : p->value()) h.update_value(std::bit_cast<std::uint64_t>(v));
  }
  return h.hex();
}

}  // namespace dmad::ad
