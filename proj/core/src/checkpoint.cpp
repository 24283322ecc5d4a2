#include "hc/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <unordered_map>

namespace hc {

namespace {

constexpr char kMagic[8] = {'H', 'C', 'C', 'K', 'P', 'T', '0', '\0'};
constexpr std::uint32_t kVersion = 1;

template <class T>
void write_pod(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T read_pod(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw IoError("checkpoint: truncated file");
  return v;
}

void write_string(std::ostream& os, const std::string& s) {
  write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string read_string(std::istream& is) {
  const auto len = read_pod<std::uint32_t>(is);
  std::string s(len, '\0');
  is.read(s.data(), static_cast<std::streamsize>(len));
  if (!is) throw IoError("checkpoint: truncated string");
  return s;
}

template <class S>
constexpr std::uint8_t dtype_tag() {
  return std::is_same_v<S, float> ? 0 : 1;
}

void read_header_common(std::istream& is) {
  char magic[8];
  is.read(magic, 8);
  if (!is || std::memcmp(magic, kMagic, 8) != 0)
    throw IoError("checkpoint: bad magic, not a checkpoint file");
  const auto version = read_pod<std::uint32_t>(is);
  if (version != kVersion)
    throw IoError("checkpoint: unsupported version " + std::to_string(version));
}

}  // namespace

template <class S>
void save_checkpoint(const std::string& path, const Checkpoint<S>& ckpt) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("checkpoint: cannot open '" + path + "' for writing");
  os.write(kMagic, 8);
  write_pod<std::uint32_t>(os, kVersion);
  write_pod<std::uint8_t>(os, dtype_tag<S>());
  write_string(os, model_config_to_json(ckpt.config));
  write_pod<std::uint64_t>(os, ckpt.step);
  for (auto w : ckpt.rng.s) write_pod<std::uint64_t>(os, w);
  write_pod<std::uint8_t>(os, ckpt.rng.has_cached_normal ? 1 : 0);
  write_pod<double>(os, ckpt.rng.cached_normal);
  write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(ckpt.tensors.size()));
  for (const auto& [name, t] : ckpt.tensors) {
    write_string(os, name);
    write_pod<std::uint8_t>(os, dtype_tag<S>());
    write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(t.shape().size()));
    for (auto d : t.shape()) write_pod<std::int64_t>(os, d);
    os.write(reinterpret_cast<const char*>(t.value().data()),
             static_cast<std::streamsize>(t.numel() * static_cast<std::int64_t>(sizeof(S))));
  }
  if (!os) throw IoError("checkpoint: write failed for '" + path + "'");
}

template <class S>
Checkpoint<S> load_checkpoint_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("checkpoint: cannot open '" + path + "'");
  read_header_common(is);
  const auto dtype = read_pod<std::uint8_t>(is);
  if (dtype != dtype_tag<S>())
    throw IoError("checkpoint: scalar kind mismatch (file has " +
                  std::string(dtype == 0 ? "f32" : "f64") + ")");
  Checkpoint<S> ckpt;
  ckpt.config = model_config_from_json(read_string(is));
  ckpt.step = read_pod<std::uint64_t>(is);
  for (auto& w : ckpt.rng.s) w = read_pod<std::uint64_t>(is);
  ckpt.rng.has_cached_normal = read_pod<std::uint8_t>(is) != 0;
  ckpt.rng.cached_normal = read_pod<double>(is);
  const auto count = read_pod<std::uint32_t>(is);
  ckpt.tensors.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = read_string(is);
    const auto rec_dtype = read_pod<std::uint8_t>(is);
    if (rec_dtype != dtype_tag<S>()) throw IoError("checkpoint: mixed dtypes in records");
    const auto ndim = read_pod<std::uint32_t>(is);
    Shape shape(ndim);
    for (auto& d : shape) d = read_pod<std::int64_t>(is);
    const std::int64_t numel = shape_numel(shape);
    std::vector<S> data(static_cast<std::size_t>(numel));
    is.read(reinterpret_cast<char*>(data.data()),
            static_cast<std::streamsize>(numel * static_cast<std::int64_t>(sizeof(S))));
    if (!is) throw IoError("checkpoint: truncated tensor data for '" + name + "'");
    ckpt.tensors.emplace_back(std::move(name),
                              Tensor<S>::from_data(std::move(shape), std::move(data)));
  }
  return ckpt;
}

int checkpoint_dtype(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("checkpoint: cannot open '" + path + "'");
  read_header_common(is);
  return static_cast<int>(read_pod<std::uint8_t>(is));
}

ModelConfig checkpoint_config(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("checkpoint: cannot open '" + path + "'");
  read_header_common(is);
  read_pod<std::uint8_t>(is);
  return model_config_from_json(read_string(is));
}

template <class S>
RestoredModel<S> restore_model(const Checkpoint<S>& ckpt) {
  RestoredModel<S> out{Model<S>(ckpt.config), ckpt.step, ckpt.rng, {}};
  std::unordered_map<std::string, Tensor<S>> by_name;
  for (const auto& [name, t] : ckpt.tensors) by_name.emplace(name, t);

  for (auto& [name, param] : out.model.named_params()) {
    auto it = by_name.find(name);
    if (it == by_name.end())
      throw ConfigError("checkpoint: config mismatch, tensor '" + name + "' missing");
    if (it->second.shape() != param.shape())
      throw ConfigError("checkpoint: config mismatch, tensor '" + name + "' has shape " +
                        shape_str(it->second.shape()) + ", expected " +
                        shape_str(param.shape()));
    std::copy(it->second.value().begin(), it->second.value().end(), param.value().begin());
    by_name.erase(it);
  }
  for (const auto& [name, t] : ckpt.tensors)
    if (by_name.count(name)) out.extra.emplace_back(name, t);
  return out;
}

template void save_checkpoint(const std::string&, const Checkpoint<float>&);
template void save_checkpoint(const std::string&, const Checkpoint<double>&);
template Checkpoint<float> load_checkpoint_file(const std::string&);
template Checkpoint<double> load_checkpoint_file(const std::string&);
template RestoredModel<float> restore_model(const Checkpoint<float>&);
template RestoredModel<double> restore_model(const Checkpoint<double>&);

}  // namespace hc
