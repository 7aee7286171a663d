// Copyright 2026 The qacpt Authors
// SPDX-License-Identifier: Apache-2.0

#include "qac/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>
#include <string_view>
#include <utility>
#include <vector>

#include "qac/error.hpp"

namespace qac {

static_assert(std::endian::native == std::endian::little, "checkpoint IO assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'Q', 'A', 'C', 'C', 'K', 'P', 'T', '\0'};

std::uint64_t fnv1a(const std::uint8_t* data, std::size_t size) {
  std::uint64_t h = 1469598103934665603ULL;
  for (std::size_t i = 0; i < size; ++i) {
    h ^= data[i];
    h *= 1099511628211ULL;
  }
  return h;
}

class Writer {
 public:
  template <typename V>
  void put(V value) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(&value);
    bytes_.insert(bytes_.end(), p, p + sizeof(V));
  }
  void put_string(std::string_view s) {
    put(static_cast<std::uint32_t>(s.size()));
    bytes_.insert(bytes_.end(), s.begin(), s.end());
  }
  void put_raw(const void* data, std::size_t size) {
    const auto* p = static_cast<const std::uint8_t*>(data);
    bytes_.insert(bytes_.end(), p, p + size);
  }
  std::vector<std::uint8_t>& bytes() { return bytes_; }

 private:
  std::vector<std::uint8_t> bytes_;
};

class Reader {
 public:
  Reader(const std::uint8_t* data, std::size_t size, std::string path) : data_(data), size_(size), path_(std::move(path)) {}

  template <typename V>
  V get(const char* what) {
    need(sizeof(V), what);
    V value;
    std::memcpy(&value, data_ + pos_, sizeof(V));
    pos_ += sizeof(V);
    return value;
  }
  std::string get_string(const char* what) {
    const auto n = get<std::uint32_t>(what);
    need(n, what);
    std::string s(reinterpret_cast<const char*>(data_ + pos_), n);
    pos_ += n;
    return s;
  }
  const std::uint8_t* take(std::size_t n, const char* what) {
    need(n, what);
    const auto* p = data_ + pos_;
    pos_ += n;
    return p;
  }
  std::size_t remaining() const { return size_ - pos_; }

 private:
  void need(std::size_t n, const char* what) const {
    if (size_ - pos_ < n) throw LoadError("checkpoint " + path_ + ": truncated while reading " + what);
  }
  const std::uint8_t* data_;
  std::size_t size_;
  std::size_t pos_ = 0;
  std::string path_;
};

std::vector<std::pair<std::string, std::int64_t>> config_fields(const ModelConfig& c, ModelParts parts) {
  auto i = [](auto v) { return static_cast<std::int64_t>(v); };
  return {
      {"vocab_size", i(c.vocab_size)},
      {"hidden_dim", i(c.hidden_dim)},
      {"num_heads", i(c.num_heads)},
      {"encoder_layers", i(c.encoder_layers)},
      {"tap_layer", i(c.tap_layer)},
      {"decoder_layers", i(c.decoder_layers)},
      {"ffn_dim", i(c.ffn_dim)},
      {"max_seq_len", i(c.max_seq_len)},
      {"tie_weights", i(c.tie_weights)},
      {"special.pad", i(c.special.pad)},
      {"special.unk", i(c.special.unk)},
      {"special.cls", i(c.special.cls)},
      {"special.sep", i(c.special.sep)},
      {"special.mask", i(c.special.mask)},
      {"special.first_regular", i(c.special.first_regular)},
      {"parts.condenser_head", i(parts.condenser_head)},
      {"parts.cotmae_decoder", i(parts.cotmae_decoder)},
  };
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("checkpoint " + path.string() + ": cannot open for reading");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}


CheckpointInfo parse_header(Reader& r, const std::string& path) {
  const auto* magic = r.take(sizeof(kMagic), "magic");
  if (std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) throw LoadError("checkpoint " + path + ": bad magic string");
  CheckpointInfo info;
  info.version = r.get<std::uint32_t>("version");
  if (info.version != kCheckpointVersion) {
    throw LoadError("checkpoint " + path + ": field 'version' is " + std::to_string(info.version) + ", expected " +
                    std::to_string(kCheckpointVersion));
  }
  info.value_bytes = r.get<std::uint32_t>("value_bytes");
  if (info.value_bytes != 4 && info.value_bytes != 8) {
    throw LoadError("checkpoint " + path + ": field 'value_bytes' is " + std::to_string(info.value_bytes));
  }
  const auto count = r.get<std::uint32_t>("field count");
  std::map<std::string, std::int64_t> fields;
  for (std::uint32_t i = 0; i < count; ++i) {
    auto name = r.get_string("config field name");
    fields[name] = r.get<std::int64_t>("config field value");
  }
  const auto expected = config_fields(ModelConfig{}, ModelParts{});
  for (const auto& [name, unused] : expected) {
    if (!fields.contains(name)) throw LoadError("checkpoint " + path + ": missing config field '" + name + "'");
  }
  for (const auto& [name, unused] : fields) {
    bool known = false;
    for (const auto& e : expected) known = known || e.first == name;
    if (!known) throw LoadError("checkpoint " + path + ": unknown config field '" + name + "'");
  }
  auto& c = info.config;
  auto get = [&](const char* name) {
    const auto v = fields.at(name);
    if (v < 0) throw LoadError("checkpoint " + path + ": config field '" + name + "' is negative");
    return v;
  };
  c.vocab_size = static_cast<std::size_t>(get("vocab_size"));
  c.hidden_dim = static_cast<std::size_t>(get("hidden_dim"));
  c.num_heads = static_cast<std::size_t>(get("num_heads"));
  c.encoder_layers = static_cast<std::size_t>(get("encoder_layers"));
  c.tap_layer = static_cast<std::size_t>(get("tap_layer"));
  c.decoder_layers = static_cast<std::size_t>(get("decoder_layers"));
  c.ffn_dim = static_cast<std::size_t>(get("ffn_dim"));
  c.max_seq_len = static_cast<std::size_t>(get("max_seq_len"));
  c.tie_weights = get("tie_weights") != 0;
  c.special.pad = static_cast<TokenId>(get("special.pad"));
  c.special.unk = static_cast<TokenId>(get("special.unk"));
  c.special.cls = static_cast<TokenId>(get("special.cls"));
  c.special.sep = static_cast<TokenId>(get("special.sep"));
  c.special.mask = static_cast<TokenId>(get("special.mask"));
  c.special.first_regular = static_cast<TokenId>(get("special.first_regular"));
  info.parts.condenser_head = get("parts.condenser_head") != 0;
  info.parts.cotmae_decoder = get("parts.cotmae_decoder") != 0;
  try {
    c.validate();
  } catch (const ConfigError& e) {
    throw LoadError("checkpoint " + path + ": invalid config: " + e.what());
  }
  return info;
}

Reader open_verified(const std::vector<std::uint8_t>& bytes, const std::string& path) {
  if (bytes.size() < sizeof(kMagic) + sizeof(std::uint64_t)) throw LoadError("checkpoint " + path + ": truncated file");
  const std::size_t body = bytes.size() - sizeof(std::uint64_t);
  std::uint64_t stored;
  std::memcpy(&stored, bytes.data() + body, sizeof(stored));
  Reader r(bytes.data(), body, path);
  if (std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) throw LoadError("checkpoint " + path + ": bad magic string");
  if (fnv1a(bytes.data(), body) != stored) {
    throw LoadError("checkpoint " + path + ": checksum mismatch (file is truncated or corrupt)");
  }
  return r;
}

}  // namespace

template <typename T>
void save_checkpoint(const Model<T>& model, const std::filesystem::path& path, bool include_heads) {
  const ModelParts parts = include_heads ? model.parts() : ModelParts{};
  Writer w;
  w.put_raw(kMagic, sizeof(kMagic));
  w.put(kCheckpointVersion);
  w.put(static_cast<std::uint32_t>(sizeof(T)));
  const auto fields = config_fields(model.config(), parts);
  w.put(static_cast<std::uint32_t>(fields.size()));
  for (const auto& [name, value] : fields) {
    w.put_string(name);
    w.put(value);
  }
  std::vector<NamedParameter<T>> params;
  for (auto& p : model.named_parameters()) {
    const bool head = p.name.starts_with("condenser_head.") || p.name.starts_with("cotmae_decoder.");
    if (!head || include_heads) params.push_back(p);
  }
  w.put(static_cast<std::uint32_t>(params.size()));
  for (const auto& p : params) {
    w.put_string(p.name);
    const auto& shape = p.tensor.shape();
    w.put(static_cast<std::uint32_t>(shape.size()));
    for (auto s : shape) w.put(static_cast<std::uint64_t>(s));
    const auto data = p.tensor.data();
    w.put_raw(data.data(), data.size() * sizeof(T));
  }
  auto& bytes = w.bytes();
  const auto checksum = fnv1a(bytes.data(), bytes.size());
  w.put(checksum);

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("checkpoint " + path.string() + ": cannot open for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("checkpoint " + path.string() + ": write failed");
}

CheckpointInfo read_checkpoint_info(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  auto r = open_verified(bytes, path.string());
  return parse_header(r, path.string());
}

template <typename T>
Model<T> load_checkpoint(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  const auto name = path.string();
  auto r = open_verified(bytes, name);
  const auto info = parse_header(r, name);

  Model<T> model(info.config, info.parts, 0);
  std::map<std::string, Tensor<T>> slots;
  for (auto& p : model.named_parameters()) slots.emplace(p.name, p.tensor);

  const auto count = r.get<std::uint32_t>("parameter count");
  if (count != slots.size()) {
    throw LoadError("checkpoint " + name + ": holds " + std::to_string(count) + " parameters, config implies " +
                    std::to_string(slots.size()));
  }
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto pname = r.get_string("parameter name");
    auto it = slots.find(pname);
    if (it == slots.end()) throw LoadError("checkpoint " + name + ": unexpected parameter '" + pname + "'");
    const auto ndim = r.get<std::uint32_t>("parameter rank");
    Shape shape;
    for (std::uint32_t k = 0; k < ndim; ++k) shape.push_back(static_cast<std::size_t>(r.get<std::uint64_t>("dimension")));
    auto& target = it->second;
    if (shape != target.shape()) {
      throw LoadError("checkpoint " + name + ": parameter '" + pname + "' has shape " + shape_string(shape) +
                      ", config implies " + shape_string(target.shape()));
    }
    const std::size_t n = target.numel();
    const auto* raw = r.take(n * info.value_bytes, "parameter values");
    auto dst = target.mutable_data();
    if (info.value_bytes == sizeof(T)) {
      std::memcpy(dst.data(), raw, n * sizeof(T));
    } else if (info.value_bytes == 4) {
      for (std::size_t j = 0; j < n; ++j) {
        float v;
        std::memcpy(&v, raw + j * 4, 4);
        dst[j] = static_cast<T>(v);
      }
    } else {
      for (std::size_t j = 0; j < n; ++j) {
        double v;
        std::memcpy(&v, raw + j * 8, 8);
        dst[j] = static_cast<T>(v);
      }
    }
    slots.erase(it);
  }
  if (r.remaining() != 0) throw LoadError("checkpoint " + name + ": trailing bytes after parameters");
  return model;
}

template <typename T>
Model<T> load_checkpoint(const std::filesystem::path& path, const ModelConfig& expected) {
  const auto info = read_checkpoint_info(path);
  const auto stored = config_fields(info.config, {});
  const auto wanted = config_fields(expected, {});
  for (std::size_t i = 0; i < stored.size(); ++i) {
    if (stored[i].second != wanted[i].second) {
      throw LoadError("checkpoint " + path.string() + ": config field '" + stored[i].first + "' is " +
                      std::to_string(stored[i].second) + ", expected " + std::to_string(wanted[i].second));
    }
  }
  return load_checkpoint<T>(path);
}

template void save_checkpoint<float>(const Model<float>&, const std::filesystem::path&, bool);
template void save_checkpoint<double>(const Model<double>&, const std::filesystem::path&, bool);
template Model<float> load_checkpoint<float>(const std::filesystem::path&);
template Model<double> load_checkpoint<double>(const std::filesystem::path&);
template Model<float> load_checkpoint<float>(const std::filesystem::path&, const ModelConfig&);
template Model<double> load_checkpoint<double>(const std::filesystem::path&, const ModelConfig&);

}  // namespace qac
