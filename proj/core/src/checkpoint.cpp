#include "biounet/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <type_traits>

#include "biounet/config.hpp"
#include "biounet/hash.hpp"

namespace biounet {

using nlohmann::json;

namespace {

constexpr char kMagic[8] = {'B', 'I', 'O', 'U', 'N', 'E', 'T', '1'};
constexpr std::array<const char*, 2> kDomainNames{"image", "heatmap"};

template <typename T>
constexpr const char* dtype_name() {
  return std::is_same_v<T, float> ? "f32" : "f64";
}

template <typename T>
CheckpointEntry make_entry(std::string name, Shape shape, std::span<const T> values) {
  CheckpointEntry e{std::move(name), shape, {}};
  e.values.assign(values.begin(), values.end());
  return e;
}

CheckpointEntry scalar_entry(std::string name, double v) { return {std::move(name), {1, 1, 1, 1}, {v}}; }

Shape vector_shape(std::size_t n) { return {1, n, 1, 1}; }

void append(std::vector<std::uint8_t>& out, const void* p, std::size_t n) {
  const auto* b = static_cast<const std::uint8_t*>(p);
  out.insert(out.end(), b, b + n);
}

}  // namespace

const CheckpointEntry* Checkpoint::find(const std::string& name) const {
  for (const auto& e : entries)
    if (e.name == name) return &e;
  return nullptr;
}

template <typename T>
Checkpoint capture(nn::BioUNet<T>& model) {
  Checkpoint ck;
  ck.model = model.config();
  ck.dtype = dtype_name<T>();
  for (auto& ref : model.parameters()) {
    const Parameter<T>& p = *ref.param;
    ck.entries.push_back(make_entry<T>(ref.name, p.shape(), p.value.data()));
    ck.entries.push_back(make_entry<T>(ref.name + "@m", p.shape(), std::span<const T>(p.first_moment)));
    ck.entries.push_back(make_entry<T>(ref.name + "@v", p.shape(), std::span<const T>(p.second_moment)));
    ck.entries.push_back(scalar_entry(ref.name + "@step", static_cast<double>(p.step)));
  }
  for (auto& ref : model.norms()) {
    for (std::size_t d = 0; d < 2; ++d) {
      const auto& s = (*ref.stats)[d];
      const std::string base = ref.name + "@" + kDomainNames[d];
      ck.entries.push_back(make_entry<T>(base + ".mean", vector_shape(s.mean.size()), std::span<const T>(s.mean)));
      ck.entries.push_back(make_entry<T>(base + ".var", vector_shape(s.var.size()), std::span<const T>(s.var)));
      ck.entries.push_back(scalar_entry(base + ".init", s.initialized ? 1.0 : 0.0));
    }
  }
  return ck;
}

template <typename T>
void restore(const Checkpoint& ck, nn::BioUNet<T>& model) {
  if (ck.dtype != dtype_name<T>()) {
    throw CheckpointError("checkpoint precision " + ck.dtype + " does not match model precision " +
                          dtype_name<T>());
  }
  if (!(ck.model == model.config())) {
    throw CheckpointError("checkpoint architecture " + to_json(ck.model).dump() + " does not match model " +
                          to_json(model.config()).dump());
  }
  auto need = [&](const std::string& name, std::size_t numel) -> const CheckpointEntry& {
    const CheckpointEntry* e = ck.find(name);
    if (!e) throw CheckpointError("checkpoint is missing entry " + name);
    if (e->values.size() != numel) {
      throw CheckpointError("checkpoint entry " + name + " has " + std::to_string(e->values.size()) +
                            " values, expected " + std::to_string(numel));
    }
    return *e;
  };
  for (auto& ref : model.parameters()) {
    Parameter<T>& p = *ref.param;
    const auto& v = need(ref.name, p.numel());
    if (!(v.shape == p.shape())) throw CheckpointError("checkpoint entry " + ref.name + " has shape " + v.shape.str());
    std::copy(v.values.begin(), v.values.end(), p.value.data().begin());
    const auto& m = need(ref.name + "@m", p.numel());
    const auto& s = need(ref.name + "@v", p.numel());
    p.first_moment.assign(m.values.begin(), m.values.end());
    p.second_moment.assign(s.values.begin(), s.values.end());
    p.step = static_cast<std::int64_t>(need(ref.name + "@step", 1).values[0]);
    p.value.clear_grad();
  }
  for (auto& ref : model.norms()) {
    for (std::size_t d = 0; d < 2; ++d) {
      auto& s = (*ref.stats)[d];
      const std::string base = ref.name + "@" + kDomainNames[d];
      const auto& mean = need(base + ".mean", s.mean.size());
      const auto& var = need(base + ".var", s.var.size());
      s.mean.assign(mean.values.begin(), mean.values.end());
      s.var.assign(var.values.begin(), var.values.end());
      s.initialized = need(base + ".init", 1).values[0] != 0.0;
    }
  }
}

template <typename T>
nn::BioUNet<T> instantiate(const Checkpoint& ck) {
  nn::BioUNet<T> model(ck.model, ck.seed);
  restore(ck, model);
  return model;
}

std::vector<std::uint8_t> serialize(const Checkpoint& ck) {
  if (ck.dtype != "f32" && ck.dtype != "f64") throw CheckpointError("unknown dtype " + ck.dtype);
  const bool f32 = ck.dtype == "f32";
  json header;
  header["model"] = to_json(ck.model);
  header["dtype"] = ck.dtype;
  header["selection_metric"] = ck.selection_metric;
  header["selection_definition"] = ck.selection_definition;
  header["epoch"] = ck.epoch;
  header["seed"] = ck.seed;
  header["meta"] = ck.meta;
  json entries = json::array();
  for (const auto& e : ck.entries) {
    entries.push_back({{"name", e.name}, {"shape", {e.shape.n, e.shape.c, e.shape.h, e.shape.w}}});
  }
  header["entries"] = std::move(entries);
  json blobs = json::array();
  for (const auto& [name, bytes] : ck.blobs) blobs.push_back({{"name", name}, {"bytes", bytes.size()}});
  header["blobs"] = std::move(blobs);
  const std::string text = header.dump();

  std::vector<std::uint8_t> out;
  append(out, kMagic, sizeof(kMagic));
  const std::uint32_t version = Checkpoint::kFormatVersion;
  append(out, &version, sizeof(version));
  const std::uint64_t len = text.size();
  append(out, &len, sizeof(len));
  append(out, text.data(), text.size());
  for (const auto& e : ck.entries) {
    if (e.values.size() != e.shape.numel()) throw CheckpointError("entry " + e.name + " length does not match shape");
    if (f32) {
      for (double v : e.values) {
        const float f = static_cast<float>(v);
        append(out, &f, sizeof(f));
      }
    } else {
      append(out, e.values.data(), e.values.size() * sizeof(double));
    }
  }
  for (const auto& [name, bytes] : ck.blobs) append(out, bytes.data(), bytes.size());
  return out;
}

Checkpoint deserialize(const std::vector<std::uint8_t>& bytes) {
  std::size_t pos = 0;
  auto take = [&](void* dst, std::size_t n) {
    if (pos + n > bytes.size()) throw CheckpointError("checkpoint is truncated");
    std::memcpy(dst, bytes.data() + pos, n);
    pos += n;
  };
  char magic[8];
  take(magic, sizeof(magic));
  if (std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) throw CheckpointError("not a checkpoint (bad magic)");
  std::uint32_t version = 0;
  take(&version, sizeof(version));
  if (version != Checkpoint::kFormatVersion) {
    throw CheckpointError("unsupported checkpoint format version " + std::to_string(version));
  }
  std::uint64_t len = 0;
  take(&len, sizeof(len));
  if (pos + len > bytes.size()) throw CheckpointError("checkpoint header is truncated");
  json header;
  try {
    header = json::parse(bytes.begin() + static_cast<std::ptrdiff_t>(pos),
                         bytes.begin() + static_cast<std::ptrdiff_t>(pos + len));
  } catch (const json::exception& e) {
    throw CheckpointError(std::string("checkpoint header is not valid JSON: ") + e.what());
  }
  pos += len;

  Checkpoint ck;
  try {
    ck.model = model_config_from_json(header.at("model"));
    ck.dtype = header.at("dtype").get<std::string>();
    ck.selection_metric = header.at("selection_metric").get<double>();
    ck.selection_definition = header.at("selection_definition").get<std::string>();
    ck.epoch = header.at("epoch").get<std::int64_t>();
    ck.seed = header.at("seed").get<std::uint64_t>();
    ck.meta = header.at("meta");
    const bool f32 = ck.dtype == "f32";
    if (!f32 && ck.dtype != "f64") throw CheckpointError("unknown dtype " + ck.dtype);
    for (const auto& je : header.at("entries")) {
      CheckpointEntry e;
      e.name = je.at("name").get<std::string>();
      const auto& s = je.at("shape");
      e.shape = {s.at(0).get<std::size_t>(), s.at(1).get<std::size_t>(), s.at(2).get<std::size_t>(),
                 s.at(3).get<std::size_t>()};
      e.values.resize(e.shape.numel());
      for (auto& v : e.values) {
        if (f32) {
          float f;
          take(&f, sizeof(f));
          v = f;
        } else {
          take(&v, sizeof(v));
        }
      }
      ck.entries.push_back(std::move(e));
    }
    for (const auto& jb : header.at("blobs")) {
      std::vector<std::uint8_t> blob(jb.at("bytes").get<std::size_t>());
      take(blob.data(), blob.size());
      ck.blobs.emplace(jb.at("name").get<std::string>(), std::move(blob));
    }
  } catch (const json::exception& e) {
    throw CheckpointError(std::string("malformed checkpoint header: ") + e.what());
  } catch (const ConfigError& e) {
    throw CheckpointError(std::string("malformed model description: ") + e.what());
  }
  if (pos != bytes.size()) throw CheckpointError("checkpoint has trailing bytes");
  return ck;
}

void save(const Checkpoint& ck, const std::string& path) {
  const auto bytes = serialize(ck);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write checkpoint " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing checkpoint " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize(bytes);
}

std::uint64_t content_hash(const Checkpoint& ck) {
  const auto bytes = serialize(ck);
  return hash_bytes(bytes.data(), bytes.size());
}

template <typename T>
FrozenEncoder<T> clone_to_e3(const nn::Encoder<T>& architecture, const Checkpoint& ck) {
  if (!(architecture.config() == ck.model.encoder)) {
    throw CheckpointError("checkpoint encoder " + to_json(ck.model).dump() +
                          " does not match the E3 architecture");
  }
  nn::BioUNet<T> model = instantiate<T>(ck);
  FrozenEncoder<T> e3{std::move(model.encoder()), std::move(model.classifier()), ck.selection_metric,
                      content_hash(ck)};
  e3.encoder.set_trainable(false);
  e3.head.set_trainable(false);
  return e3;
}

template Checkpoint capture(nn::BioUNet<float>&);
template Checkpoint capture(nn::BioUNet<double>&);
template void restore(const Checkpoint&, nn::BioUNet<float>&);
template void restore(const Checkpoint&, nn::BioUNet<double>&);
template nn::BioUNet<float> instantiate(const Checkpoint&);
template nn::BioUNet<double> instantiate(const Checkpoint&);
template FrozenEncoder<float> clone_to_e3(const nn::Encoder<float>&, const Checkpoint&);
template FrozenEncoder<double> clone_to_e3(const nn::Encoder<double>&, const Checkpoint&);

}  // namespace biounet
