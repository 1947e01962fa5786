#include "biounet/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "biounet/errors.hpp"
#include "biounet/image_io.hpp"
#include "biounet/ops.hpp"
#include "biounet/random.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace biounet::data {

std::size_t attribute_index(const std::string& name) {
  for (std::size_t j = 0; j < kAttributeCount; ++j)
    if (name == kAttributeNames[j]) return j;
  throw ContractError("unknown attribute '" + name + "'");
}

const char* to_string(Split split) {
  switch (split) {
    case Split::train:
      return "train";
    case Split::validation:
      return "validation";
    case Split::test:
      return "test";
  }
  return "?";
}

Split parse_split(const std::string& text) {
  for (auto s : {Split::train, Split::validation, Split::test})
    if (text == to_string(s)) return s;
  throw ContractError("unknown split '" + text + "'");
}

bool Sample::present(std::size_t attribute) const {
  const auto& m = masks.at(attribute);
  return std::any_of(m.begin(), m.end(), [](float v) { return v > 0.5f; });
}

std::array<bool, kAttributeCount> Sample::presence() const {
  std::array<bool, kAttributeCount> p{};
  for (std::size_t j = 0; j < kAttributeCount; ++j) p[j] = present(j);
  return p;
}

json NormalizationStats::to_json() const {
  return json{{"mean", mean}, {"stddev", stddev}, {"valid", valid}, {"guarded_channels", guarded_channels}};
}

NormalizationStats NormalizationStats::from_json(const json& j) {
  NormalizationStats s;
  for (std::size_t c = 0; c < 3; ++c) {
    s.mean[c] = j.at("mean").at(c).get<double>();
    s.stddev[c] = j.at("stddev").at(c).get<double>();
  }
  s.valid = j.at("valid").get<bool>();
  if (j.contains("guarded_channels")) s.guarded_channels = j.at("guarded_channels").get<std::vector<std::size_t>>();
  return s;
}

std::vector<std::size_t> Dataset::indices(Split split) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < splits.size(); ++i)
    if (splits[i] == split) out.push_back(i);
  return out;
}

std::vector<Split> stratified_split(const std::vector<int>& labels, std::uint64_t seed) {
  std::vector<Split> out(labels.size(), Split::train);
  for (int cls : {0, 1}) {
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < labels.size(); ++i)
      if (labels[i] == cls) members.push_back(i);
    Rng rng = Rng::derive(seed, {0x73706c6974ULL, static_cast<std::uint64_t>(cls)});
    rng.shuffle(members);
    const std::size_t n = members.size();
    const auto n_val = static_cast<std::size_t>(std::llround(0.15 * static_cast<double>(n)));
    const auto n_test = static_cast<std::size_t>(std::llround(0.15 * static_cast<double>(n)));
    for (std::size_t k = 0; k < n; ++k) {
      if (k < n_val) {
        out[members[k]] = Split::validation;
      } else if (k < n_val + n_test) {
        out[members[k]] = Split::test;
      }
    }
  }
  return out;
}

NormalizationStats compute_stats(const Dataset& dataset) {
  const auto train = dataset.indices(Split::train);
  if (train.empty()) throw ContractError("normalize: the training split is empty");
  const std::size_t P = dataset.size * dataset.size;
  NormalizationStats s;
  for (std::size_t c = 0; c < 3; ++c) {
    double sum = 0, sq = 0;
    for (auto i : train) {
      const float* p = dataset.samples[i].image.data() + c * P;
      for (std::size_t k = 0; k < P; ++k) sum += p[k];
    }
    const double count = static_cast<double>(train.size() * P);
    const double mean = sum / count;
    for (auto i : train) {
      const float* p = dataset.samples[i].image.data() + c * P;
      for (std::size_t k = 0; k < P; ++k) sq += (p[k] - mean) * (p[k] - mean);
    }
    double var = sq / count;
    if (var < kVarianceGuard) {
      var = kVarianceGuard;
      s.guarded_channels.push_back(c);
    }
    s.mean[c] = mean;
    s.stddev[c] = std::sqrt(var);
  }
  s.valid = true;
  return s;
}

void apply_stats(const NormalizationStats& stats, std::span<float> planar_rgb) {
  if (!stats.valid) throw StateError("normalization statistics were never computed");
  const std::size_t P = planar_rgb.size() / 3;
  for (std::size_t c = 0; c < 3; ++c) {
    const double m = stats.mean[c], inv = 1.0 / stats.stddev[c];
    for (std::size_t k = 0; k < P; ++k) {
      float& v = planar_rgb[c * P + k];
      v = static_cast<float>((v - m) * inv);
    }
  }
}

void normalize(Dataset& dataset) {
  if (dataset.normalized) throw StateError("dataset is already normalized");
  if (dataset.samples.empty()) throw ContractError("normalize: empty dataset");
  dataset.stats = compute_stats(dataset);
  for (auto& s : dataset.samples) apply_stats(dataset.stats, s.image);
  dataset.normalized = true;
}

template <typename T>
Tensor<T> image_batch(const std::vector<const std::vector<float>*>& images, std::size_t size) {
  const std::size_t len = 3 * size * size;
  Tensor<T> out({images.size(), 3, size, size});
  for (std::size_t n = 0; n < images.size(); ++n) {
    if (images[n]->size() != len) throw DimensionError("image_batch: image size does not match");
    std::copy(images[n]->begin(), images[n]->end(), out.ptr() + n * len);
  }
  return out;
}

template Tensor<float> image_batch(const std::vector<const std::vector<float>*>&, std::size_t);
template Tensor<double> image_batch(const std::vector<const std::vector<float>*>&, std::size_t);

std::vector<float> resize_planar(std::span<const float> planar, std::size_t channels, std::size_t h, std::size_t w,
                                 std::size_t out_h, std::size_t out_w) {
  if (planar.size() != channels * h * w) throw DimensionError("resize_planar: buffer does not match extent");
  if (h == out_h && w == out_w) return std::vector<float>(planar.begin(), planar.end());
  std::vector<float> out;
  out.reserve(channels * out_h * out_w);
  for (std::size_t c = 0; c < channels; ++c) {
    auto plane = ops::resize_bilinear<float>(planar.subspan(c * h * w, h * w), h, w, out_h, out_w);
    out.insert(out.end(), plane.begin(), plane.end());
  }
  return out;
}

// ---- files -------------------------------------------------------------

namespace {

void ensure_dir(const fs::path& p) {
  std::error_code ec;
  fs::create_directories(p, ec);
  if (ec || !fs::is_directory(p)) throw IoError("cannot create directory " + p.string());
}

json read_json(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw IoError("cannot open " + p.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw IoError(p.string() + " is not valid JSON: " + e.what());
  }
}

void write_json(const fs::path& p, const json& j) {
  std::ofstream out(p, std::ios::trunc);
  if (!out) throw IoError("cannot write " + p.string());
  out << j.dump(2) << "\n";
  if (!out) throw IoError("failed writing " + p.string());
}

std::string mask_name(const std::string& id, std::size_t j) {
  return id + "_attribute_" + kAttributeNames[j] + ".pgm";
}

std::vector<float> read_image(const fs::path& p, std::size_t channels, std::size_t size) {
  auto img = io::read_netpbm(p.string());
  if (img.channels != channels) throw IoError(p.string() + ": unexpected channel count");
  return resize_planar(img.data, channels, img.h, img.w, size, size);
}

}  // namespace

std::vector<std::string> export_dataset(const Dataset& d, const std::string& dir) {
  if (d.normalized) throw StateError("export_dataset: images are normalized; export raw images");
  const fs::path root(dir);
  ensure_dir(root / "images");
  ensure_dir(root / "masks");
  std::vector<std::string> written;
  json samples = json::array();
  for (std::size_t i = 0; i < d.samples.size(); ++i) {
    const Sample& s = d.samples[i];
    const std::string img_rel = "images/" + s.id + ".ppm";
    io::write_ppm((root / img_rel).string(), s.image, d.size, d.size);
    written.push_back(img_rel);
    json presence = json::array();
    for (std::size_t j = 0; j < kAttributeCount; ++j) {
      const std::string mask_rel = "masks/" + mask_name(s.id, j);
      io::write_pgm((root / mask_rel).string(), s.masks[j], d.size, d.size);
      written.push_back(mask_rel);
      presence.push_back(s.present(j) ? 1 : 0);
    }
    samples.push_back({{"id", s.id},
                       {"diagnosis", s.diagnosis},
                       {"presence", presence},
                       {"split", to_string(d.splits.at(i))}});
  }
  json manifest{{"schema", "biounet.dataset"},
                {"schema_version", 1},
                {"role", "labeled"},
                {"size", d.size},
                {"attributes", kAttributeNames},
                {"normalization", (d.stats.valid ? d.stats : compute_stats(d)).to_json()},
                {"provenance", d.provenance},
                {"samples", samples}};
  write_json(root / "dataset.json", manifest);
  written.push_back("dataset.json");
  return written;
}

std::vector<std::string> export_unlabeled(const UnlabeledDataset& d, const std::string& dir) {
  const fs::path root(dir);
  ensure_dir(root / "images");
  std::vector<std::string> written;
  json ids = json::array();
  for (const auto& s : d.samples) {
    const std::string rel = "images/" + s.id + ".ppm";
    io::write_ppm((root / rel).string(), s.image, d.size, d.size);
    written.push_back(rel);
    ids.push_back(s.id);
  }
  json manifest{{"schema", "biounet.dataset"}, {"schema_version", 1},       {"role", "unlabeled"},
                {"size", d.size},              {"provenance", d.provenance}, {"samples", ids}};
  write_json(root / "dataset.json", manifest);
  written.push_back("dataset.json");
  return written;
}

Dataset import_dataset(const std::string& dir) {
  const fs::path root(dir);
  const json m = read_json(root / "dataset.json");
  Dataset d;
  try {
    if (m.at("role").get<std::string>() != "labeled") throw IoError(dir + " does not hold a labeled dataset");
    d.size = m.at("size").get<std::size_t>();
    d.stats = NormalizationStats::from_json(m.at("normalization"));
    d.provenance = m.value("provenance", json::object());
    for (const auto& js : m.at("samples")) {
      Sample s;
      s.id = js.at("id").get<std::string>();
      s.diagnosis = js.at("diagnosis").get<int>();
      s.image = read_image(root / "images" / (s.id + ".ppm"), 3, d.size);
      for (std::size_t j = 0; j < kAttributeCount; ++j) {
        const fs::path mp = root / "masks" / mask_name(s.id, j);
        if (fs::exists(mp)) {
          s.masks[j] = read_image(mp, 1, d.size);
          for (auto& v : s.masks[j]) v = v > 0.5f ? 1.0f : 0.0f;
        } else {
          s.masks[j].assign(d.size * d.size, 0.0f);
        }
      }
      d.splits.push_back(parse_split(js.at("split").get<std::string>()));
      d.samples.push_back(std::move(s));
    }
  } catch (const json::exception& e) {
    throw IoError(dir + "/dataset.json is malformed: " + e.what());
  }
  return d;
}

UnlabeledDataset import_unlabeled(const std::string& dir) {
  const fs::path root(dir);
  const json m = read_json(root / "dataset.json");
  UnlabeledDataset d;
  try {
    d.size = m.at("size").get<std::size_t>();
    d.provenance = m.value("provenance", json::object());
    for (const auto& jid : m.at("samples")) {
      UnlabeledSample s;
      s.id = jid.get<std::string>();
      s.image = read_image(root / "images" / (s.id + ".ppm"), 3, d.size);
      d.samples.push_back(std::move(s));
    }
  } catch (const json::exception& e) {
    throw IoError(dir + "/dataset.json is malformed: " + e.what());
  }
  return d;
}

IngestReport load_isic_dir(const std::string& images_dir, const std::optional<std::string>& masks_dir,
                           std::size_t target_size, const std::optional<std::string>& labels_csv,
                           std::uint64_t seed) {
  if (!fs::is_directory(images_dir)) throw IoError("not a directory: " + images_dir);
  IngestReport report;
  Dataset& d = report.dataset;
  d.size = target_size;

  std::map<std::string, int> labels;
  if (labels_csv) {
    std::ifstream in(*labels_csv);
    if (!in) {
      report.errors.push_back(*labels_csv + ": cannot open label file");
    } else {
      std::string line;
      std::size_t row = 0;
      while (std::getline(in, line)) {
        ++row;
        if (line.empty()) continue;
        const auto comma = line.find(',');
        if (comma == std::string::npos) {
          report.errors.push_back(*labels_csv + ":" + std::to_string(row) + ": expected 'image,label'");
          continue;
        }
        const std::string id = line.substr(0, comma);
        const std::string value = line.substr(comma + 1);
        if (row == 1 && value != "0" && value != "1" && value.rfind("0.", 0) != 0 && value.rfind("1.", 0) != 0) {
          continue;  // header row
        }
        try {
          labels[id] = std::stod(value) >= 0.5 ? 1 : 0;
        } catch (const std::exception&) {
          report.errors.push_back(*labels_csv + ":" + std::to_string(row) + ": bad label '" + value + "'");
        }
      }
    }
  }

  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(images_dir)) {
    const auto ext = entry.path().extension().string();
    if (entry.is_regular_file() && (ext == ".ppm" || ext == ".pnm")) files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  for (const auto& f : files) {
    Sample s;
    s.id = f.stem().string();
    try {
      s.image = read_image(f, 3, target_size);
    } catch (const Error& e) {
      report.errors.push_back(e.what());
      continue;
    }
    for (std::size_t j = 0; j < kAttributeCount; ++j) {
      s.masks[j].assign(target_size * target_size, 0.0f);
      if (!masks_dir) continue;
      const fs::path mp = fs::path(*masks_dir) / mask_name(s.id, j);
      if (!fs::exists(mp)) continue;
      try {
        s.masks[j] = read_image(mp, 1, target_size);
        for (auto& v : s.masks[j]) v = v >= 0.5f ? 1.0f : 0.0f;
      } catch (const Error& e) {
        report.errors.push_back(e.what());
        s.masks[j].assign(target_size * target_size, 0.0f);
      }
    }
    auto it = labels.find(s.id);
    s.diagnosis = it == labels.end() ? 0 : it->second;
    d.samples.push_back(std::move(s));
  }
  std::vector<int> y;
  for (const auto& s : d.samples) y.push_back(s.diagnosis);
  d.splits = stratified_split(y, seed);
  d.provenance = json{{"source", "isic"}, {"images_dir", images_dir}, {"seed", seed}};
  if (!d.samples.empty() && !d.indices(Split::train).empty()) d.stats = compute_stats(d);
  return report;
}

}  // namespace biounet::data
