#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "biounet/tensor.hpp"

namespace biounet::data {

inline constexpr std::size_t kAttributeCount = 5;
inline constexpr std::array<const char*, kAttributeCount> kAttributeNames{
    "globules", "milia_like_cyst", "negative_network", "pigment_network", "streaks"};

/// Index of an attribute name; throws ContractError for unknown names.
std::size_t attribute_index(const std::string& name);

enum class Split : std::uint8_t { train = 0, validation = 1, test = 2 };
const char* to_string(Split split);
Split parse_split(const std::string& text);

/// Dataset A row: image, diagnosis and one binary mask per attribute. An
/// absent mask is stored as all zeros.
struct Sample {
  std::string id;
  std::vector<float> image;  // 3 * size * size, planar RGB in [0, 1]
  int diagnosis = 0;
  std::array<std::vector<float>, kAttributeCount> masks;  // size * size each, values in {0, 1}

  bool present(std::size_t attribute) const;
  std::array<bool, kAttributeCount> presence() const;
};

struct UnlabeledSample {
  std::string id;
  std::vector<float> image;
};

/// Per-channel statistics used for zero-mean, unit-variance inputs.
struct NormalizationStats {
  std::array<double, 3> mean{0.0, 0.0, 0.0};
  std::array<double, 3> stddev{1.0, 1.0, 1.0};
  bool valid = false;
  std::vector<std::size_t> guarded_channels;  // channels whose variance hit the 1e-6 guard

  nlohmann::json to_json() const;
  static NormalizationStats from_json(const nlohmann::json& j);
};

inline constexpr double kVarianceGuard = 1e-6;

struct Dataset {
  std::size_t size = 0;  // square image side
  std::vector<Sample> samples;
  std::vector<Split> splits;  // one per sample
  NormalizationStats stats;
  bool normalized = false;  // images currently hold normalized values
  nlohmann::json provenance = nlohmann::json::object();

  std::vector<std::size_t> indices(Split split) const;
};

struct UnlabeledDataset {
  std::size_t size = 0;
  std::vector<UnlabeledSample> samples;
  nlohmann::json provenance = nlohmann::json::object();
};

/// Stratified 70/15/15 split on diagnosis, deterministic in `seed`.
std::vector<Split> stratified_split(const std::vector<int>& labels, std::uint64_t seed);

/// Per-channel mean and population standard deviation over the training
/// split. A channel with variance below 1e-6 uses stddev sqrt(1e-6) and is
/// listed in `guarded_channels`.
NormalizationStats compute_stats(const Dataset& dataset);

/// Applies `stats` to one planar RGB image in place.
void apply_stats(const NormalizationStats& stats, std::span<float> planar_rgb);

/// Computes training-split statistics and normalizes every image in place.
/// Throws StateError when the dataset is already normalized and
/// ContractError when it is empty.
void normalize(Dataset& dataset);

/// Packs images (already in model input form) into an (N, 3, S, S) tensor.
template <typename T>
Tensor<T> image_batch(const std::vector<const std::vector<float>*>& images, std::size_t size);

// ---- files -------------------------------------------------------------

/// `<dir>/images/<id>.ppm`, `<dir>/masks/<id>_attribute_<name>.pgm`,
/// `<dir>/dataset.json`. Returns the relative paths written. Images must be
/// unnormalized.
std::vector<std::string> export_dataset(const Dataset& dataset, const std::string& dir);
std::vector<std::string> export_unlabeled(const UnlabeledDataset& dataset, const std::string& dir);

/// Reads a directory written by export_dataset / export_unlabeled.
Dataset import_dataset(const std::string& dir);
UnlabeledDataset import_unlabeled(const std::string& dir);

struct IngestReport {
  Dataset dataset;
  std::vector<std::string> errors;  // one line per unreadable file
};

/// ISIC Task-2 style layout: images `<images_dir>/<id>.ppm` and optional
/// masks `<masks_dir>/<id>_attribute_<name>.pgm`. Images are bilinearly
/// resized to `target_size`; masks are resized and binarized at 0.5. A
/// missing mask means an empty mask. Diagnosis labels come from an optional
/// CSV (`image,label` rows; label 0/1) and default to 0. Unreadable files are
/// reported and skipped. The split is stratified with `seed`.
IngestReport load_isic_dir(const std::string& images_dir, const std::optional<std::string>& masks_dir,
                           std::size_t target_size, const std::optional<std::string>& labels_csv = std::nullopt,
                           std::uint64_t seed = 0);

/// Bilinear resize of a planar multi-channel image.
std::vector<float> resize_planar(std::span<const float> planar, std::size_t channels, std::size_t h, std::size_t w,
                                 std::size_t out_h, std::size_t out_w);

}  // namespace biounet::data
