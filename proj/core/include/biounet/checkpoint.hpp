#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"

#include "biounet/models.hpp"

namespace biounet {

/// One named array in a checkpoint. Values are held as doubles regardless
/// of the model precision; float values round-trip exactly.
struct CheckpointEntry {
  std::string name;
  Shape shape;
  std::vector<double> values;
};

/// Versioned container for model state and run metadata.
///
/// File layout: the 8-byte magic "BIOUNET1", a u32 format version, a u64
/// header length, a JSON header describing every entry and blob, then the
/// raw little-endian payload (entries as their dtype, blobs as bytes).
struct Checkpoint {
  static constexpr std::uint32_t kFormatVersion = 1;

  nn::ModelConfig model;
  std::string dtype = "f32";  // "f32" or "f64"
  std::vector<CheckpointEntry> entries;
  /// Opaque nested payloads (e.g. a nested checkpoint).
  std::map<std::string, std::vector<std::uint8_t>> blobs;

  double selection_metric = 0.0;
  std::string selection_definition;
  std::int64_t epoch = -1;
  std::uint64_t seed = 0;
  nlohmann::json meta = nlohmann::json::object();

  const CheckpointEntry* find(const std::string& name) const;
};

/// Parameters (with Adam state) and both running-statistics sets of a model.
template <typename T>
Checkpoint capture(nn::BioUNet<T>& model);

/// Loads state into a model built with the same configuration. Throws
/// CheckpointError on an architecture or precision mismatch.
template <typename T>
void restore(const Checkpoint& checkpoint, nn::BioUNet<T>& model);

template <typename T>
nn::BioUNet<T> instantiate(const Checkpoint& checkpoint);

std::vector<std::uint8_t> serialize(const Checkpoint& checkpoint);
Checkpoint deserialize(const std::vector<std::uint8_t>& bytes);
void save(const Checkpoint& checkpoint, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

/// Hash of the serialized bytes.
std::uint64_t content_hash(const Checkpoint& checkpoint);

/// E3: an encoder and classifier head loaded from a checkpoint, with its own
/// parameter storage and frozen weights.
template <typename T>
struct FrozenEncoder {
  nn::Encoder<T> encoder;
  nn::ClassifierHead<T> head;
  double selection_metric = 0.0;
  std::uint64_t checkpoint_hash = 0;
};

/// Builds E3 from `checkpoint`. `architecture` is the encoder E3 must be
/// compatible with (usually E1); a mismatch raises CheckpointError.
template <typename T>
FrozenEncoder<T> clone_to_e3(const nn::Encoder<T>& architecture, const Checkpoint& checkpoint);

}  // namespace biounet
