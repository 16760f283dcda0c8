#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "msiprior/bag.hpp"
#include "msiprior/models.hpp"

namespace msiprior::io {

// Bag file ("MSIB"), little-endian:
//   magic[4] version:u32 id_len:u32 id[id_len] W:u64 H:u64
//   n_tiles:u32 feature_dim:u32 probe_dim:u32 (0 or 9)
//   per tile: x:u64 y:u64 features:f32[feature_dim] probes:f32[probe_dim]
inline constexpr std::uint32_t kBagVersion = 1;

void write_bag(std::ostream& os, const SlideBag& bag);
SlideBag read_bag(std::istream& is);
void write_bag_file(const std::filesystem::path& path, const SlideBag& bag);
SlideBag read_bag_file(const std::filesystem::path& path);

// Checkpoint file ("MSIC"), little-endian:
//   magic[4] version:u32
//   aggregator:u32 input_dim:u32 hidden_dim:u32 n_heads:u32 n_attn_layers:u32 clam_k:u32 seed:u64
//   n_tensors:u32, then per tensor:
//     name_len:u32 name[name_len] rank:u32 dims:u64[rank] data:f64[prod(dims)] (row-major)
inline constexpr std::uint32_t kCheckpointVersion = 1;

void write_checkpoint(std::ostream& os, const ModelParams& params);
ModelParams read_checkpoint(std::istream& is);
void write_checkpoint_file(const std::filesystem::path& path, const ModelParams& params);
ModelParams read_checkpoint_file(const std::filesystem::path& path);

/// Manifest CSV: header slide_id,path,msi,hypermut,site. Relative paths are
/// resolved against the manifest's directory.
struct ManifestEntry {
  std::string slide_id;
  std::string path;
  LabelSet labels;
};

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, const std::vector<ManifestEntry>& entries);

/// Loads every bag referenced by a manifest.
Cohort load_cohort(const std::filesystem::path& manifest_path);

/// Writes bags under `dir/bags/` and `dir/manifest.csv`.
void write_cohort(const std::filesystem::path& dir, const Cohort& cohort);

}  // namespace msiprior::io
