#pragma once

#include <cstdint>
#include <filesystem>
#include <istream>
#include <map>
#include <string>
#include <vector>

#include "msiprior/models.hpp"
#include "msiprior/spatial_priors.hpp"
#include "msiprior/synthetic.hpp"
#include "msiprior/training.hpp"

namespace msiprior {

/// Flat `key = value` settings. `#` starts a comment; blank lines are
/// ignored. Keys are validated against known_keys().
class Config {
 public:
  static Config parse(std::istream& is, const std::string& source = "config");
  static Config from_file(const std::filesystem::path& path);

  /// Later values win; unknown keys throw kConfig with the list of valid keys.
  void set(const std::string& key, const std::string& value);
  bool has(const std::string& key) const { return values_.count(key) > 0; }
  const std::map<std::string, std::string>& values() const { return values_; }

  /// Sorted `key=value` lines; the basis of hash().
  std::string canonical() const;
  /// FNV-1a 64 of canonical().
  std::uint64_t hash() const;

  static const std::vector<std::string>& known_keys();

 private:
  std::map<std::string, std::string> values_;
};

/// Everything a CLI run needs, with defaults applied.
struct RunSettings {
  ModelConfig model;
  TrainConfig train;
  PriorConfig priors;
  CohortSpec cohort;
  int folds = 5;
  int tile_px = 256;
};

RunSettings resolve_settings(const Config& cfg);

}  // namespace msiprior
