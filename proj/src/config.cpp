#include "msiprior/config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>

#include <fmt/format.h>

#include "msiprior/error.hpp"

namespace msiprior {

const std::vector<std::string>& Config::known_keys() {
  static const std::vector<std::string> keys = {
      // model
      "aggregator", "hidden_dim", "n_heads", "n_attn_layers", "clam_k", "model_seed",
      // training
      "lr", "weight_decay", "epochs", "warmup_epochs", "clip_norm", "max_tiles", "seed",
      "clam_instance_coeff", "threshold", "folds",
      // priors
      "use_pd", "use_lin", "radius", "epsilon",
      // rendering
      "tile_px",
      // synthetic cohorts
      "cohort.n_slides", "cohort.msi_fraction", "cohort.tiles_min", "cohort.tiles_max",
      "cohort.feature_dim", "cohort.grid_pitch_px", "cohort.ring_width_norm",
      "cohort.lym_base_rate", "cohort.tum_rate", "cohort.str_rate", "cohort.lym_enrichment", "cohort.lym_conservation",
      "cohort.site_offset_scale", "cohort.offset_label_coupling", "cohort.noise_scale",
      "cohort.prototype_scale", "cohort.probe_softening", "cohort.hypermut_flip", "cohort.seed"};
  return keys;
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

Config Config::parse(std::istream& is, const std::string& source) {
  Config cfg;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    require(eq != std::string::npos, ErrorKind::kConfig,
            fmt::format("{}:{}: expected 'key = value'", source, lineno));
    try {
      cfg.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    } catch (const Error& e) {
      throw Error(e.kind(), fmt::format("{}:{}: {}", source, lineno, e.what()));
    }
  }
  return cfg;
}

Config Config::from_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorKind::kIo, fmt::format("cannot open config '{}'", path.string()));
  return parse(in, path.string());
}

void Config::set(const std::string& key, const std::string& value) {
  const auto& keys = known_keys();
  if (std::find(keys.begin(), keys.end(), key) == keys.end()) {
    fail(ErrorKind::kConfig, fmt::format("unknown config key '{}'; valid keys: {}", key,
                                         fmt::join(keys, ", ")));
  }
  values_[key] = value;
}

std::string Config::canonical() const {
  std::string out;
  for (const auto& [k, v] : values_) out += k + "=" + v + "\n";
  return out;
}

std::uint64_t Config::hash() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : canonical()) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

namespace {

class Getter {
 public:
  explicit Getter(const Config& cfg) : cfg_(cfg) {}

  template <typename T>
  void get(const std::string& key, T& out) const {
    const auto it = cfg_.values().find(key);
    if (it == cfg_.values().end()) return;
    const std::string& s = it->second;
    if constexpr (std::is_same_v<T, bool>) {
      if (s == "true" || s == "1" || s == "yes") out = true;
      else if (s == "false" || s == "0" || s == "no") out = false;
      else fail(ErrorKind::kConfig, fmt::format("{}: expected a boolean, got '{}'", key, s));
    } else if constexpr (std::is_floating_point_v<T>) {
      std::istringstream ss(s);
      T v{};
      ss >> v;
      require(!ss.fail() && ss.eof(), ErrorKind::kConfig,
              fmt::format("{}: expected a number, got '{}'", key, s));
      out = v;
    } else {
      T v{};
      const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
      require(ec == std::errc() && ptr == s.data() + s.size(), ErrorKind::kConfig,
              fmt::format("{}: expected an integer, got '{}'", key, s));
      out = v;
    }
  }

 private:
  const Config& cfg_;
};

}  // namespace

RunSettings resolve_settings(const Config& cfg) {
  RunSettings s;
  const Getter g(cfg);
  if (cfg.has("aggregator")) s.model.aggregator = parse_aggregator(cfg.values().at("aggregator"));
  g.get("hidden_dim", s.model.hidden_dim);
  g.get("n_heads", s.model.n_heads);
  g.get("n_attn_layers", s.model.n_attn_layers);
  g.get("clam_k", s.model.clam_k);
  g.get("model_seed", s.model.seed);

  // Learning-rate defaults differ by aggregator.
  s.train.lr_base = s.model.aggregator == Aggregator::kTransMIL ? 1e-4 : 2e-4;
  g.get("lr", s.train.lr_base);
  g.get("weight_decay", s.train.weight_decay);
  g.get("epochs", s.train.epochs);
  g.get("warmup_epochs", s.train.warmup_epochs);
  g.get("clip_norm", s.train.clip_norm);
  int max_tiles = 0;
  g.get("max_tiles", max_tiles);
  if (max_tiles > 0) s.train.max_tiles = max_tiles;
  g.get("seed", s.train.seed);
  g.get("clam_instance_coeff", s.train.clam_instance_coeff);
  g.get("threshold", s.train.decision_threshold);
  g.get("folds", s.folds);

  g.get("use_pd", s.priors.use_pd);
  g.get("use_lin", s.priors.use_lin);
  g.get("radius", s.priors.radius_norm);
  g.get("epsilon", s.priors.epsilon);
  g.get("tile_px", s.tile_px);

  CohortSpec& c = s.cohort;
  g.get("cohort.n_slides", c.n_slides);
  g.get("cohort.msi_fraction", c.msi_fraction);
  g.get("cohort.tiles_min", c.tiles_min);
  g.get("cohort.tiles_max", c.tiles_max);
  g.get("cohort.feature_dim", c.feature_dim);
  g.get("cohort.grid_pitch_px", c.grid_pitch_px);
  g.get("cohort.ring_width_norm", c.ring_width_norm);
  g.get("cohort.lym_base_rate", c.lym_base_rate);
  g.get("cohort.tum_rate", c.tum_rate);
  g.get("cohort.str_rate", c.str_rate);
  g.get("cohort.lym_enrichment", c.lym_enrichment);
  g.get("cohort.lym_conservation", c.lym_conservation);
  g.get("cohort.site_offset_scale", c.site_offset_scale);
  g.get("cohort.offset_label_coupling", c.offset_label_coupling);
  g.get("cohort.noise_scale", c.noise_scale);
  g.get("cohort.prototype_scale", c.prototype_scale);
  g.get("cohort.probe_softening", c.probe_softening);
  g.get("cohort.hypermut_flip", c.hypermut_flip);
  g.get("cohort.seed", c.seed);

  s.train.validate();
  s.priors.validate();
  require(s.folds >= 2, ErrorKind::kConfig, "folds must be >= 2");
  require(s.tile_px >= 1, ErrorKind::kConfig, "tile_px must be >= 1");
  return s;
}

}  // namespace msiprior
