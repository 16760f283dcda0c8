#include "msiprior/io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <set>
#include <sstream>

#include <fmt/format.h>

#include "msiprior/error.hpp"

namespace msiprior::io {

namespace fs = std::filesystem;

namespace {

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);

class Writer {
 public:
  explicit Writer(std::ostream& os) : os_(os) {}

  void bytes(const void* data, std::size_t n) { os_.write(static_cast<const char*>(data), static_cast<std::streamsize>(n)); }
  void u32(std::uint32_t v) { le(v); }
  void u64(std::uint64_t v) { le(v); }
  void f32(float v) { le(std::bit_cast<std::uint32_t>(v)); }
  void f64(double v) { le(std::bit_cast<std::uint64_t>(v)); }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }

 private:
  template <typename U>
  void le(U v) {
    unsigned char b[sizeof(U)];
    for (std::size_t i = 0; i < sizeof(U); ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    bytes(b, sizeof(U));
  }
  std::ostream& os_;
};

class Reader {
 public:
  Reader(std::string buf, std::string what) : buf_(std::move(buf)), what_(std::move(what)) {}

  void need(std::size_t n) const {
    require(buf_.size() - pos_ >= n, ErrorKind::kFormat,
            fmt::format("{}: truncated at byte {} (needed {} more)", what_, pos_, n));
  }
  std::uint32_t u32() { return le<std::uint32_t>(); }
  std::uint64_t u64() { return le<std::uint64_t>(); }
  float f32() { return std::bit_cast<float>(le<std::uint32_t>()); }
  double f64() { return std::bit_cast<double>(le<std::uint64_t>()); }
  std::string raw(std::size_t n) {
    need(n);
    std::string s = buf_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::string str() { return raw(u32()); }
  std::size_t remaining() const { return buf_.size() - pos_; }
  void finish() const {
    require(remaining() == 0, ErrorKind::kFormat,
            fmt::format("{}: {} trailing bytes after payload", what_, remaining()));
  }
  const std::string& what() const { return what_; }

 private:
  template <typename U>
  U le() {
    need(sizeof(U));
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i)
      v |= static_cast<U>(static_cast<unsigned char>(buf_[pos_ + i])) << (8 * i);
    pos_ += sizeof(U);
    return v;
  }
  std::string buf_;
  std::size_t pos_ = 0;
  std::string what_;
};

std::string slurp(std::istream& is) {
  return std::string(std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>());
}

std::ifstream open_in(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorKind::kIo, fmt::format("cannot open '{}'", path.string()));
  return in;
}

std::ofstream open_out(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(static_cast<bool>(out), ErrorKind::kIo,
          fmt::format("cannot open '{}' for writing", path.string()));
  return out;
}

template <typename Fn>
auto with_path(const fs::path& path, Fn&& fn) {
  try {
    return fn();
  } catch (const Error& e) {
    if (std::string(e.what()).find(path.string()) != std::string::npos) throw;
    throw Error(e.kind(), fmt::format("{}: {}", path.string(), e.what()));
  }
}

}  // namespace

void write_bag(std::ostream& os, const SlideBag& bag) {
  require(bag.n_tiles() <= UINT32_MAX, ErrorKind::kInvalidInput, "too many tiles for bag format");
  require(!bag.has_probes() || bag.probes.cols() == probe::kNumClasses, ErrorKind::kInvalidInput,
          "probe dimension must be 0 or 9");
  Writer w(os);
  w.bytes("MSIB", 4);
  w.u32(kBagVersion);
  w.str(bag.slide_id);
  w.u64(bag.geometry.width_px);
  w.u64(bag.geometry.height_px);
  const auto probe_dim = static_cast<std::uint32_t>(bag.has_probes() ? probe::kNumClasses : 0);
  w.u32(static_cast<std::uint32_t>(bag.n_tiles()));
  w.u32(static_cast<std::uint32_t>(bag.feature_dim()));
  w.u32(probe_dim);
  for (std::size_t i = 0; i < bag.n_tiles(); ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    w.u64(bag.coords[i].x_px);
    w.u64(bag.coords[i].y_px);
    for (Eigen::Index d = 0; d < bag.feature_dim(); ++d) w.f32(static_cast<float>(bag.features(r, d)));
    for (std::uint32_t k = 0; k < probe_dim; ++k) w.f32(static_cast<float>(bag.probes(r, k)));
  }
}

SlideBag read_bag(std::istream& is) {
  Reader r(slurp(is), "bag file");
  require(r.raw(4) == "MSIB", ErrorKind::kFormat, "bag file: bad magic (expected MSIB)");
  const std::uint32_t version = r.u32();
  require(version == kBagVersion, ErrorKind::kFormat,
          fmt::format("bag file: unsupported version {}", version));
  SlideBag bag;
  bag.slide_id = r.str();
  bag.geometry.width_px = r.u64();
  bag.geometry.height_px = r.u64();
  const std::uint32_t n = r.u32();
  const std::uint32_t dim = r.u32();
  const std::uint32_t probe_dim = r.u32();
  require(probe_dim == 0 || probe_dim == probe::kNumClasses, ErrorKind::kFormat,
          fmt::format("bag file: probe_dim must be 0 or 9, got {}", probe_dim));
  const std::uint64_t per_tile = 16 + 4ULL * (dim + probe_dim);
  require(r.remaining() == per_tile * n, ErrorKind::kFormat,
          fmt::format("bag file: payload is {} bytes but header declares {} tiles of {} bytes",
                      r.remaining(), n, per_tile));
  bag.coords.resize(n);
  bag.features.resize(n, dim);
  if (probe_dim) bag.probes.resize(n, probe_dim);
  for (std::uint32_t i = 0; i < n; ++i) {
    bag.coords[i].x_px = r.u64();
    bag.coords[i].y_px = r.u64();
    for (std::uint32_t d = 0; d < dim; ++d) bag.features(i, d) = r.f32();
    for (std::uint32_t k = 0; k < probe_dim; ++k) bag.probes(i, k) = r.f32();
  }
  r.finish();
  bag.validate();
  return bag;
}

void write_bag_file(const fs::path& path, const SlideBag& bag) {
  auto out = open_out(path);
  write_bag(out, bag);
  require(static_cast<bool>(out), ErrorKind::kIo, fmt::format("write failed: '{}'", path.string()));
}

SlideBag read_bag_file(const fs::path& path) {
  return with_path(path, [&] {
    auto in = open_in(path);
    return read_bag(in);
  });
}

void write_checkpoint(std::ostream& os, const ModelParams& params) {
  const ModelConfig& c = params.config();
  Writer w(os);
  w.bytes("MSIC", 4);
  w.u32(kCheckpointVersion);
  w.u32(static_cast<std::uint32_t>(c.aggregator));
  w.u32(static_cast<std::uint32_t>(c.input_dim));
  w.u32(static_cast<std::uint32_t>(c.hidden_dim));
  w.u32(static_cast<std::uint32_t>(c.n_heads));
  w.u32(static_cast<std::uint32_t>(c.n_attn_layers));
  w.u32(static_cast<std::uint32_t>(c.clam_k));
  w.u64(c.seed);
  w.u32(static_cast<std::uint32_t>(params.tensors().size()));
  for (const auto& t : params.tensors()) {
    w.str(t.name);
    w.u32(2);
    w.u64(static_cast<std::uint64_t>(t.value.rows()));
    w.u64(static_cast<std::uint64_t>(t.value.cols()));
    for (Eigen::Index r = 0; r < t.value.rows(); ++r)
      for (Eigen::Index col = 0; col < t.value.cols(); ++col) w.f64(t.value(r, col));
  }
}

ModelParams read_checkpoint(std::istream& is) {
  Reader r(slurp(is), "checkpoint");
  require(r.raw(4) == "MSIC", ErrorKind::kFormat, "checkpoint: bad magic (expected MSIC)");
  const std::uint32_t version = r.u32();
  require(version == kCheckpointVersion, ErrorKind::kFormat,
          fmt::format("checkpoint: unsupported version {}", version));
  ModelConfig c;
  const std::uint32_t agg = r.u32();
  require(agg <= 2, ErrorKind::kFormat, fmt::format("checkpoint: unknown aggregator {}", agg));
  c.aggregator = static_cast<Aggregator>(agg);
  c.input_dim = static_cast<int>(r.u32());
  c.hidden_dim = static_cast<int>(r.u32());
  c.n_heads = static_cast<int>(r.u32());
  c.n_attn_layers = static_cast<int>(r.u32());
  c.clam_k = static_cast<int>(r.u32());
  c.seed = r.u64();
  const std::uint32_t n = r.u32();
  std::vector<NamedTensor> tensors;
  for (std::uint32_t i = 0; i < n; ++i) {
    NamedTensor t;
    t.name = r.str();
    const std::uint32_t rank = r.u32();
    require(rank == 1 || rank == 2, ErrorKind::kFormat,
            fmt::format("checkpoint: tensor '{}' has unsupported rank {}", t.name, rank));
    const std::uint64_t rows = rank == 2 ? r.u64() : 1;
    const std::uint64_t cols = r.u64();
    r.need(rows * cols * 8);
    t.value.resize(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    for (Eigen::Index row = 0; row < t.value.rows(); ++row)
      for (Eigen::Index col = 0; col < t.value.cols(); ++col) t.value(row, col) = r.f64();
    tensors.push_back(std::move(t));
  }
  r.finish();
  try {
    c.validate();
  } catch (const Error& e) {
    fail(ErrorKind::kFormat, std::string("checkpoint: invalid model config: ") + e.what());
  }
  // Names and shapes must match a freshly initialized model of this config.
  const ModelParams reference = init_params(c);
  require(reference.tensors().size() == tensors.size(), ErrorKind::kFormat,
          "checkpoint: tensor count does not match model config");
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    const auto& ref = reference.tensors()[i].value;
    require(reference.tensors()[i].name == tensors[i].name && ref.rows() == tensors[i].value.rows() &&
                ref.cols() == tensors[i].value.cols(),
            ErrorKind::kFormat, fmt::format("checkpoint: tensor '{}' does not match model config",
                                            tensors[i].name));
  }
  return ModelParams(c, std::move(tensors));
}

void write_checkpoint_file(const fs::path& path, const ModelParams& params) {
  auto out = open_out(path);
  write_checkpoint(out, params);
  require(static_cast<bool>(out), ErrorKind::kIo, fmt::format("write failed: '{}'", path.string()));
}

ModelParams read_checkpoint_file(const fs::path& path) {
  return with_path(path, [&] {
    auto in = open_in(path);
    return read_checkpoint(in);
  });
}

namespace {

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream ss(line);
  while (std::getline(ss, cur, ',')) out.push_back(cur);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

int parse_binary(const std::string& s, const std::string& field, std::size_t line) {
  require(s == "0" || s == "1", ErrorKind::kFormat,
          fmt::format("line {}: {} must be 0 or 1, got '{}'", line, field, s));
  return s == "1" ? 1 : 0;
}

}  // namespace

std::vector<ManifestEntry> read_manifest(const fs::path& path) {
  return with_path(path, [&] {
    auto in = open_in(path);
    std::string line;
    require(static_cast<bool>(std::getline(in, line)), ErrorKind::kFormat, "empty manifest");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    require(line == "slide_id,path,msi,hypermut,site", ErrorKind::kFormat,
            "manifest header must be 'slide_id,path,msi,hypermut,site'");
    std::vector<ManifestEntry> out;
    std::set<std::string> seen;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
      ++lineno;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty()) continue;
      const auto f = split_csv(line);
      require(f.size() == 5, ErrorKind::kFormat,
              fmt::format("line {}: expected 5 fields, got {}", lineno, f.size()));
      ManifestEntry e;
      e.slide_id = f[0];
      e.path = f[1];
      e.labels.msi = parse_binary(f[2], "msi", lineno);
      e.labels.hypermut = parse_binary(f[3], "hypermut", lineno);
      e.labels.site = f[4];
      require(seen.insert(e.slide_id).second, ErrorKind::kFormat,
              fmt::format("line {}: duplicate slide_id '{}'", lineno, e.slide_id));
      fs::path bag_path = e.path;
      if (bag_path.is_relative()) bag_path = path.parent_path() / bag_path;
      require(fs::exists(bag_path), ErrorKind::kIo,
              fmt::format("line {}: bag file '{}' does not exist", lineno, bag_path.string()));
      e.path = bag_path.string();
      out.push_back(std::move(e));
    }
    return out;
  });
}

void write_manifest(const fs::path& path, const std::vector<ManifestEntry>& entries) {
  auto out = open_out(path);
  out << "slide_id,path,msi,hypermut,site\n";
  for (const auto& e : entries)
    out << e.slide_id << ',' << e.path << ',' << e.labels.msi << ',' << e.labels.hypermut << ','
        << e.labels.site << '\n';
}

Cohort load_cohort(const fs::path& manifest_path) {
  Cohort cohort;
  for (const auto& e : read_manifest(manifest_path)) {
    LabeledSlide s;
    s.bag = read_bag_file(e.path);
    require(s.bag.slide_id == e.slide_id, ErrorKind::kFormat,
            fmt::format("{}: slide id '{}' does not match manifest id '{}'", e.path, s.bag.slide_id,
                        e.slide_id));
    s.labels = e.labels;
    cohort.push_back(std::move(s));
  }
  return cohort;
}

void write_cohort(const fs::path& dir, const Cohort& cohort) {
  std::vector<ManifestEntry> entries;
  for (const auto& s : cohort) {
    const std::string rel = "bags/" + s.bag.slide_id + ".msib";
    write_bag_file(dir / rel, s.bag);
    entries.push_back({s.bag.slide_id, rel, s.labels});
  }
  write_manifest(dir / "manifest.csv", entries);
}

}  // namespace msiprior::io
