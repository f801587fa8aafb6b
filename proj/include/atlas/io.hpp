#pragma once

#include <charconv>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "atlas/graph.hpp"
#include "atlas/grid.hpp"

namespace atlas {

// Binary containers assume a little-endian host; the on-disk layout is
// little-endian by definition.

namespace io {

inline void write_u32(std::ostream& os, uint32_t v) {
  os.write(reinterpret_cast<const char*>(&v), 4);
}
inline uint32_t read_u32(std::istream& is) {
  uint32_t v = 0;
  is.read(reinterpret_cast<char*>(&v), 4);
  ATLAS_REQUIRE(bool(is), "unexpected end of file");
  return v;
}
inline void write_u64(std::ostream& os, uint64_t v) {
  os.write(reinterpret_cast<const char*>(&v), 8);
}
inline uint64_t read_u64(std::istream& is) {
  uint64_t v = 0;
  is.read(reinterpret_cast<char*>(&v), 8);
  ATLAS_REQUIRE(bool(is), "unexpected end of file");
  return v;
}
inline void write_string(std::ostream& os, const std::string& s) {
  write_u32(os, uint32_t(s.size()));
  os.write(s.data(), std::streamsize(s.size()));
}
inline std::string read_string(std::istream& is) {
  const uint32_t n = read_u32(is);
  std::string s(n, '\0');
  is.read(s.data(), std::streamsize(n));
  ATLAS_REQUIRE(bool(is), "unexpected end of file");
  return s;
}

}  // namespace io

// ---- checkpoint container ----
// magic "ATLSCKPT" | version u32 | entry count u32 | per entry:
//   name length u32 | name bytes | dtype u32 (0=f32, 1=f64) | rank u32 |
//   dims u64 each | raw little-endian values.

constexpr uint32_t kCheckpointVersion = 1;

template <class T>
void save_checkpoint(const std::string& path, const Params<T>& params) {
  std::ofstream os(path, std::ios::binary);
  ATLAS_REQUIRE(bool(os), "cannot open '" << path << "' for writing");
  os.write("ATLSCKPT", 8);
  io::write_u32(os, kCheckpointVersion);
  io::write_u32(os, uint32_t(params.t.size()));
  for (const auto& [name, tensor] : params.t) {
    io::write_string(os, name);
    io::write_u32(os, sizeof(T) == 4 ? 0u : 1u);
    io::write_u32(os, uint32_t(tensor.shape.size()));
    for (int64_t d : tensor.shape) io::write_u64(os, uint64_t(d));
    os.write(reinterpret_cast<const char*>(tensor.data()),
             std::streamsize(tensor.numel() * int64_t(sizeof(T))));
  }
  ATLAS_REQUIRE(bool(os), "write failure on '" << path << "'");
}

template <class T>
Params<T> load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  ATLAS_REQUIRE(bool(is), "cannot open checkpoint '" << path << "'");
  char magic[8];
  is.read(magic, 8);
  ATLAS_REQUIRE(is && std::memcmp(magic, "ATLSCKPT", 8) == 0,
                "'" << path << "' is not a checkpoint file");
  const uint32_t version = io::read_u32(is);
  ATLAS_REQUIRE(version == kCheckpointVersion, "unsupported checkpoint version " << version);
  const uint32_t count = io::read_u32(is);
  Params<T> out;
  for (uint32_t i = 0; i < count; ++i) {
    const std::string name = io::read_string(is);
    const uint32_t dtype = io::read_u32(is);
    ATLAS_REQUIRE(dtype <= 1, "unknown dtype tag " << dtype);
    const uint32_t rank = io::read_u32(is);
    Shape shape(rank);
    for (uint32_t d = 0; d < rank; ++d) shape[d] = int64_t(io::read_u64(is));
    const int64_t n = shape_numel(shape);
    Tensor<T> t(shape);
    if ((dtype == 0 && sizeof(T) == 4) || (dtype == 1 && sizeof(T) == 8)) {
      is.read(reinterpret_cast<char*>(t.data()), std::streamsize(n * int64_t(sizeof(T))));
    } else if (dtype == 0) {
      std::vector<float> buf(static_cast<size_t>(n));
      is.read(reinterpret_cast<char*>(buf.data()), std::streamsize(n * 4));
      for (int64_t j = 0; j < n; ++j) t.v[size_t(j)] = T(buf[size_t(j)]);
    } else {
      std::vector<double> buf(static_cast<size_t>(n));
      is.read(reinterpret_cast<char*>(buf.data()), std::streamsize(n * 8));
      for (int64_t j = 0; j < n; ++j) t.v[size_t(j)] = T(buf[size_t(j)]);
    }
    ATLAS_REQUIRE(bool(is), "truncated checkpoint '" << path << "'");
    out.add(name, std::move(t));
  }
  return out;
}

// ---- dataset container ----
// magic "ATLSDATA" | version u32 | C u32 | n_lat u32 | n_lon u32 |
// n_steps u32 | per channel: name | dtype u32 (0=f32) | frames as raw f32,
// frame-major, channel-major within frame.

constexpr uint32_t kDatasetVersion = 1;

struct DatasetHeader {
  int channels = 0;
  GridSpec grid;
  int64_t n_steps = 0;
  std::vector<std::string> channel_names;
};

inline void write_dataset(const std::string& path, const DatasetHeader& h,
                          const std::vector<FieldTensor>& frames) {
  ATLAS_REQUIRE(int64_t(frames.size()) == h.n_steps, "frame count mismatch");
  std::ofstream os(path, std::ios::binary);
  ATLAS_REQUIRE(bool(os), "cannot open '" << path << "' for writing");
  os.write("ATLSDATA", 8);
  io::write_u32(os, kDatasetVersion);
  io::write_u32(os, uint32_t(h.channels));
  io::write_u32(os, uint32_t(h.grid.n_lat));
  io::write_u32(os, uint32_t(h.grid.n_lon));
  io::write_u32(os, uint32_t(h.n_steps));
  for (const auto& name : h.channel_names) io::write_string(os, name);
  io::write_u32(os, 0);  // f32
  std::vector<float> buf;
  for (const auto& f : frames) {
    ATLAS_REQUIRE(f.channels == h.channels && f.grid == h.grid, "frame shape mismatch");
    buf.resize(size_t(f.values.numel()));
    for (int64_t i = 0; i < f.values.numel(); ++i) buf[size_t(i)] = float(f.values.v[size_t(i)]);
    os.write(reinterpret_cast<const char*>(buf.data()), std::streamsize(buf.size() * 4));
  }
  ATLAS_REQUIRE(bool(os), "write failure on '" << path << "'");
}

inline DatasetHeader read_dataset_header(std::istream& is, const std::string& path) {
  char magic[8];
  is.read(magic, 8);
  ATLAS_REQUIRE(is && std::memcmp(magic, "ATLSDATA", 8) == 0,
                "'" << path << "' is not a dataset file");
  const uint32_t version = io::read_u32(is);
  ATLAS_REQUIRE(version == kDatasetVersion, "unsupported dataset version " << version);
  DatasetHeader h;
  h.channels = int(io::read_u32(is));
  const int nlat = int(io::read_u32(is));
  const int nlon = int(io::read_u32(is));
  h.grid = GridSpec(nlat, nlon);
  h.n_steps = int64_t(io::read_u32(is));
  for (int c = 0; c < h.channels; ++c) h.channel_names.push_back(io::read_string(is));
  const uint32_t dtype = io::read_u32(is);
  ATLAS_REQUIRE(dtype == 0, "unsupported dataset dtype " << dtype);
  return h;
}

inline std::pair<DatasetHeader, std::vector<FieldTensor>> read_dataset(
    const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  ATLAS_REQUIRE(bool(is), "cannot open dataset '" << path << "'");
  DatasetHeader h = read_dataset_header(is, path);
  std::vector<FieldTensor> frames;
  frames.reserve(size_t(h.n_steps));
  std::vector<float> buf(size_t(int64_t(h.channels) * h.grid.n_pix()));
  for (int64_t s = 0; s < h.n_steps; ++s) {
    is.read(reinterpret_cast<char*>(buf.data()), std::streamsize(buf.size() * 4));
    ATLAS_REQUIRE(bool(is), "truncated dataset '" << path << "'");
    FieldTensor f(h.grid, h.channels);
    for (size_t i = 0; i < buf.size(); ++i) f.values.v[i] = double(buf[i]);
    frames.push_back(std::move(f));
  }
  return {std::move(h), std::move(frames)};
}

// ---- deterministic text formatting ----

/// Shortest round-trip decimal representation; identical across runs.
inline std::string format_double(double v) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

/// Minimal CSV emitter: '.' decimal, ',' separator, header row.
class CsvWriter {
 public:
  explicit CsvWriter(const std::string& path) : os_(path) {
    ATLAS_REQUIRE(bool(os_), "cannot open '" << path << "' for writing");
  }
  void row(const std::vector<std::string>& cells) {
    for (size_t i = 0; i < cells.size(); ++i) {
      if (i) os_ << ',';
      os_ << cells[i];
    }
    os_ << '\n';
  }
  void close() { os_.close(); }

 private:
  std::ofstream os_;
};

}  // namespace atlas
