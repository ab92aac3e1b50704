#include "utc/checkpoint.hpp"

#include <cstdio>
#include <cstring>
#include <fstream>

namespace utc {

namespace {

constexpr char kMagic[4] = {'U', 'T', 'C', 'K'};

template <typename I>
void write_int(std::ostream& os, I v) {
  unsigned char buf[sizeof(I)];
  for (std::size_t i = 0; i < sizeof(I); ++i) buf[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(buf), sizeof(I));
}

template <typename I>
I read_int(std::istream& is) {
  unsigned char buf[sizeof(I)];
  is.read(reinterpret_cast<char*>(buf), sizeof(I));
  I v = 0;
  for (std::size_t i = 0; i < sizeof(I); ++i) v |= static_cast<I>(buf[i]) << (8 * i);
  return v;
}

void write_floats(std::ostream& os, const std::vector<float>& v) {
  for (float f : v) {
    std::uint32_t bits;
    std::memcpy(&bits, &f, 4);
    write_int<std::uint32_t>(os, bits);
  }
}

void read_floats(std::istream& is, std::vector<float>& v) {
  for (float& f : v) {
    std::uint32_t bits = read_int<std::uint32_t>(is);
    std::memcpy(&f, &bits, 4);
  }
}

}  // namespace

void write_checkpoint(const std::string& path, const nlohmann::json& meta,
                      const std::vector<std::pair<std::string, TensorRecord>>& records) {
  std::string tmp = path + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw CheckpointError("cannot open " + tmp + " for writing");
    os.write(kMagic, 4);
    write_int<std::uint32_t>(os, kCheckpointVersion);
    std::string m = meta.dump();
    write_int<std::uint64_t>(os, m.size());
    os.write(m.data(), static_cast<std::streamsize>(m.size()));
    write_int<std::uint64_t>(os, records.size());
    for (const auto& [name, rec] : records) {
      if (shape_numel(rec.shape) != rec.data.size())
        throw CheckpointError("record " + name + " shape/data mismatch");
      write_int<std::uint32_t>(os, static_cast<std::uint32_t>(name.size()));
      os.write(name.data(), static_cast<std::streamsize>(name.size()));
      write_int<std::uint32_t>(os, static_cast<std::uint32_t>(rec.shape.size()));
      for (std::size_t d : rec.shape) write_int<std::uint64_t>(os, d);
      write_floats(os, rec.data);
    }
    if (!os) throw CheckpointError("write failed for " + tmp);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0)
    throw CheckpointError("cannot move checkpoint into place at " + path);
}

Checkpoint read_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw CheckpointError("cannot open checkpoint " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kMagic, 4) != 0)
    throw CheckpointError(path + " is not a checkpoint file");
  std::uint32_t version = read_int<std::uint32_t>(is);
  if (version != kCheckpointVersion)
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
  std::uint64_t mlen = read_int<std::uint64_t>(is);
  std::string m(mlen, '\0');
  is.read(m.data(), static_cast<std::streamsize>(mlen));
  Checkpoint ck;
  try {
    ck.meta = nlohmann::json::parse(m);
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("corrupt checkpoint metadata: ") + e.what());
  }
  std::uint64_t n = read_int<std::uint64_t>(is);
  for (std::uint64_t i = 0; i < n; ++i) {
    std::uint32_t nlen = read_int<std::uint32_t>(is);
    std::string name(nlen, '\0');
    is.read(name.data(), nlen);
    std::uint32_t rank = read_int<std::uint32_t>(is);
    TensorRecord rec;
    rec.shape.resize(rank);
    for (auto& d : rec.shape) d = static_cast<std::size_t>(read_int<std::uint64_t>(is));
    rec.data.resize(shape_numel(rec.shape));
    read_floats(is, rec.data);
    if (!is) throw CheckpointError("truncated checkpoint " + path);
    ck.records.emplace(std::move(name), std::move(rec));
  }
  return ck;
}

}  // namespace utc
