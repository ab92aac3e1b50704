#pragma once

// Checkpoint container: "UTCK" magic, format version, a JSON metadata block,
// then named float32 tensor records. Loaders are expected to reject files
// whose metadata disagrees with the in-memory configuration.

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "utc/tensor.hpp"

namespace utc {

struct CheckpointError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct TensorRecord {
  Shape shape;
  std::vector<float> data;
};

void write_checkpoint(const std::string& path, const nlohmann::json& meta,
                      const std::vector<std::pair<std::string, TensorRecord>>& records);

struct Checkpoint {
  nlohmann::json meta;
  std::map<std::string, TensorRecord> records;
};

Checkpoint read_checkpoint(const std::string& path);

template <typename T>
TensorRecord to_record(const Tensor<T>& t) {
  TensorRecord r;
  r.shape = t.shape();
  r.data.assign(t.data().begin(), t.data().end());
  return r;
}

template <typename T>
void load_record_into(const TensorRecord& r, Tensor<T>& t, const std::string& name) {
  if (r.shape != t.shape())
    throw CheckpointError("checkpoint record " + name + " has shape " + shape_str(r.shape) +
                          ", expected " + shape_str(t.shape()));
  t.data().assign(r.data.begin(), r.data.end());
}

}  // namespace utc
