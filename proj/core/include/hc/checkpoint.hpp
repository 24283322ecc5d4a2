#pragma once

#include <string>
#include <utility>
#include <vector>

#include "hc/model.hpp"

namespace hc {

// Single binary container: versioned header, the model config as embedded
// JSON, then named (name, dtype, shape, raw little-endian data) tensor
// records. Saving the result of a load reproduces the file byte for byte.
template <class S>
struct Checkpoint {
  ModelConfig config;
  std::uint64_t step = 0;
  Rng::State rng{};
  std::vector<std::pair<std::string, Tensor<S>>> tensors;
};

template <class S>
void save_checkpoint(const std::string& path, const Checkpoint<S>& ckpt);

template <class S>
Checkpoint<S> load_checkpoint_file(const std::string& path);

// Scalar kind recorded in the header: 0 = f32, 1 = f64.
int checkpoint_dtype(const std::string& path);
ModelConfig checkpoint_config(const std::string& path);

// Model rebuilt from the embedded config with parameters filled from the
// records; non-model records (optimizer state) are passed through.
template <class S>
struct RestoredModel {
  Model<S> model;
  std::uint64_t step = 0;
  Rng::State rng{};
  std::vector<std::pair<std::string, Tensor<S>>> extra;
};

template <class S>
RestoredModel<S> restore_model(const Checkpoint<S>& ckpt);

extern template void save_checkpoint(const std::string&, const Checkpoint<float>&);
extern template void save_checkpoint(const std::string&, const Checkpoint<double>&);
extern template Checkpoint<float> load_checkpoint_file(const std::string&);
extern template Checkpoint<double> load_checkpoint_file(const std::string&);
extern template RestoredModel<float> restore_model(const Checkpoint<float>&);
extern template RestoredModel<double> restore_model(const Checkpoint<double>&);

}  // namespace hc
