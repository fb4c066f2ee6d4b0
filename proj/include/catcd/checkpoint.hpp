#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <vector>

#include "catcd/data.hpp"
#include "catcd/params.hpp"

namespace catcd::data {

/// Checkpoint tensors do not fit the model they are restored into. what()
/// lists every expected vs found shape difference, one per line.
class CheckpointMismatch : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// "CATW" files. dtype byte 0 is float32; double models write 1.
template <typename T>
std::vector<std::uint8_t> encode_checkpoint(std::span<const Parameter<T>> tensors);
/// Throws FormatError on bad magic, version, dtype, truncation or duplicate names.
template <typename T>
std::vector<Parameter<T>> decode_checkpoint(std::span<const std::uint8_t> bytes);

template <typename T>
void save_checkpoint(std::span<const Parameter<T>> tensors, const std::filesystem::path& path);
template <typename T>
std::vector<Parameter<T>> load_checkpoint(const std::filesystem::path& path);

/// Parameters then buffers, sharing storage with the set.
template <typename T>
std::vector<Parameter<T>> collect(const ParamSet<T>& ps);

/// Copies values into every parameter and buffer of `ps`. Tensors named
/// "opt.*" are skipped. Nothing is written unless every name and shape matches.
template <typename T>
void restore(ParamSet<T>& ps, std::span<const Parameter<T>> tensors);

}  // namespace catcd::data
