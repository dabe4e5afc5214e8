#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "kbsr/blocks/layers.hpp"

namespace kbsr {

/// Tensor archive: the magic line "KBSRCKPT1\n", a little-endian u64 byte
/// length of the JSON manifest, the manifest itself — a list of
/// {name, dtype, shape} in blob order — and then the raw little-endian
/// float64 blobs back to back.
void save_tensors(const std::string& path,
                  const std::vector<std::pair<std::string, const Tensor<double>*>>& items);
std::map<std::string, Tensor<double>> load_tensors(const std::string& path);

/// Store <-> archive round trip. Loading is strict: the archive must cover
/// exactly the store's parameter names with matching shapes.
void save_params(const ParamStore<double>& store, const std::string& path);
void load_params(ParamStore<double>& store, const std::string& path);

}  // namespace kbsr
