#pragma once

#include "dforge/adam.hpp"
#include "dforge/tensor.hpp"

#include <map>
#include <string>

namespace dforge::ad {

// Binary checkpoint: 8-byte magic "DFORGE01", then one record per tensor:
//   u64 name length | name bytes (UTF-8) | u64 rank | u64 extents[rank] |
//   f64 data[numel]
// All integers and floats little-endian. Adam moments, when saved, use the
// names "<param>.m1" / "<param>.m2" plus a scalar "optim.step".

void save_checkpoint(const std::string& path, const ParamSet& params,
                     const Adam* optimizer = nullptr);

// Loads every record into a name -> tensor map.
std::map<std::string, Tensor> load_checkpoint_raw(const std::string& path);

// Loads records into existing parameters (shape-checked by name). Missing
// or mismatched records are an error.
void load_checkpoint(const std::string& path, ParamSet& params,
                     Adam* optimizer = nullptr);

}  // namespace dforge::ad
