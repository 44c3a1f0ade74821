#pragma once

#include <string>

#include "pdnet/tensor.hpp"

namespace pdnet {

// Checkpoint = <prefix>.json manifest (names, shapes, dtype, payload file)
// plus <prefix>.bin with the raw little-endian values in manifest order.
// save/load round-trips are byte-exact. `meta_json` is an optional free-form
// JSON object string stored under "meta" (run settings and the like).

template <typename T>
void save_checkpoint(const ParamSet<T>& params, const std::string& prefix,
                     const std::string& meta_json = "");

template <typename T>
ParamSet<T> load_checkpoint(const std::string& prefix);

// dtype string recorded in the manifest ("f32" or "f64")
std::string checkpoint_dtype(const std::string& prefix);

// the stored meta object as a JSON string ("{}" when absent)
std::string checkpoint_meta(const std::string& prefix);

}  // namespace pdnet
