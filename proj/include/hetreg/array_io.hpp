#pragma once

#include <string>
#include <vector>

#include "hetreg/tensor.hpp"

namespace hetreg {

// Raw little-endian float32 arrays with a JSON sidecar {shape, dtype, order}.
// The on-disk format is the interchange contract for datasets and checkpoint
// parameter entries; values are quantized to float32 on save.

std::vector<unsigned char> tensor_to_f32_bytes(const Tensor& t);
Tensor f32_bytes_to_tensor(const std::vector<unsigned char>& bytes,
                           const std::vector<int64_t>& shape);

std::string array_sidecar_json(const std::vector<int64_t>& shape);
std::vector<int64_t> parse_array_sidecar(const std::string& json_text,
                                         const std::string& context);

// Writes <base>.f32 and <base>.json.
void save_array(const std::string& base_path, const Tensor& t);
Tensor load_array(const std::string& base_path);

// Round-trips every value through float32 (the representation arrays have on
// disk), so in-memory data equals its own save/load image bit-for-bit.
Tensor quantize_f32(const Tensor& t);

// 8-bit binary PGM with min/max recorded in a JSON sidecar (<base>.pgm/.json).
void save_pgm(const std::string& base_path, const Tensor& image2d);

}  // namespace hetreg
