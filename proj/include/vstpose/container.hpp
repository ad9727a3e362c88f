#pragma once

// Self-describing tensor container:
//   {"dtype":"f32","shape":[d0,d1,...]}\n<row-major little-endian payload>
// Extra header keys are allowed (checkpoints add "name"). Several records may
// be concatenated in one stream.

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>

#include <nlohmann/json.hpp>

#include "vstpose/tensor.hpp"

namespace vstpose::io {

enum class DType { F32, F64 };

std::string to_string(DType dtype);
DType dtype_from_string(const std::string& s);

struct TensorRecord {
  Tensor tensor;
  DType dtype = DType::F32;
  nlohmann::json header;  // full parsed header, including dtype/shape
};

void write_tensor(std::ostream& os, const Tensor& t, DType dtype,
                  const nlohmann::json& extra = nlohmann::json::object());

/// Reads one record. Returns nullopt at clean end of stream. `source` names the
/// file in error messages.
std::optional<TensorRecord> read_tensor(std::istream& is, const std::string& source);

void save_tensor(const std::filesystem::path& path, const Tensor& t, DType dtype = DType::F32);
Tensor load_tensor(const std::filesystem::path& path);

}  // namespace vstpose::io
