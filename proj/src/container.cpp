#include "vstpose/container.hpp"

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <stdexcept>

namespace vstpose::io {
namespace {

constexpr std::size_t kMaxHeaderBytes = 1 << 16;

template <typename U>
U to_little(U v) {
  if constexpr (std::endian::native == std::endian::big) {
    U out = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) {
      out = static_cast<U>((out << 8) | ((v >> (8 * i)) & 0xFF));
    }
    return out;
  }
  return v;
}

std::runtime_error format_error(const std::string& source, const std::string& what) {
  return std::runtime_error(source + ": " + what);
}

}  // namespace

std::string to_string(DType dtype) { return dtype == DType::F32 ? "f32" : "f64"; }

DType dtype_from_string(const std::string& s) {
  if (s == "f32") return DType::F32;
  if (s == "f64") return DType::F64;
  throw std::invalid_argument("unsupported dtype '" + s + "'");
}

void write_tensor(std::ostream& os, const Tensor& t, DType dtype, const nlohmann::json& extra) {
  nlohmann::json header = extra.is_object() ? extra : nlohmann::json::object();
  header["dtype"] = to_string(dtype);
  header["shape"] = t.shape();
  const std::string line = header.dump() + "\n";
  os.write(line.data(), static_cast<std::streamsize>(line.size()));
  if (dtype == DType::F32) {
    for (double v : t.data()) {
      const auto bits = to_little(std::bit_cast<std::uint32_t>(static_cast<float>(v)));
      os.write(reinterpret_cast<const char*>(&bits), sizeof(bits));
    }
  } else {
    for (double v : t.data()) {
      const auto bits = to_little(std::bit_cast<std::uint64_t>(v));
      os.write(reinterpret_cast<const char*>(&bits), sizeof(bits));
    }
  }
  if (!os) throw std::runtime_error("failed writing tensor payload");
}

std::optional<TensorRecord> read_tensor(std::istream& is, const std::string& source) {
  std::string line;
  char c = 0;
  bool any = false;
  while (is.get(c)) {
    any = true;
    if (c == '\n') break;
    line.push_back(c);
    if (line.size() > kMaxHeaderBytes) throw format_error(source, "header line too long");
  }
  if (!any) return std::nullopt;
  if (c != '\n') throw format_error(source, "truncated header (no newline)");

  TensorRecord rec;
  try {
    rec.header = nlohmann::json::parse(line);
    rec.dtype = dtype_from_string(rec.header.at("dtype").get<std::string>());
    const auto shape = rec.header.at("shape").get<Shape>();
    rec.tensor = Tensor(shape);
  } catch (const std::exception& e) {
    throw format_error(source, std::string("malformed header: ") + e.what());
  }
  const std::size_t n = rec.tensor.numel();
  if (rec.dtype == DType::F32) {
    std::vector<std::uint32_t> raw(n);
    is.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(n * sizeof(std::uint32_t)));
    if (static_cast<std::size_t>(is.gcount()) != n * sizeof(std::uint32_t)) {
      throw format_error(source, "truncated payload");
    }
    for (std::size_t i = 0; i < n; ++i) rec.tensor[i] = std::bit_cast<float>(to_little(raw[i]));
  } else {
    std::vector<std::uint64_t> raw(n);
    is.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(n * sizeof(std::uint64_t)));
    if (static_cast<std::size_t>(is.gcount()) != n * sizeof(std::uint64_t)) {
      throw format_error(source, "truncated payload");
    }
    for (std::size_t i = 0; i < n; ++i) rec.tensor[i] = std::bit_cast<double>(to_little(raw[i]));
  }
  return rec;
}

void save_tensor(const std::filesystem::path& path, const Tensor& t, DType dtype) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error(path.string() + ": cannot open for writing");
  write_tensor(os, t, dtype);
}

Tensor load_tensor(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error(path.string() + ": cannot open for reading");
  auto rec = read_tensor(is, path.string());
  if (!rec) throw std::runtime_error(path.string() + ": empty tensor file");
  if (is.peek() != std::char_traits<char>::eof()) {
    throw std::runtime_error(path.string() + ": trailing bytes after tensor payload");
  }
  return std::move(rec->tensor);
}

}  // namespace vstpose::io
