#include "aspectminer/safetensors.hpp"

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <functional>
#include <numeric>

#include "aspectminer/errors.hpp"
#include "json.hpp"

namespace aspectminer {

namespace {

static_assert(std::endian::native == std::endian::little, "safetensors I/O assumes a little-endian host");

double half_to_double(std::uint16_t h) {
  const int sign = (h >> 15) & 1;
  const int exp = (h >> 10) & 0x1F;
  const int mant = h & 0x3FF;
  double v;
  if (exp == 0) {
    v = std::ldexp(static_cast<double>(mant), -24);
  } else if (exp == 31) {
    v = mant ? std::nan("") : INFINITY;
  } else {
    v = std::ldexp(static_cast<double>(mant | 0x400), exp - 25);
  }
  return sign ? -v : v;
}

double bf16_to_double(std::uint16_t h) {
  const std::uint32_t bits = static_cast<std::uint32_t>(h) << 16;
  return static_cast<double>(std::bit_cast<float>(bits));
}

std::size_t dtype_size(const std::string& dtype) {
  if (dtype == "F64") return 8;
  if (dtype == "F32") return 4;
  if (dtype == "F16" || dtype == "BF16") return 2;
  return 0;
}

}  // namespace

std::size_t Tensor::numel() const {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

SafetensorsFile read_safetensors(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("cannot open weights file " + path.string());
  std::uint64_t header_len = 0;
  in.read(reinterpret_cast<char*>(&header_len), 8);
  if (!in || header_len > (std::uint64_t{1} << 30)) throw FormatError(path.string() + ": bad safetensors header");
  std::string header(header_len, '\0');
  in.read(header.data(), static_cast<std::streamsize>(header_len));
  if (!in) throw FormatError(path.string() + ": truncated safetensors header");
  const auto data_start = static_cast<std::uint64_t>(in.tellg());
  in.seekg(0, std::ios::end);
  const auto data_len = static_cast<std::uint64_t>(in.tellg()) - data_start;
  in.seekg(static_cast<std::streamoff>(data_start));

  nlohmann::json j;
  try {
    j = nlohmann::json::parse(header);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": header is not JSON: " + e.what());
  }

  SafetensorsFile file;
  std::vector<char> buffer;
  for (const auto& [name, entry] : j.items()) {
    if (name == "__metadata__") {
      for (const auto& [k, v] : entry.items()) file.metadata[k] = v.get<std::string>();
      continue;
    }
    const auto dtype = entry.at("dtype").get<std::string>();
    const std::size_t width = dtype_size(dtype);
    if (width == 0) throw FormatError(path.string() + ": tensor " + name + " has unsupported dtype " + dtype);
    Tensor t;
    t.shape = entry.at("shape").get<std::vector<std::size_t>>();
    const auto offsets = entry.at("data_offsets").get<std::vector<std::uint64_t>>();
    if (offsets.size() != 2 || offsets[1] < offsets[0] || offsets[1] > data_len ||
        offsets[1] - offsets[0] != t.numel() * width) {
      throw FormatError(path.string() + ": tensor " + name + " has inconsistent data offsets");
    }
    buffer.resize(offsets[1] - offsets[0]);
    in.seekg(static_cast<std::streamoff>(data_start + offsets[0]));
    in.read(buffer.data(), static_cast<std::streamsize>(buffer.size()));
    if (!in) throw FormatError(path.string() + ": truncated tensor data for " + name);
    t.data.resize(t.numel());
    for (std::size_t i = 0; i < t.data.size(); ++i) {
      const char* p = buffer.data() + i * width;
      if (dtype == "F64") {
        std::memcpy(&t.data[i], p, 8);
      } else if (dtype == "F32") {
        float f;
        std::memcpy(&f, p, 4);
        t.data[i] = f;
      } else {
        std::uint16_t h;
        std::memcpy(&h, p, 2);
        t.data[i] = dtype == "F16" ? half_to_double(h) : bf16_to_double(h);
      }
    }
    file.tensors.emplace(name, std::move(t));
  }
  return file;
}

void write_safetensors(const std::filesystem::path& path, const TensorMap& tensors,
                       const std::map<std::string, std::string>& metadata) {
  nlohmann::ordered_json header = nlohmann::ordered_json::object();
  if (!metadata.empty()) header["__metadata__"] = metadata;
  std::uint64_t offset = 0;
  for (const auto& [name, t] : tensors) {
    if (t.data.size() != t.numel()) throw UsageError("tensor " + name + " data does not match its shape");
    const std::uint64_t bytes = t.data.size() * 8;
    header[name] = {{"dtype", "F64"}, {"shape", t.shape}, {"data_offsets", {offset, offset + bytes}}};
    offset += bytes;
  }
  std::string text = header.dump();
  while ((text.size() + 8) % 8 != 0) text.push_back(' ');
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw LoadError("cannot write weights file " + path.string());
  const std::uint64_t len = text.size();
  out.write(reinterpret_cast<const char*>(&len), 8);
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& [name, t] : tensors) {
    out.write(reinterpret_cast<const char*>(t.data.data()), static_cast<std::streamsize>(t.data.size() * 8));
  }
  if (!out) throw LoadError("failed writing " + path.string());
}

}  // namespace aspectminer
