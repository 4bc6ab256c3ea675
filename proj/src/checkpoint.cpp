#include <zlib.h>

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "uicl/errors.hpp"
#include "uicl/masked_dit.hpp"

namespace uicl {
namespace {

constexpr std::array<std::uint8_t, 4> kMagic{'U', 'I', 'C', 'L'};
constexpr std::uint32_t kVersion = 1;
constexpr std::size_t kHeaderBytes = 4 + 4 + 6 * 4;

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t get_u32(std::span<const std::uint8_t> bytes, std::size_t pos) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes[pos + i]) << (8 * i);
  return v;
}

std::uint32_t crc_of(std::span<const std::uint8_t> bytes) {
  uLong crc = crc32(0L, Z_NULL, 0);
  return static_cast<std::uint32_t>(
      crc32(crc, bytes.data(), static_cast<uInt>(bytes.size())));
}

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const ModelParameters& params) {
  const ModelConfig& c = params.config;
  std::vector<std::uint8_t> out(kMagic.begin(), kMagic.end());
  out.reserve(kHeaderBytes + 4 * params.values.size() + 4);
  put_u32(out, kVersion);
  for (std::size_t v : {c.n_regions, c.hidden_dim, c.n_layers, c.n_heads, c.ref_dim, c.steps}) {
    put_u32(out, static_cast<std::uint32_t>(v));
  }
  for (const auto& t : params.layout.tensors) {
    for (std::size_t i = 0; i < t.size(); ++i) {
      const auto f = static_cast<float>(params.values[t.offset + i]);
      put_u32(out, std::bit_cast<std::uint32_t>(f));
    }
  }
  put_u32(out, crc_of(out));
  return out;
}

ModelParameters decode_checkpoint(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < kHeaderBytes + 4) throw DataError("checkpoint truncated: header incomplete");
  if (!std::equal(kMagic.begin(), kMagic.end(), bytes.begin())) {
    throw DataError("not a checkpoint: bad magic bytes");
  }
  if (const auto version = get_u32(bytes, 4); version != kVersion) {
    throw DataError("unsupported checkpoint version " + std::to_string(version));
  }
  ModelConfig c;
  c.n_regions = get_u32(bytes, 8);
  c.hidden_dim = get_u32(bytes, 12);
  c.n_layers = get_u32(bytes, 16);
  c.n_heads = get_u32(bytes, 20);
  c.ref_dim = get_u32(bytes, 24);
  c.steps = get_u32(bytes, 28);
  try {
    c.validate();
  } catch (const ConfigError& e) {
    throw DataError(std::string("checkpoint header has an invalid shape: ") + e.what());
  }
  ModelParameters p{c, ParameterLayout(c), {}};
  const std::size_t expected = kHeaderBytes + 4 * p.layout.total + 4;
  if (bytes.size() < expected) throw DataError("checkpoint truncated: tensor data incomplete");
  if (bytes.size() > expected) throw DataError("checkpoint shape mismatch: trailing bytes");
  const std::uint32_t stored = get_u32(bytes, expected - 4);
  if (stored != crc_of(bytes.first(expected - 4))) throw DataError("checkpoint CRC mismatch");

  p.values.resize(p.layout.total);
  std::size_t pos = kHeaderBytes;
  for (const auto& t : p.layout.tensors) {
    for (std::size_t i = 0; i < t.size(); ++i, pos += 4) {
      p.values[t.offset + i] = static_cast<double>(std::bit_cast<float>(get_u32(bytes, pos)));
    }
  }
  return p;
}

void save_checkpoint(const ModelParameters& params, const std::filesystem::path& path) {
  const auto bytes = encode_checkpoint(params);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write checkpoint " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("write failed for checkpoint " + path.string());
}

ModelParameters load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path.string());
  const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                        std::istreambuf_iterator<char>());
  try {
    return decode_checkpoint(bytes);
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

}  // namespace uicl
