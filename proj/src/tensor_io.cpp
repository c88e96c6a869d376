#include "fga/tensor_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <set>

namespace fga {

namespace {

constexpr char kMagic[4] = {'F', 'G', 'A', 'K'};

void put_u32(std::string& buf, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void put_u64(std::string& buf, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

struct Reader {
  std::string bytes;
  std::size_t pos = 0;
  std::string path;

  void need(std::size_t n) const {
    if (pos + n > bytes.size())
      throw FormatError("tensor file '" + path + "': truncated");
  }
  std::uint8_t u8() {
    need(1);
    return static_cast<std::uint8_t>(bytes[pos++]);
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
      v |= static_cast<std::uint32_t>(static_cast<std::uint8_t>(bytes[pos++])) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i)
      v |= static_cast<std::uint64_t>(static_cast<std::uint8_t>(bytes[pos++])) << (8 * i);
    return v;
  }
  std::string str(std::size_t n) {
    need(n);
    std::string s = bytes.substr(pos, n);
    pos += n;
    return s;
  }
};

static_assert(std::endian::native == std::endian::little ||
                  std::endian::native == std::endian::big,
              "mixed-endian platforms unsupported");

}  // namespace

void write_tensor_file(const std::string& path, const NamedTensors& tensors) {
  std::set<std::string> seen;
  for (const auto& [name, t] : tensors) {
    if (!seen.insert(name).second)
      throw FormatError("tensor file: duplicate tensor name '" + name + "'");
    (void)t;
  }

  std::string buf;
  buf.append(kMagic, 4);
  put_u32(buf, kTensorFileVersion);
  put_u32(buf, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, t] : tensors) {
    put_u32(buf, static_cast<std::uint32_t>(name.size()));
    buf.append(name);
    buf.push_back(sizeof(scalar) == 8 ? 1 : 0);  // dtype
    buf.push_back(static_cast<char>(t.rank()));
    for (std::size_t d : t.shape) put_u64(buf, d);
    for (scalar v : t.data) {
      if constexpr (sizeof(scalar) == 4) {
        auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(v));
        for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((bits >> (8 * i)) & 0xFF));
      } else {
        auto bits = std::bit_cast<std::uint64_t>(static_cast<double>(v));
        put_u64(buf, bits);
      }
    }
  }

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open '" + path + "' for writing");
  f.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!f) throw IoError("write failed for '" + path + "'");
}

NamedTensors read_tensor_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open '" + path + "'");
  Reader r;
  r.path = path;
  r.bytes.assign(std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>());

  if (r.str(4) != std::string(kMagic, 4))
    throw FormatError("tensor file '" + path + "': bad magic");
  std::uint32_t version = r.u32();
  if (version != kTensorFileVersion)
    throw FormatError("tensor file '" + path + "': version " + std::to_string(version) +
                      ", expected " + std::to_string(kTensorFileVersion));
  std::uint32_t count = r.u32();

  NamedTensors out;
  std::set<std::string> seen;
  for (std::uint32_t i = 0; i < count; ++i) {
    std::uint32_t name_len = r.u32();
    std::string name = r.str(name_len);
    if (!seen.insert(name).second)
      throw FormatError("tensor file '" + path + "': duplicate name '" + name + "'");
    std::uint8_t dtype = r.u8();
    if (dtype > 1)
      throw FormatError("tensor file '" + path + "': unknown dtype code " +
                        std::to_string(dtype));
    std::uint8_t rank = r.u8();
    std::vector<std::size_t> shape(rank);
    std::size_t numel = rank == 0 ? 0 : 1;
    for (std::uint8_t d = 0; d < rank; ++d) {
      std::uint64_t dim = r.u64();
      if (dim == 0) throw FormatError("tensor file '" + path + "': zero dimension");
      shape[d] = static_cast<std::size_t>(dim);
      numel *= shape[d];
    }
    Tensor t(shape);
    if (dtype == 0) {
      for (std::size_t k = 0; k < numel; ++k) {
        std::uint32_t bits = r.u32();
        t.data[k] = static_cast<scalar>(std::bit_cast<float>(bits));
      }
    } else {
      for (std::size_t k = 0; k < numel; ++k) {
        std::uint64_t bits = r.u64();
        t.data[k] = static_cast<scalar>(std::bit_cast<double>(bits));
      }
    }
    out.emplace_back(std::move(name), std::move(t));
  }
  if (r.pos != r.bytes.size())
    throw FormatError("tensor file '" + path + "': trailing bytes");
  return out;
}

const Tensor& find_tensor(const NamedTensors& tensors, const std::string& name) {
  for (const auto& [n, t] : tensors)
    if (n == name) return t;
  throw FormatError("tensor '" + name + "' not found");
}

}  // namespace fga
