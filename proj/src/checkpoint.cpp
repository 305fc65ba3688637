#include "vlt/checkpoint.hpp"

#include <cstring>
#include <fstream>

namespace vlt::checkpoint {

namespace {

constexpr char kMagic[4] = {'V', 'L', 'T', 'C'};
constexpr std::uint32_t kVersion = 1;

void append_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back((v >> (8 * i)) & 0xff);
}

void append_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back((v >> (8 * i)) & 0xff);
}

struct Reader {
  const std::vector<std::uint8_t>& b;
  std::size_t pos = 0;

  void need(std::size_t n) const {
    if (pos + n > b.size()) throw FormatError("checkpoint: truncated");
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t(b[pos + i]) << (8 * i);
    pos += 4;
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= std::uint64_t(b[pos + i]) << (8 * i);
    pos += 8;
    return v;
  }
  std::uint8_t u8() {
    need(1);
    return b[pos++];
  }
  std::string str(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(b.data() + pos), n);
    pos += n;
    return s;
  }
};

}  // namespace

std::uint32_t crc32(const std::uint8_t* data, std::size_t len) {
  static std::uint32_t table[256];
  static bool ready = false;
  if (!ready) {
    for (std::uint32_t i = 0; i < 256; ++i) {
      std::uint32_t c = i;
      for (int k = 0; k < 8; ++k)
        c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
      table[i] = c;
    }
    ready = true;
  }
  std::uint32_t c = 0xFFFFFFFFu;
  for (std::size_t i = 0; i < len; ++i)
    c = table[(c ^ data[i]) & 0xff] ^ (c >> 8);
  return c ^ 0xFFFFFFFFu;
}

std::vector<std::uint8_t> serialize(const model::ModelParams& m) {
  std::vector<std::uint8_t> out;
  out.insert(out.end(), kMagic, kMagic + 4);
  append_u32(out, kVersion);
  const auto named = m.named_tensors();
  append_u32(out, static_cast<std::uint32_t>(named.size()));
  for (const auto& [name, t] : named) {
    append_u32(out, static_cast<std::uint32_t>(name.size()));
    out.insert(out.end(), name.begin(), name.end());
    append_u32(out, static_cast<std::uint32_t>(t.rank()));
    for (std::size_t i = 0; i < t.rank(); ++i)
      append_u32(out, static_cast<std::uint32_t>(t.dim(i)));
    out.push_back(t.dtype() == DType::F32 ? 0 : 1);
    for (std::int64_t i = 0; i < t.size(); ++i) {
      if (t.dtype() == DType::F32) {
        const auto f = static_cast<float>(t.at(i));
        std::uint32_t bits;
        std::memcpy(&bits, &f, 4);
        append_u32(out, bits);
      } else {
        const double d = t.at(i);
        std::uint64_t bits;
        std::memcpy(&bits, &d, 8);
        append_u64(out, bits);
      }
    }
  }
  append_u32(out, crc32(out.data(), out.size()));
  return out;
}

void deserialize(model::ModelParams& m, const std::vector<std::uint8_t>& blob) {
  if (blob.size() < 12 || std::memcmp(blob.data(), kMagic, 4) != 0)
    throw FormatError("checkpoint: bad magic");
  const std::uint32_t stored_crc =
      std::uint32_t(blob[blob.size() - 4]) |
      std::uint32_t(blob[blob.size() - 3]) << 8 |
      std::uint32_t(blob[blob.size() - 2]) << 16 |
      std::uint32_t(blob[blob.size() - 1]) << 24;
  if (crc32(blob.data(), blob.size() - 4) != stored_crc)
    throw FormatError("checkpoint: CRC mismatch");
  Reader r{blob, 4};
  if (r.u32() != kVersion)
    throw FormatError("checkpoint: unsupported version");
  auto named = m.named_tensors();
  const std::uint32_t count = r.u32();
  if (count != named.size())
    throw FormatError("checkpoint: tensor count mismatch");
  // Parse and validate everything into staging before mutating the model.
  std::vector<std::vector<double>> staged(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    auto& [name, t] = named[i];
    const std::uint32_t nlen = r.u32();
    if (r.str(nlen) != name)
      throw FormatError("checkpoint: tensor name mismatch at index " +
                        std::to_string(i));
    const std::uint32_t rank = r.u32();
    if (rank != t.rank()) throw FormatError("checkpoint: rank mismatch: " + name);
    for (std::uint32_t d = 0; d < rank; ++d)
      if (static_cast<std::int64_t>(r.u32()) != t.dim(d))
        throw FormatError("checkpoint: shape mismatch: " + name);
    const std::uint8_t dt = r.u8();
    if (dt != (t.dtype() == DType::F32 ? 0 : 1))
      throw FormatError("checkpoint: dtype mismatch: " + name);
    staged[i].resize(t.size());
    for (std::int64_t k = 0; k < t.size(); ++k) {
      if (dt == 0) {
        const std::uint32_t bits = r.u32();
        float f;
        std::memcpy(&f, &bits, 4);
        staged[i][k] = f;
      } else {
        const std::uint64_t bits = r.u64();
        double d;
        std::memcpy(&d, &bits, 8);
        staged[i][k] = d;
      }
    }
  }
  if (r.pos != blob.size() - 4)
    throw FormatError("checkpoint: trailing bytes");
  for (std::uint32_t i = 0; i < count; ++i)
    named[i].second.mutable_data() = std::move(staged[i]);
}

void save_checkpoint(const std::string& path, const model::ModelParams& m) {
  const auto blob = serialize(m);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("checkpoint: cannot write " + path);
  out.write(reinterpret_cast<const char*>(blob.data()),
            static_cast<std::streamsize>(blob.size()));
}

void load_checkpoint(const std::string& path, model::ModelParams& m) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("checkpoint: cannot open " + path);
  std::vector<std::uint8_t> blob((std::istreambuf_iterator<char>(in)),
                                 std::istreambuf_iterator<char>());
  deserialize(m, blob);
}

}  // namespace vlt::checkpoint
