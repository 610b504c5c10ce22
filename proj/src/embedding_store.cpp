#include "milsurv/embedding_store.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "milsurv/errors.hpp"

namespace milsurv::tiling {

namespace {

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& b) : b_(b) {}

  std::size_t offset() const noexcept { return pos_; }
  bool done() const noexcept { return pos_ == b_.size(); }

  void need(std::size_t n, const char* what) const {
    if (b_.size() - pos_ < n)
      throw FormatError(std::string("truncated embedding store while reading ") + what, pos_);
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::string bytes(std::size_t n, const char* what) {
    need(n, what);
    std::string s(reinterpret_cast<const char*>(b_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  void floats(std::vector<float>& dst, std::size_t n) {
    if (n > (b_.size() - pos_) / 4) throw FormatError("truncated embedding store in tile payload", pos_);
    dst.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      const std::uint32_t bits = static_cast<std::uint32_t>(b_[pos_]) | static_cast<std::uint32_t>(b_[pos_ + 1]) << 8 |
                                 static_cast<std::uint32_t>(b_[pos_ + 2]) << 16 |
                                 static_cast<std::uint32_t>(b_[pos_ + 3]) << 24;
      dst[i] = std::bit_cast<float>(bits);
      pos_ += 4;
    }
  }

 private:
  const std::vector<std::uint8_t>& b_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> encode_store(const std::vector<EmbeddingBag>& bags) {
  std::vector<std::uint8_t> out(std::begin(kStoreMagic), std::end(kStoreMagic));
  put_u32(out, kStoreVersion);
  put_u32(out, static_cast<std::uint32_t>(bags.size()));
  for (const auto& b : bags) {
    put_u32(out, static_cast<std::uint32_t>(b.patient_id().size()));
    out.insert(out.end(), b.patient_id().begin(), b.patient_id().end());
    put_u32(out, static_cast<std::uint32_t>(b.provenance()));
    put_u32(out, static_cast<std::uint32_t>(b.dim()));
    put_u32(out, static_cast<std::uint32_t>(b.size()));
    for (float f : b.data()) put_u32(out, std::bit_cast<std::uint32_t>(f));
  }
  return out;
}

std::vector<EmbeddingBag> decode_store(const std::vector<std::uint8_t>& bytes) {
  Reader r(bytes);
  const auto magic = r.bytes(sizeof(kStoreMagic), "magic");
  if (std::memcmp(magic.data(), kStoreMagic, sizeof(kStoreMagic)) != 0)
    throw FormatError("embedding store magic number mismatch", 0);
  const auto version = r.u32("version");
  if (version != kStoreVersion)
    throw FormatError("unsupported embedding store version " + std::to_string(version), r.offset() - 4);
  const auto count = r.u32("bag count");

  std::vector<EmbeddingBag> bags;
  for (std::uint32_t k = 0; k < count; ++k) {
    const auto id_len = r.u32("patient id length");
    auto id = r.bytes(id_len, "patient id");
    const std::size_t tag_at = r.offset();
    const auto tag = r.u32("encoder tag");
    if (tag > static_cast<std::uint32_t>(Encoder::Synthetic))
      throw FormatError("unknown encoder tag " + std::to_string(tag), tag_at);
    const std::size_t dim_at = r.offset();
    const auto dim = r.u32("dim");
    const auto tiles = r.u32("tile count");
    if (dim == 0) throw FormatError("zero embedding dim", dim_at);
    std::vector<float> data;
    r.floats(data, static_cast<std::size_t>(dim) * tiles);
    try {
      bags.emplace_back(std::move(id), static_cast<Encoder>(tag), static_cast<int>(dim), std::move(data));
    } catch (const ValidationError& e) {
      throw FormatError(e.what(), dim_at);
    }
  }
  if (!r.done()) throw FormatError("trailing bytes after last bag", r.offset());
  return bags;
}

void write_store(const std::string& path, const std::vector<EmbeddingBag>& bags) {
  const auto bytes = encode_store(bags);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write embedding store " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("short write to " + path);
}

std::vector<EmbeddingBag> read_store(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open embedding store " + path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_store(bytes);
}

}  // namespace milsurv::tiling
