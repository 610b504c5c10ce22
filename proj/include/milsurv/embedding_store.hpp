#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "milsurv/embedding.hpp"

namespace milsurv::tiling {

// Binary embedding store, all integers and floats little-endian:
//
//   offset  size  field
//   0       8     magic "MILSEMB\x1A"
//   8       4     u32 format version (= 1)
//   12      4     u32 bag count
//   then per bag:
//           4     u32 patient id length L
//           L     patient id bytes (UTF-8)
//           4     u32 encoder tag (0 uni2, 1 virchow2, 2 conch, 3 ensemble, 4 synthetic)
//           4     u32 dim
//           4     u32 tile count N
//           4*N*dim  f32 payload, tile-major
//
// Bags are self-delimiting so the file can be streamed bag by bag.
inline constexpr char kStoreMagic[8] = {'M', 'I', 'L', 'S', 'E', 'M', 'B', '\x1A'};
inline constexpr std::uint32_t kStoreVersion = 1;

std::vector<std::uint8_t> encode_store(const std::vector<EmbeddingBag>& bags);
// Throws FormatError naming the byte offset of the first problem.
std::vector<EmbeddingBag> decode_store(const std::vector<std::uint8_t>& bytes);

void write_store(const std::string& path, const std::vector<EmbeddingBag>& bags);
std::vector<EmbeddingBag> read_store(const std::string& path);

}  // namespace milsurv::tiling
