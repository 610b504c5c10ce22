#include "milsurv/tiling.hpp"

#include <fstream>
#include <sstream>

#include "milsurv/errors.hpp"

namespace milsurv::tiling {

void TissueMask::validate() const {
  if (width < 1 || height < 1) throw ValidationError("mask dimensions must be >= 1");
  if (bitmap.size() != static_cast<std::size_t>(width) * static_cast<std::size_t>(height))
    throw ValidationError("mask bitmap length does not equal width*height");
  if (!(resolution_um > 0.0)) throw ValidationError("mask resolution must be > 0");
}

TileGrid enumerate_tiles(const TissueMask& mask, int tile_size, int stride, double min_tissue_fraction) {
  mask.validate();
  if (tile_size < 1 || tile_size > std::min(mask.width, mask.height))
    throw PreconditionError("tile size " + std::to_string(tile_size) + " does not fit a " +
                            std::to_string(mask.width) + "x" + std::to_string(mask.height) + " mask");
  if (stride < 1 || stride > tile_size) throw PreconditionError("stride must satisfy 0 < stride <= tile size");

  // Summed-area table with a zero row/column so tile sums are four lookups.
  const std::size_t w1 = static_cast<std::size_t>(mask.width) + 1;
  std::vector<std::uint32_t> sat(w1 * (static_cast<std::size_t>(mask.height) + 1), 0);
  for (int y = 0; y < mask.height; ++y) {
    std::uint32_t row = 0;
    for (int x = 0; x < mask.width; ++x) {
      row += mask.tissue(x, y) ? 1u : 0u;
      sat[(y + 1) * w1 + (x + 1)] = sat[y * w1 + (x + 1)] + row;
    }
  }
  const auto box = [&](int x, int y) {
    const std::size_t x0 = x, y0 = y, x1 = x + tile_size, y1 = y + tile_size;
    return sat[y1 * w1 + x1] + sat[y0 * w1 + x0] - sat[y0 * w1 + x1] - sat[y1 * w1 + x0];
  };

  TileGrid g;
  g.tile_size = tile_size;
  g.stride = stride;
  g.lattice_cols = (mask.width - tile_size) / stride + 1;
  g.lattice_rows = (mask.height - tile_size) / stride + 1;
  const double area = static_cast<double>(tile_size) * tile_size;
  for (int r = 0; r < g.lattice_rows; ++r)
    for (int c = 0; c < g.lattice_cols; ++c) {
      const int x = c * stride, y = r * stride;
      const double frac = box(x, y) / area;
      if (frac >= min_tissue_fraction) {
        g.positions.push_back({x, y});
        g.tissue_fraction.push_back(frac);
      }
    }
  return g;
}

namespace {

std::string next_token(std::istream& in) {
  std::string tok;
  char c;
  while (in.get(c)) {
    if (c == '#') {
      std::string skip;
      std::getline(in, skip);
      continue;
    }
    if (std::isspace(static_cast<unsigned char>(c))) {
      if (!tok.empty()) return tok;
      continue;
    }
    tok.push_back(c);
  }
  return tok;
}

}  // namespace

TissueMask read_pgm_mask(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open mask " + path, 0);
  if (next_token(in) != "P5") throw ParseError(path + ": not a binary PGM (expected P5)", 0);
  TissueMask m;
  int maxval = 0;
  try {
    m.width = std::stoi(next_token(in));
    m.height = std::stoi(next_token(in));
    maxval = std::stoi(next_token(in));
  } catch (const std::exception&) {
    throw ParseError(path + ": malformed PGM header", 0);
  }
  if (m.width < 1 || m.height < 1 || maxval < 1 || maxval > 255)
    throw ParseError(path + ": unsupported PGM geometry or maxval", 0);
  // next_token consumed exactly one whitespace byte after maxval.
  m.bitmap.resize(static_cast<std::size_t>(m.width) * m.height);
  in.read(reinterpret_cast<char*>(m.bitmap.data()), static_cast<std::streamsize>(m.bitmap.size()));
  if (in.gcount() != static_cast<std::streamsize>(m.bitmap.size())) throw ParseError(path + ": truncated pixel data", 0);
  for (auto& px : m.bitmap) px = px ? 1 : 0;

  std::ifstream side(path + ".mpp");
  if (side) {
    if (!(side >> m.resolution_um) || !(m.resolution_um > 0.0))
      throw ParseError(path + ".mpp: expected a positive um/pixel value", 1);
  }
  return m;
}

void write_pgm_mask(const std::string& path, const TissueMask& mask) {
  mask.validate();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path);
  out << "P5\n" << mask.width << ' ' << mask.height << "\n255\n";
  for (auto px : mask.bitmap) out.put(px ? static_cast<char>(255) : 0);
  std::ofstream side(path + ".mpp");
  side << mask.resolution_um << '\n';
}

}  // namespace milsurv::tiling
