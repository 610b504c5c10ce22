#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace milsurv::tiling {

struct TissueMask {
  int width = 0;
  int height = 0;
  double resolution_um = 1.0;        // micrometres per pixel
  std::vector<std::uint8_t> bitmap;  // row-major, nonzero = tissue

  void validate() const;
  bool tissue(int x, int y) const { return bitmap[static_cast<std::size_t>(y) * width + x] != 0; }
};

struct TilePosition {
  int x = 0;  // top-left column
  int y = 0;  // top-left row
  friend bool operator==(const TilePosition&, const TilePosition&) = default;
};

struct TileGrid {
  int tile_size = 0;
  int stride = 0;
  int lattice_cols = 0;  // full lattice before tissue filtering
  int lattice_rows = 0;
  std::vector<TilePosition> positions;  // retained, row-major lattice order
  std::vector<double> tissue_fraction;  // aligned with positions
};

// Stride lattice of fully contained tiles (no partial tiles at the right or
// bottom edge), keeping those whose tissue fraction is >= min_tissue_fraction.
TileGrid enumerate_tiles(const TissueMask& mask, int tile_size, int stride, double min_tissue_fraction);

// Binary PGM (P5, maxval <= 255). Resolution comes from the sidecar file
// `<path>.mpp` holding a single number (um/pixel); 1.0 when absent.
TissueMask read_pgm_mask(const std::string& path);
void write_pgm_mask(const std::string& path, const TissueMask& mask);

}  // namespace milsurv::tiling
