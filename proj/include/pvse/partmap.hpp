#ifndef PVSE_PARTMAP_HPP_
#define PVSE_PARTMAP_HPP_

#include <array>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "pvse/binary_io.hpp"
#include "pvse/error.hpp"
#include "pvse/part_scheme.hpp"

namespace pvse {

// Argmax label map, row-major.
struct SegmentationMap {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<Label> labels;

  SegmentationMap() = default;
  SegmentationMap(std::size_t h, std::size_t w, Label fill = 0) : height(h), width(w), labels(h * w, fill) {}

  Label& at(std::size_t r, std::size_t c) { return labels[r * width + c]; }
  Label at(std::size_t r, std::size_t c) const { return labels[r * width + c]; }

  bool operator==(const SegmentationMap&) const = default;
};

// Half-open pixel rectangle [row_begin, row_end) x [col_begin, col_end).
struct CellBounds {
  std::size_t row_begin, row_end, col_begin, col_end;
  bool operator==(const CellBounds&) const = default;
};

// Bounds of grid cell (i, j), zero-based. Cell edges sit at floor(i * H / I),
// so when H is not a multiple of I the trailing cells absorb the remainder.
inline CellBounds GridCellBounds(std::size_t height, std::size_t width, std::size_t grid_rows,
                                 std::size_t grid_cols, std::size_t i, std::size_t j) {
  if (grid_rows == 0 || grid_cols == 0) throw ArgumentError("grid dimensions must be positive");
  if (i >= grid_rows || j >= grid_cols)
    throw ArgumentError("grid cell (" + std::to_string(i) + "," + std::to_string(j) + ") out of range");
  return {i * height / grid_rows, (i + 1) * height / grid_rows, j * width / grid_cols,
          (j + 1) * width / grid_cols};
}

// Per-part distribution of a part's pixels over the grid.
struct GridWeightMap {
  std::size_t rows = 0, cols = 0, parts = 0;
  std::vector<double> weights;           // [l][i][j]
  std::vector<std::uint32_t> pixel_counts;  // [l][i][j]
  std::vector<bool> present;             // [l]

  std::size_t offset(std::size_t l, std::size_t i, std::size_t j) const { return (l * rows + i) * cols + j; }
  double weight(std::size_t l, std::size_t i, std::size_t j) const { return weights[offset(l, i, j)]; }
  std::uint32_t count(std::size_t l, std::size_t i, std::size_t j) const { return pixel_counts[offset(l, i, j)]; }
};

// Per-cell composition: fraction of each cell's pixels (background included
// in the denominator) that belong to each part.
struct GridPartFractions {
  std::size_t rows = 0, cols = 0, parts = 0;
  std::vector<double> fractions;             // [i][j][l]
  std::vector<std::uint32_t> part_counts;    // [i][j][l]
  std::vector<std::uint32_t> cell_totals;    // [i][j]

  std::size_t offset(std::size_t i, std::size_t j, std::size_t l) const { return (i * cols + j) * parts + l; }
  double fraction(std::size_t i, std::size_t j, std::size_t l) const { return fractions[offset(i, j, l)]; }
  std::uint32_t total(std::size_t i, std::size_t j) const { return cell_totals[i * cols + j]; }

  // Foreground part with the most pixels in the cell (lowest index on ties),
  // or -1 when the cell holds only background.
  long dominant_part(std::size_t i, std::size_t j) const {
    long best = -1;
    std::uint32_t best_count = 0;
    for (std::size_t l = 0; l < parts; ++l) {
      std::uint32_t c = part_counts[offset(i, j, l)];
      if (c > best_count) {
        best_count = c;
        best = static_cast<long>(l);
      }
    }
    return best;
  }
};

namespace detail {

struct PixelTally {
  std::vector<std::uint32_t> part_counts;  // [i][j][l]
  std::vector<std::uint32_t> totals;       // [i][j]
};

inline PixelTally TallyPixels(const SegmentationMap& seg, const PartScheme& scheme, std::size_t rows,
                              std::size_t cols) {
  if (rows == 0 || cols == 0) throw ArgumentError("grid dimensions must be positive");
  if (rows > seg.height || cols > seg.width)
    throw ArgumentError("grid " + std::to_string(rows) + "x" + std::to_string(cols) +
                        " finer than image " + std::to_string(seg.height) + "x" + std::to_string(seg.width));
  if (seg.labels.size() != seg.height * seg.width) throw ArgumentError("segmentation size mismatch");

  // Raw label -> part index + 1 (0 = background); 0xff marks unknown labels.
  std::array<std::uint8_t, 256> lut{};
  lut.fill(0xff);
  for (const auto& [label, part] : scheme.label_to_part())
    lut[label] = part ? static_cast<std::uint8_t>(*part + 1) : 0;

  const std::size_t L = scheme.num_parts();
  PixelTally tally{std::vector<std::uint32_t>(rows * cols * L, 0), std::vector<std::uint32_t>(rows * cols, 0)};
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < cols; ++j) {
      CellBounds b = GridCellBounds(seg.height, seg.width, rows, cols, i, j);
      std::uint32_t* counts = &tally.part_counts[(i * cols + j) * L];
      for (std::size_t r = b.row_begin; r < b.row_end; ++r) {
        for (std::size_t c = b.col_begin; c < b.col_end; ++c) {
          Label label = seg.at(r, c);
          std::uint8_t p = lut[label];
          if (p == 0xff) throw IngestError("", "unknown segmentation label " + std::to_string(label));
          if (p != 0) ++counts[p - 1];
        }
      }
      tally.totals[i * cols + j] =
          static_cast<std::uint32_t>((b.row_end - b.row_begin) * (b.col_end - b.col_begin));
    }
  }
  return tally;
}

}  // namespace detail

inline GridWeightMap ComputeGridWeightMap(const SegmentationMap& seg, const PartScheme& scheme,
                                          std::size_t rows, std::size_t cols) {
  detail::PixelTally tally = detail::TallyPixels(seg, scheme, rows, cols);
  const std::size_t L = scheme.num_parts();
  GridWeightMap g;
  g.rows = rows;
  g.cols = cols;
  g.parts = L;
  g.weights.assign(L * rows * cols, 0.0);
  g.pixel_counts.assign(L * rows * cols, 0);
  g.present.assign(L, false);
  for (std::size_t l = 0; l < L; ++l) {
    std::uint64_t part_total = 0;
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t j = 0; j < cols; ++j) {
        std::uint32_t n = tally.part_counts[(i * cols + j) * L + l];
        g.pixel_counts[g.offset(l, i, j)] = n;
        part_total += n;
      }
    if (part_total == 0) continue;
    g.present[l] = true;
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t j = 0; j < cols; ++j)
        g.weights[g.offset(l, i, j)] =
            static_cast<double>(g.pixel_counts[g.offset(l, i, j)]) / static_cast<double>(part_total);
  }
  return g;
}

inline GridPartFractions ComputeGridPartFractions(const SegmentationMap& seg, const PartScheme& scheme,
                                                  std::size_t rows, std::size_t cols) {
  detail::PixelTally tally = detail::TallyPixels(seg, scheme, rows, cols);
  GridPartFractions f;
  f.rows = rows;
  f.cols = cols;
  f.parts = scheme.num_parts();
  f.part_counts = std::move(tally.part_counts);
  f.cell_totals = std::move(tally.totals);
  f.fractions.assign(f.part_counts.size(), 0.0);
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) {
      double total = f.total(i, j);
      for (std::size_t l = 0; l < f.parts; ++l)
        f.fractions[f.offset(i, j, l)] = static_cast<double>(f.part_counts[f.offset(i, j, l)]) / total;
    }
  return f;
}

// Throws IngestError naming the first label outside the scheme.
inline void ValidateLabels(const SegmentationMap& seg, const PartScheme& scheme, const std::string& path = "") {
  std::array<bool, 256> seen{};
  for (Label l : seg.labels) seen[l] = true;
  for (int l = 0; l < 256; ++l)
    if (seen[l] && !scheme.knows_label(static_cast<Label>(l)))
      throw IngestError(path, "unknown segmentation label " + std::to_string(l));
}

inline constexpr std::string_view kSegmentationMagic = "PVSEG1";

inline void WriteSegmentation(const SegmentationMap& seg, const std::string& path) {
  auto out = io::OpenOut(path);
  io::WriteMagic(out, kSegmentationMagic);
  io::WriteU32(out, static_cast<std::uint32_t>(seg.height));
  io::WriteU32(out, static_cast<std::uint32_t>(seg.width));
  out.write(reinterpret_cast<const char*>(seg.labels.data()), static_cast<std::streamsize>(seg.labels.size()));
  if (!out) throw IoError("failed writing " + path);
}

inline SegmentationMap ReadSegmentation(const std::string& path) {
  auto in = io::OpenIn(path);
  io::ExpectMagic(in, kSegmentationMagic, path);
  std::uint32_t h = io::ReadU32(in, path);
  std::uint32_t w = io::ReadU32(in, path);
  if (h == 0 || w == 0) throw IngestError(path, "zero-sized segmentation");
  SegmentationMap seg(h, w);
  io::ReadExact(in, reinterpret_cast<char*>(seg.labels.data()), seg.labels.size(), path);
  io::ExpectEof(in, path);
  return seg;
}

}  // namespace pvse

#endif  // PVSE_PARTMAP_HPP_
