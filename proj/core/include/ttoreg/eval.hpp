#pragma once

// Registration assessment: patch-wise MI maps, overlap scores, uptake curves
// and slice overlays.

#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "ttoreg/png_writer.hpp"
#include "ttoreg/volume.hpp"

namespace ttoreg {

struct PmmConfig {
  int patch = 16;
  int stride = 4;
  int bins = 32;
  double min_fraction = 0.5;
  bool normalized = false;  // NMI = 2 I / (H_F + H_M) instead of plain MI

  void validate() const;
};

/// Hard-binned plug-in MI (nats) of two equally sized samples. Values are
/// clamped to [0, 1] and binned as min(bins - 1, floor(v * bins)).
double histogram_mi(std::span<const float> a, std::span<const float> b, int bins, bool normalized = false);

struct MIMap {
  BasicVolume<double> values;          // 0 where undefined
  Mask3D mask;                         // voxels covered by at least one qualifying patch
  std::vector<std::uint32_t> coverage; // N(r)
  PmmConfig cfg;
  std::size_t patches_used = 0;
};

/// Patches start at every multiple of `stride` that keeps them inside the
/// grid. A patch qualifies when at least min_fraction * patch^3 of its voxels
/// lie in the domain; its MI over those voxels is added to each of them and
/// every voxel is divided by its qualifying-patch count. `domain` null means
/// the full grid. Throws UserError when no patch qualifies.
MIMap patchwise_mi_map(const Volume3D& fixed, const Volume3D& moving, const Mask3D* domain, const PmmConfig& cfg);

/// Mean of the map over its defined voxels (intersected with `domain`).
double mean_pmm(const MIMap& map, const Mask3D* domain = nullptr);

/// Mean over defined voxels of each z slice; empty slices give nullopt.
std::vector<std::optional<double>> per_slice_means(const MIMap& map, const Mask3D* domain = nullptr);

/// 2|A n B| / (|A| + |B|); 1 when both are empty.
double dice(const Mask3D& a, const Mask3D& b);
/// |A n B| / |A u B|; 1 when both are empty.
double iou(const Mask3D& a, const Mask3D& b);

/// (frame index, mean intensity over roi) in series order.
std::vector<std::pair<int, double>> uptake_curve(const std::vector<Volume3D>& series, const Mask3D& roi);
/// Sum of absolute consecutive differences of the curve values.
double total_variation(const std::vector<std::pair<int, double>>& curve);

/// One RGB image per z slice: red = fixed, green = registered, blue = 0.
std::vector<Image2D> overlay_falsecolor(const Volume3D& fixed, const Volume3D& registered);
/// One gray image per z slice; tile (i, j) shows fixed when i + j is even.
std::vector<Image2D> overlay_checkerboard(const Volume3D& fixed, const Volume3D& registered, int tile);

/// Writes `<prefix>_NNNN.png` plus `<prefix>_manifest.json` into dir and
/// returns the manifest path.
std::filesystem::path write_image_stack(const std::vector<Image2D>& images, const std::filesystem::path& dir,
                                        const std::string& prefix);

struct EvalReport {
  double mean_pmm = 0.0;
  std::vector<std::optional<double>> per_slice;
  std::optional<double> dice;
  std::optional<double> iou;
  PmmConfig settings;
  std::size_t patches_used = 0;
  /// Input identifiers (name -> path or description).
  std::vector<std::pair<std::string, std::string>> inputs;
};

EvalReport make_report(const MIMap& map, const Mask3D* domain = nullptr);
std::string report_to_json(const EvalReport& r);

/// Case/setting overlap table in the layout of a Dice/IoU comparison table.
struct OverlapRow {
  std::string case_id;
  std::string setting;  // e.g. "before", "after"
  double dice = 0.0;
  double iou = 0.0;
};
std::string overlap_table_json(const std::vector<OverlapRow>& rows);

}  // namespace ttoreg
