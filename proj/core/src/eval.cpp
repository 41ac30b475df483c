#include "ttoreg/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <json.hpp>
#include <span>

namespace ttoreg {

using nlohmann::json;

namespace {

int bin_of(float v, int bins) {
  const double c = std::clamp(static_cast<double>(v), 0.0, 1.0);
  return std::min(bins - 1, static_cast<int>(std::floor(c * bins)));
}

// MI from integer counts; joint is bins x bins, row = fixed bin.
double mi_from_counts(const std::vector<std::uint32_t>& joint, int bins, std::size_t n, bool normalized) {
  if (n == 0) return 0.0;
  std::vector<double> pa(bins, 0.0), pb(bins, 0.0);
  for (int i = 0; i < bins; ++i)
    for (int j = 0; j < bins; ++j) {
      pa[i] += joint[i * bins + j];
      pb[j] += joint[i * bins + j];
    }
  const double dn = static_cast<double>(n);
  double mi = 0.0;
  for (int i = 0; i < bins; ++i)
    for (int j = 0; j < bins; ++j) {
      const double c = joint[i * bins + j];
      if (c > 0.0) mi += (c / dn) * std::log(c * dn / (pa[i] * pb[j]));
    }
  if (!normalized) return mi;
  double ha = 0.0, hb = 0.0;
  for (int i = 0; i < bins; ++i) {
    if (pa[i] > 0.0) ha -= (pa[i] / dn) * std::log(pa[i] / dn);
    if (pb[i] > 0.0) hb -= (pb[i] / dn) * std::log(pb[i] / dn);
  }
  return ha + hb > 0.0 ? 2.0 * mi / (ha + hb) : 0.0;
}

std::vector<int> lattice(int n, int patch, int stride) {
  std::vector<int> pos;
  for (int p = 0; p + patch <= n; p += stride) pos.push_back(p);
  return pos;
}

std::uint8_t to_byte(float v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(static_cast<double>(v), 0.0, 1.0) * 255.0));
}

json optional_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

}  // namespace

void PmmConfig::validate() const {
  if (patch < 1) throw std::invalid_argument("pmm patch must be >= 1");
  if (stride < 1) throw std::invalid_argument("pmm stride must be >= 1");
  if (bins < 2) throw std::invalid_argument("pmm bins must be >= 2");
  if (!(min_fraction >= 0.0 && min_fraction <= 1.0)) throw std::invalid_argument("pmm min_fraction must be in [0, 1]");
}

double histogram_mi(std::span<const float> a, std::span<const float> b, int bins, bool normalized) {
  if (a.size() != b.size()) throw std::invalid_argument("histogram_mi: size mismatch");
  if (bins < 2) throw std::invalid_argument("histogram_mi: bins must be >= 2");
  std::vector<std::uint32_t> joint(static_cast<std::size_t>(bins) * bins, 0);
  for (std::size_t i = 0; i < a.size(); ++i) ++joint[bin_of(a[i], bins) * bins + bin_of(b[i], bins)];
  return mi_from_counts(joint, bins, a.size(), normalized);
}

MIMap patchwise_mi_map(const Volume3D& fixed, const Volume3D& moving, const Mask3D* domain, const PmmConfig& cfg) {
  cfg.validate();
  const Shape3 s = fixed.shape();
  require_same_shape(s, moving.shape(), "patchwise_mi_map");
  if (domain) require_same_shape(s, domain->shape(), "patchwise_mi_map domain");
  if (cfg.patch > s.nx || cfg.patch > s.ny || cfg.patch > s.nz) {
    throw UserError("patch size " + std::to_string(cfg.patch) + " exceeds volume " + to_string(s));
  }
  const int B = cfg.bins;
  std::vector<std::uint8_t> bf(s.size()), bm(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) {
    bf[i] = static_cast<std::uint8_t>(bin_of(fixed[i], B));
    bm[i] = static_cast<std::uint8_t>(bin_of(moving[i], B));
  }
  MIMap map;
  map.cfg = cfg;
  map.values = BasicVolume<double>(s, fixed.spacing());
  map.coverage.assign(s.size(), 0);
  const auto px = lattice(s.nx, cfg.patch, cfg.stride), py = lattice(s.ny, cfg.patch, cfg.stride),
             pz = lattice(s.nz, cfg.patch, cfg.stride);
  const double needed = cfg.min_fraction * std::pow(static_cast<double>(cfg.patch), 3);
  std::vector<std::uint32_t> joint(static_cast<std::size_t>(B) * B);
  std::vector<std::size_t> members;
  members.reserve(static_cast<std::size_t>(cfg.patch) * cfg.patch * cfg.patch);
  for (int z0 : pz)
    for (int y0 : py)
      for (int x0 : px) {
        members.clear();
        for (int z = z0; z < z0 + cfg.patch; ++z)
          for (int y = y0; y < y0 + cfg.patch; ++y)
            for (int x = x0; x < x0 + cfg.patch; ++x) {
              const std::size_t i = s.index(x, y, z);
              if (!domain || (*domain)[i]) members.push_back(i);
            }
        if (members.empty() || static_cast<double>(members.size()) < needed) continue;
        std::fill(joint.begin(), joint.end(), 0);
        for (std::size_t i : members) ++joint[bf[i] * B + bm[i]];
        const double mi = mi_from_counts(joint, B, members.size(), cfg.normalized);
        for (std::size_t i : members) {
          map.values[i] += mi;
          ++map.coverage[i];
        }
        ++map.patches_used;
      }
  if (map.patches_used == 0) {
    throw UserError("patchwise_mi_map: no patch has at least " + std::to_string(cfg.min_fraction) +
                    " of its voxels inside the domain");
  }
  std::vector<std::uint8_t> defined(s.size(), 0);
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (map.coverage[i] > 0) {
      map.values[i] /= map.coverage[i];
      defined[i] = 1;
    }
  }
  map.mask = Mask3D(s, std::move(defined));
  return map;
}

double mean_pmm(const MIMap& map, const Mask3D* domain) {
  if (domain) require_same_shape(map.mask.shape(), domain->shape(), "mean_pmm");
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < map.mask.size(); ++i) {
    if (map.mask[i] && (!domain || (*domain)[i])) {
      sum += map.values[i];
      ++n;
    }
  }
  if (n == 0) throw UserError("mean_pmm: empty domain");
  return sum / static_cast<double>(n);
}

std::vector<std::optional<double>> per_slice_means(const MIMap& map, const Mask3D* domain) {
  const Shape3 s = map.mask.shape();
  std::vector<std::optional<double>> out(s.nz);
  for (int z = 0; z < s.nz; ++z) {
    double sum = 0.0;
    std::size_t n = 0;
    for (int y = 0; y < s.ny; ++y)
      for (int x = 0; x < s.nx; ++x) {
        const std::size_t i = s.index(x, y, z);
        if (map.mask[i] && (!domain || (*domain)[i])) {
          sum += map.values[i];
          ++n;
        }
      }
    if (n > 0) out[z] = sum / static_cast<double>(n);
  }
  return out;
}

double dice(const Mask3D& a, const Mask3D& b) {
  require_same_shape(a.shape(), b.shape(), "dice");
  std::size_t inter = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    na += a[i];
    nb += b[i];
    inter += a[i] && b[i];
  }
  if (na + nb == 0) return 1.0;
  return 2.0 * static_cast<double>(inter) / static_cast<double>(na + nb);
}

double iou(const Mask3D& a, const Mask3D& b) {
  require_same_shape(a.shape(), b.shape(), "iou");
  std::size_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    inter += a[i] && b[i];
    uni += a[i] || b[i];
  }
  if (uni == 0) return 1.0;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

std::vector<std::pair<int, double>> uptake_curve(const std::vector<Volume3D>& series, const Mask3D& roi) {
  const std::size_t n = roi.count();
  if (n == 0) throw UserError("uptake_curve: empty roi");
  std::vector<std::pair<int, double>> out;
  for (std::size_t t = 0; t < series.size(); ++t) {
    require_same_shape(series[t].shape(), roi.shape(), "uptake_curve");
    double sum = 0.0;
    for (std::size_t i = 0; i < roi.size(); ++i)
      if (roi[i]) sum += series[t][i];
    out.emplace_back(static_cast<int>(t), sum / static_cast<double>(n));
  }
  return out;
}

double total_variation(const std::vector<std::pair<int, double>>& curve) {
  double tv = 0.0;
  for (std::size_t i = 1; i < curve.size(); ++i) tv += std::abs(curve[i].second - curve[i - 1].second);
  return tv;
}

std::vector<Image2D> overlay_falsecolor(const Volume3D& fixed, const Volume3D& registered) {
  const Shape3 s = fixed.shape();
  require_same_shape(s, registered.shape(), "overlay_falsecolor");
  std::vector<Image2D> out(s.nz);
  for (int z = 0; z < s.nz; ++z) {
    Image2D& img = out[z];
    img.width = s.nx;
    img.height = s.ny;
    img.channels = 3;
    img.pixels.assign(static_cast<std::size_t>(s.nx) * s.ny * 3, 0);
    for (int y = 0; y < s.ny; ++y)
      for (int x = 0; x < s.nx; ++x) {
        img.at(x, y, 0) = to_byte(fixed.at(x, y, z));
        img.at(x, y, 1) = to_byte(registered.at(x, y, z));
      }
  }
  return out;
}

std::vector<Image2D> overlay_checkerboard(const Volume3D& fixed, const Volume3D& registered, int tile) {
  const Shape3 s = fixed.shape();
  require_same_shape(s, registered.shape(), "overlay_checkerboard");
  if (tile < 1) throw std::invalid_argument("overlay_checkerboard: tile must be >= 1");
  std::vector<Image2D> out(s.nz);
  for (int z = 0; z < s.nz; ++z) {
    Image2D& img = out[z];
    img.width = s.nx;
    img.height = s.ny;
    img.channels = 1;
    img.pixels.assign(static_cast<std::size_t>(s.nx) * s.ny, 0);
    for (int y = 0; y < s.ny; ++y)
      for (int x = 0; x < s.nx; ++x) {
        const bool from_fixed = ((x / tile) + (y / tile)) % 2 == 0;
        img.at(x, y) = to_byte(from_fixed ? fixed.at(x, y, z) : registered.at(x, y, z));
      }
  }
  return out;
}

std::filesystem::path write_image_stack(const std::vector<Image2D>& images, const std::filesystem::path& dir,
                                        const std::string& prefix) {
  std::filesystem::create_directories(dir);
  json files = json::array();
  for (std::size_t i = 0; i < images.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "_%04zu.png", i);
    const std::string file = prefix + name;
    write_png(images[i], dir / file);
    files.push_back(file);
  }
  json manifest{{"prefix", prefix},
                {"count", images.size()},
                {"width", images.empty() ? 0 : images[0].width},
                {"height", images.empty() ? 0 : images[0].height},
                {"channels", images.empty() ? 0 : images[0].channels},
                {"slice_axis", "z"},
                {"files", files}};
  const auto path = dir / (prefix + "_manifest.json");
  std::ofstream(path) << manifest.dump(2) << "\n";
  return path;
}

EvalReport make_report(const MIMap& map, const Mask3D* domain) {
  EvalReport r;
  r.mean_pmm = mean_pmm(map, domain);
  r.per_slice = per_slice_means(map, domain);
  r.settings = map.cfg;
  r.patches_used = map.patches_used;
  return r;
}

std::string report_to_json(const EvalReport& r) {
  json slices = json::array();
  for (const auto& v : r.per_slice) slices.push_back(optional_json(v));
  json inputs = json::object();
  for (const auto& [k, v] : r.inputs) inputs[k] = v;
  json j{{"format_version", 1},
         {"measure", r.settings.normalized ? "nmi" : "mi"},
         {"mean_pmm", r.mean_pmm},
         {"per_slice_means", slices},
         {"dice", optional_json(r.dice)},
         {"iou", optional_json(r.iou)},
         {"settings",
          {{"patch", r.settings.patch},
           {"stride", r.settings.stride},
           {"bins", r.settings.bins},
           {"min_fraction", r.settings.min_fraction},
           {"normalized", r.settings.normalized}}},
         {"patches_used", r.patches_used},
         {"inputs", inputs}};
  return j.dump(2);
}

std::string overlap_table_json(const std::vector<OverlapRow>& rows) {
  json arr = json::array();
  for (const auto& r : rows) arr.push_back({{"case", r.case_id}, {"setting", r.setting}, {"dice", r.dice}, {"iou", r.iou}});
  return json{{"format_version", 1}, {"columns", {"case", "setting", "dice", "iou"}}, {"rows", arr}}.dump(2);
}

}  // namespace ttoreg
