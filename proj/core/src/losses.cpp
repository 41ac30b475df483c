#include "ttoreg/losses.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "ttoreg/diffops.hpp"
#include "ttoreg/warp.hpp"

namespace ttoreg {

namespace {

constexpr double kLogEps = 1e-8;
constexpr double kNccEps = 1e-8;
// Gaussian contributions beyond this many sigmas are dropped (weight < 2e-8).
constexpr double kKernelCutoff = 6.0;

// Normalised Parzen weights of each sample over a window of bins around it.
struct SoftBins {
  int bins = 0;
  int win = 0;
  std::vector<int> start;
  std::vector<int> len;
  std::vector<double> w;
  std::vector<double> dw;
  std::vector<double> marginal;
};

template <typename T>
void soft_bin(std::span<const T> v, int bins, double sigma, bool need_grad, SoftBins& sb) {
  const std::size_t n = v.size();
  const double inv_bins = 1.0 / bins;
  const int radius = static_cast<int>(std::ceil(kKernelCutoff * sigma * bins)) + 1;
  sb.bins = bins;
  sb.win = 2 * radius + 1;
  sb.start.resize(n);
  sb.len.resize(n);
  sb.w.assign(n * sb.win, 0.0);
  if (need_grad) sb.dw.assign(n * sb.win, 0.0);
  sb.marginal.assign(bins, 0.0);
  const double inv_two_s2 = 1.0 / (2.0 * sigma * sigma);
  const double inv_s2 = 1.0 / (sigma * sigma);
  const double cutoff = kKernelCutoff * sigma;
  double g[512];
  double s[512];
  if (sb.win > 512) throw std::invalid_argument("parzen_sigma too large for the bin count");

  for (std::size_t i = 0; i < n; ++i) {
    const double x = static_cast<double>(v[i]);
    const int kc = std::clamp(static_cast<int>(std::floor(x * bins)), 0, bins - 1);
    const int k0 = std::max(0, kc - radius);
    const int k1 = std::min(bins - 1, kc + radius);
    const int len = k1 - k0 + 1;
    sb.start[i] = k0;
    sb.len[i] = len;
    double z = 0.0;
    for (int j = 0; j < len; ++j) {
      const double d = x - (k0 + j + 0.5) * inv_bins;
      g[j] = std::abs(d) <= cutoff ? std::exp(-d * d * inv_two_s2) : 0.0;
      s[j] = -d * inv_s2;
      z += g[j];
    }
    double* wi = &sb.w[i * sb.win];
    if (!(z > 1e-300)) {
      // Sample far outside [0, 1]: hard-assign to the nearest bin.
      wi[kc - k0] = 1.0;
      sb.marginal[kc] += 1.0;
      continue;
    }
    double mean_s = 0.0;
    for (int j = 0; j < len; ++j) {
      wi[j] = g[j] / z;
      mean_s += wi[j] * s[j];
      sb.marginal[k0 + j] += wi[j];
    }
    if (need_grad) {
      double* dwi = &sb.dw[i * sb.win];
      for (int j = 0; j < len; ++j) dwi[j] = wi[j] * (s[j] - mean_s);
    }
  }
  for (auto& m : sb.marginal) m /= static_cast<double>(n);
}

inline double plogp(double p) { return p * std::log(p + kLogEps); }
inline double plogp_deriv(double p) { return std::log(p + kLogEps) + p / (p + kLogEps); }

struct MiScratch {
  SoftBins a;
  SoftBins b;
  std::vector<double> joint;
  std::vector<double> djoint;
  std::vector<double> da;
  std::vector<double> db;
};

template <typename T>
double soft_mi_impl(std::span<const T> a, std::span<const T> b, int bins, double sigma, std::span<T> grad_a,
                    std::span<T> grad_b, double scale, MiScratch& sc) {
  if (a.size() != b.size()) throw std::invalid_argument("soft_mi_2d: slice size mismatch");
  if (bins < 2) throw std::invalid_argument("soft_mi_2d: bins must be >= 2");
  if (!(sigma > 0.0)) throw std::invalid_argument("soft_mi_2d: parzen_sigma must be > 0");
  const std::size_t n = a.size();
  if (n == 0) return 0.0;
  const bool ga = !grad_a.empty();
  const bool gb = !grad_b.empty();
  if ((ga && grad_a.size() != n) || (gb && grad_b.size() != n)) {
    throw std::invalid_argument("soft_mi_2d: gradient size mismatch");
  }
  soft_bin(a, bins, sigma, ga, sc.a);
  soft_bin(b, bins, sigma, gb, sc.b);
  const int win_a = sc.a.win, win_b = sc.b.win;

  sc.joint.assign(static_cast<std::size_t>(bins) * bins, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const double* wa = &sc.a.w[i * win_a];
    const double* wb = &sc.b.w[i * win_b];
    const int ka = sc.a.start[i], la = sc.a.len[i];
    const int kb = sc.b.start[i], lb = sc.b.len[i];
    for (int p = 0; p < la; ++p) {
      const double x = wa[p];
      if (x == 0.0) continue;
      double* row = &sc.joint[static_cast<std::size_t>(ka + p) * bins + kb];
      for (int q = 0; q < lb; ++q) row[q] += x * wb[q];
    }
  }
  const double inv_n = 1.0 / static_cast<double>(n);
  double mi = 0.0;
  for (auto& pj : sc.joint) {
    pj *= inv_n;
    mi += plogp(pj);
  }
  for (double pa : sc.a.marginal) mi -= plogp(pa);
  for (double pb : sc.b.marginal) mi -= plogp(pb);

  if (!ga && !gb) return mi;

  sc.djoint.resize(sc.joint.size());
  for (std::size_t k = 0; k < sc.joint.size(); ++k) sc.djoint[k] = plogp_deriv(sc.joint[k]);
  sc.da.resize(bins);
  sc.db.resize(bins);
  for (int k = 0; k < bins; ++k) {
    sc.da[k] = plogp_deriv(sc.a.marginal[k]);
    sc.db[k] = plogp_deriv(sc.b.marginal[k]);
  }
  const double s = scale * inv_n;

  for (std::size_t i = 0; i < n; ++i) {
    const double* wa = &sc.a.w[i * win_a];
    const double* wb = &sc.b.w[i * win_b];
    const int ka = sc.a.start[i], la = sc.a.len[i];
    const int kb = sc.b.start[i], lb = sc.b.len[i];
    if (ga) {
      const double* dwa = &sc.a.dw[i * win_a];
      double acc = 0.0;
      for (int p = 0; p < la; ++p) {
        if (dwa[p] == 0.0) continue;
        const double* row = &sc.djoint[static_cast<std::size_t>(ka + p) * bins + kb];
        double t = 0.0;
        for (int q = 0; q < lb; ++q) t += row[q] * wb[q];
        acc += dwa[p] * (t - sc.da[ka + p]);
      }
      grad_a[i] += static_cast<T>(s * acc);
    }
    if (gb) {
      const double* dwb = &sc.b.dw[i * win_b];
      double acc = 0.0;
      for (int q = 0; q < lb; ++q) {
        if (dwb[q] == 0.0) continue;
        double t = 0.0;
        for (int p = 0; p < la; ++p) t += sc.djoint[static_cast<std::size_t>(ka + p) * bins + kb + q] * wa[p];
        acc += dwb[q] * (t - sc.db[kb + q]);
      }
      grad_b[i] += static_cast<T>(s * acc);
    }
  }
  return mi;
}

}  // namespace

void LossWeights::validate() const {
  if (bins < 2) throw std::invalid_argument("LossWeights: bins must be >= 2");
  if (!(parzen_sigma > 0.0)) throw std::invalid_argument("LossWeights: parzen_sigma must be > 0");
  if (lambda_sim < 0 || lambda_smooth < 0 || lambda_dist < 0 || alpha_div < 0) {
    throw std::invalid_argument("LossWeights: weights must be non-negative");
  }
}

template <typename T>
double soft_mi_2d(std::span<const T> a, std::span<const T> b, int bins, double parzen_sigma, std::span<T> grad_a,
                  std::span<T> grad_b, double scale) {
  MiScratch sc;
  return soft_mi_impl(a, b, bins, parzen_sigma, grad_a, grad_b, scale, sc);
}

template <typename T>
double soft_entropy(std::span<const T> a, int bins, double parzen_sigma) {
  SoftBins sb;
  soft_bin(a, bins, parzen_sigma, false, sb);
  double h = 0.0;
  for (double p : sb.marginal) h -= plogp(p);
  return h;
}

template <typename T>
double multi_axis_mi(const BasicVolume<T>& fixed, const BasicVolume<T>& warped, const LossWeights& cfg,
                     BasicVolume<T>* grad_fixed, BasicVolume<T>* grad_warped, double scale) {
  require_same_shape(fixed.shape(), warped.shape(), "multi_axis_mi");
  cfg.validate();
  const Shape3 s = fixed.shape();
  if (grad_fixed) require_same_shape(grad_fixed->shape(), s, "multi_axis_mi grad_fixed");
  if (grad_warped) require_same_shape(grad_warped->shape(), s, "multi_axis_mi grad_warped");
  const int n_slices = s.nx + s.ny + s.nz;
  const double slice_scale = -scale / n_slices;

  MiScratch sc;
  std::vector<T> fa, wa, gfa, gwa;
  double total = 0.0;

  // Along each axis: gather slice, evaluate MI, scatter gradients back.
  for (int axis = 2; axis >= 0; --axis) {
    const int count = s[axis];
    const int u_axis = axis == 0 ? 1 : 0;
    const int v_axis = axis == 2 ? 1 : 2;
    const int nu = s[u_axis], nv = s[v_axis];
    const std::size_t m = static_cast<std::size_t>(nu) * nv;
    fa.resize(m);
    wa.resize(m);
    for (int k = 0; k < count; ++k) {
      std::size_t j = 0;
      for (int v = 0; v < nv; ++v)
        for (int u = 0; u < nu; ++u, ++j) {
          int c[3];
          c[axis] = k;
          c[u_axis] = u;
          c[v_axis] = v;
          const std::size_t idx = s.index(c[0], c[1], c[2]);
          fa[j] = fixed[idx];
          wa[j] = warped[idx];
        }
      std::span<T> gf_span, gw_span;
      if (grad_fixed) {
        gfa.assign(m, T(0));
        gf_span = gfa;
      }
      if (grad_warped) {
        gwa.assign(m, T(0));
        gw_span = gwa;
      }
      total += soft_mi_impl<T>(fa, wa, cfg.bins, cfg.parzen_sigma, gf_span, gw_span, slice_scale, sc);
      if (grad_fixed || grad_warped) {
        j = 0;
        for (int v = 0; v < nv; ++v)
          for (int u = 0; u < nu; ++u, ++j) {
            int c[3];
            c[axis] = k;
            c[u_axis] = u;
            c[v_axis] = v;
            const std::size_t idx = s.index(c[0], c[1], c[2]);
            if (grad_fixed) (*grad_fixed)[idx] += gfa[j];
            if (grad_warped) (*grad_warped)[idx] += gwa[j];
          }
      }
    }
  }
  return -total / n_slices;
}

template <typename T>
double ncc_loss(const BasicVolume<T>& fixed, const BasicVolume<T>& warped, BasicVolume<T>* grad_fixed,
                BasicVolume<T>* grad_warped, double scale) {
  require_same_shape(fixed.shape(), warped.shape(), "ncc_loss");
  const std::size_t n = fixed.size();
  double mf = 0.0, mw = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    mf += fixed[i];
    mw += warped[i];
  }
  mf /= static_cast<double>(n);
  mw /= static_cast<double>(n);
  double cross = 0.0, sf = 0.0, sw = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double a = fixed[i] - mf, b = warped[i] - mw;
    cross += a * b;
    sf += a * a;
    sw += b * b;
  }
  const double rf = std::sqrt(sf), rw = std::sqrt(sw);
  const double denom = rf * rw + kNccEps;
  const double loss = -cross / denom;
  if (rf == 0.0 && rw == 0.0) return 0.0;
  // d(-cross/denom) = -(dcross * denom - cross * ddenom) / denom^2
  const double inv_d2 = 1.0 / (denom * denom);
  // A constant argument has no well-defined correlation gradient.
  if (grad_warped && rw > 0.0) {
    const double ratio = rf / rw;
    for (std::size_t i = 0; i < n; ++i) {
      const double a = fixed[i] - mf, b = warped[i] - mw;
      const double g = -(a * denom - cross * ratio * b) * inv_d2;
      (*grad_warped)[i] += static_cast<T>(scale * g);
    }
  }
  if (grad_fixed && rf > 0.0) {
    const double ratio = rw / rf;
    for (std::size_t i = 0; i < n; ++i) {
      const double a = fixed[i] - mf, b = warped[i] - mw;
      const double g = -(b * denom - cross * ratio * a) * inv_d2;
      (*grad_fixed)[i] += static_cast<T>(scale * g);
    }
  }
  return loss;
}

template <typename T>
double smoothness(const DisplacementField<T>& u, DisplacementField<T>* grad_u, double scale) {
  const Shape3 s = u.shape();
  if (grad_u) require_same_shape(grad_u->shape(), s, "smoothness grad_u");
  const std::size_t n = u.voxels();
  std::vector<T> d(n);
  double acc = 0.0;
  const double g_scale = 2.0 * scale / static_cast<double>(n);
  for (int c = 0; c < 3; ++c) {
    for (int a = 0; a < 3; ++a) {
      if (s[a] < 2) continue;
      forward_difference<T>(u.component(c), s, a, d);
      for (T v : d) acc += static_cast<double>(v) * static_cast<double>(v);
      if (grad_u) {
        for (auto& v : d) v = static_cast<T>(g_scale * v);
        forward_difference_adjoint_add<T>(d, s, a, grad_u->component(c));
      }
    }
  }
  return acc / static_cast<double>(n);
}

template <typename T>
double divergence_penalty(const DisplacementField<T>& u, DisplacementField<T>* grad_u, double scale) {
  const Shape3 s = u.shape();
  if (grad_u) require_same_shape(grad_u->shape(), s, "divergence_penalty grad_u");
  const std::size_t n = u.voxels();
  std::vector<T> div(n, T(0)), d(n);
  for (int a = 0; a < 3; ++a) {
    if (s[a] < 2) continue;
    forward_difference<T>(u.component(a), s, a, d);
    for (std::size_t i = 0; i < n; ++i) div[i] += d[i];
  }
  double acc = 0.0;
  for (T v : div) acc += static_cast<double>(v) * static_cast<double>(v);
  if (grad_u) {
    const double g_scale = 2.0 * scale / static_cast<double>(n);
    for (auto& v : div) v = static_cast<T>(g_scale * v);
    for (int a = 0; a < 3; ++a) {
      if (s[a] < 2) continue;
      forward_difference_adjoint_add<T>(div, s, a, grad_u->component(a));
    }
  }
  return acc / static_cast<double>(n);
}

template <typename T>
LossTerms pretrain_loss(const BasicVolume<T>& fixed, const BasicVolume<T>& moving, const DisplacementField<T>& u,
                        const LossWeights& cfg, DisplacementField<T>* grad_u) {
  cfg.validate();
  const BasicVolume<T> warped = warp(moving, u);
  LossTerms t;
  std::optional<BasicVolume<T>> g_warped;
  if (grad_u) g_warped.emplace(fixed.shape());
  t.similarity = multi_axis_mi(fixed, warped, cfg, static_cast<BasicVolume<T>*>(nullptr), g_warped ? &*g_warped : nullptr, cfg.lambda_sim);
  t.smooth = smoothness(u, grad_u, cfg.lambda_smooth);
  t.total = cfg.lambda_sim * t.similarity + cfg.lambda_smooth * t.smooth;
  if (grad_u) warp_backward<T>(moving, u, g_warped->values(), grad_u, nullptr);
  return t;
}

template <typename T>
LossTerms kd_loss(const BasicVolume<T>& fixed, const BasicVolume<T>& moving, const DisplacementField<T>& u_teacher,
                  const DisplacementField<T>& u_student, const LossWeights& cfg, DisplacementField<T>* grad_u_student) {
  cfg.validate();
  const BasicVolume<T> warped_t = warp(moving, u_teacher);
  const BasicVolume<T> warped_s = warp(moving, u_student);
  LossTerms t;
  std::optional<BasicVolume<T>> g_warped;
  if (grad_u_student) g_warped.emplace(fixed.shape());
  BasicVolume<T>* gw = g_warped ? &*g_warped : nullptr;
  t.distill = multi_axis_mi(warped_t, warped_s, cfg, static_cast<BasicVolume<T>*>(nullptr), gw, cfg.lambda_dist);
  t.similarity = multi_axis_mi(fixed, warped_s, cfg, static_cast<BasicVolume<T>*>(nullptr), gw, cfg.lambda_sim);
  t.smooth = smoothness(u_student, grad_u_student, cfg.lambda_smooth);
  t.total = cfg.lambda_dist * t.distill + cfg.lambda_sim * t.similarity + cfg.lambda_smooth * t.smooth;
  if (grad_u_student) warp_backward<T>(moving, u_student, g_warped->values(), grad_u_student, nullptr);
  return t;
}

template <typename T>
LossTerms tto_loss(const BasicVolume<T>& fixed, const BasicVolume<T>& moving, const DisplacementField<T>& u,
                   const LossWeights& cfg, DisplacementField<T>* grad_u) {
  cfg.validate();
  const BasicVolume<T> warped = warp(moving, u);
  LossTerms t;
  std::optional<BasicVolume<T>> g_warped;
  if (grad_u) g_warped.emplace(fixed.shape());
  BasicVolume<T>* gw = g_warped ? &*g_warped : nullptr;
  t.similarity = multi_axis_mi(fixed, warped, cfg, static_cast<BasicVolume<T>*>(nullptr), gw, cfg.lambda_sim);
  t.ncc = ncc_loss(fixed, warped, static_cast<BasicVolume<T>*>(nullptr), gw, cfg.lambda_sim);
  t.smooth = smoothness(u, grad_u, cfg.lambda_smooth);
  t.div = cfg.alpha_div > 0.0 ? divergence_penalty(u, grad_u, cfg.alpha_div) : 0.0;
  t.total = cfg.lambda_sim * (t.similarity + t.ncc) + cfg.lambda_smooth * t.smooth + cfg.alpha_div * t.div;
  if (grad_u) warp_backward<T>(moving, u, g_warped->values(), grad_u, nullptr);
  return t;
}

#define TTOREG_INSTANTIATE_LOSSES(T)                                                                           \
  template double soft_mi_2d(std::span<const T>, std::span<const T>, int, double, std::span<T>, std::span<T>, \
                             double);                                                                         \
  template double soft_entropy(std::span<const T>, int, double);                                              \
  template double multi_axis_mi(const BasicVolume<T>&, const BasicVolume<T>&, const LossWeights&,              \
                                BasicVolume<T>*, BasicVolume<T>*, double);                                     \
  template double ncc_loss(const BasicVolume<T>&, const BasicVolume<T>&, BasicVolume<T>*, BasicVolume<T>*,    \
                           double);                                                                           \
  template double smoothness(const DisplacementField<T>&, DisplacementField<T>*, double);                     \
  template double divergence_penalty(const DisplacementField<T>&, DisplacementField<T>*, double);             \
  template LossTerms pretrain_loss(const BasicVolume<T>&, const BasicVolume<T>&, const DisplacementField<T>&, \
                                   const LossWeights&, DisplacementField<T>*);                                \
  template LossTerms kd_loss(const BasicVolume<T>&, const BasicVolume<T>&, const DisplacementField<T>&,       \
                             const DisplacementField<T>&, const LossWeights&, DisplacementField<T>*);         \
  template LossTerms tto_loss(const BasicVolume<T>&, const BasicVolume<T>&, const DisplacementField<T>&,      \
                              const LossWeights&, DisplacementField<T>*);

TTOREG_INSTANTIATE_LOSSES(float)
TTOREG_INSTANTIATE_LOSSES(double)

}  // namespace ttoreg
