#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "elimrank/common.hpp"
#include "elimrank/rng.hpp"

namespace elimrank {

enum class RunMode { kTrain, kInfer };

/// Dropout rates. Inverted scaling is applied at train time (kept units are
/// multiplied by 1/(1-p)), so inference uses the parameters unchanged.
struct DropoutConfig {
  double p_vis = 0.0;  // input feature drop probability, in [0,1)
  double p_hid = 0.0;  // hidden unit drop probability, in [0,1)
  std::uint64_t rng_seed = 0;

  bool enabled() const { return p_vis > 0.0 || p_hid > 0.0; }

  void validate() const {
    if (p_vis < 0.0 || p_vis >= 1.0 || p_hid < 0.0 || p_hid >= 1.0)
      throw ValidationError("dropout probabilities must lie in [0,1)");
  }
};

// ---------------------------------------------------------------------------
// Linear rank function
// ---------------------------------------------------------------------------

struct LinearParams {
  std::vector<double> w;
  double b = 0.0;

  explicit LinearParams(std::size_t p = 0) : w(p, 0.0) {}
  LinearParams(std::vector<double> weights, double bias)
      : w(std::move(weights)), b(bias) {}

  std::size_t dim() const { return w.size(); }

  void set_zero() {
    std::fill(w.begin(), w.end(), 0.0);
    b = 0.0;
  }

  /// this += scale * other
  void add_scaled(const LinearParams& other, double scale) {
    for (std::size_t i = 0; i < w.size(); ++i) w[i] += scale * other.w[i];
    b += scale * other.b;
  }

  friend bool operator==(const LinearParams&, const LinearParams&) = default;
};

inline double linear_forward(const LinearParams& params,
                             std::span<const double> x) {
  if (x.size() != params.w.size())
    throw ValidationError("linear_forward: dimension mismatch");
  return dot(params.w, x) + params.b;
}

/// Accumulate d score / d params into grad.
inline void linear_backward(std::span<const double> x, double dscore,
                            LinearParams& grad) {
  if (x.size() != grad.w.size())
    throw ValidationError("linear_backward: dimension mismatch");
  for (std::size_t i = 0; i < x.size(); ++i) grad.w[i] += dscore * x[i];
  grad.b += dscore;
}

// ---------------------------------------------------------------------------
// Recurrent highway rank function
//
//   z_1     = relu(b_X + W_X x)
//   z_{l+1} = H(z_l) * T(z_l) + z_l * (1 - T(z_l)),  l = 1..L-1
//   score   = <w, z_L>
//
// with H(z) = relu(b_H + W_H z) and gate T(z) = sigmoid(b_T + W_T z). The
// L-1 recurrent layers share one parameter set, so backprop accumulates the
// per-layer contributions into the same gradient blocks.
// ---------------------------------------------------------------------------

struct HighwayParams {
  std::size_t p = 0;  // input dimension
  std::size_t K = 0;  // hidden width
  std::size_t L = 1;  // layer count (L-1 recurrent applications)

  Matrix W_X;              // K x p input projection
  std::vector<double> b_X;  // K
  Matrix W_H;              // K x K transform
  std::vector<double> b_H;  // K
  Matrix W_T;              // K x K gate
  std::vector<double> b_T;  // K
  std::vector<double> w;    // K output weights

  HighwayParams() = default;
  HighwayParams(std::size_t p_, std::size_t k_, std::size_t l_)
      : p(p_),
        K(k_),
        L(l_),
        W_X(k_, p_),
        b_X(k_, 0.0),
        W_H(k_, k_),
        b_H(k_, 0.0),
        W_T(k_, k_),
        b_T(k_, 0.0),
        w(k_, 0.0) {}

  void set_zero() {
    W_X.set_zero();
    W_H.set_zero();
    W_T.set_zero();
    std::fill(b_X.begin(), b_X.end(), 0.0);
    std::fill(b_H.begin(), b_H.end(), 0.0);
    std::fill(b_T.begin(), b_T.end(), 0.0);
    std::fill(w.begin(), w.end(), 0.0);
  }

  void add_scaled(const HighwayParams& other, double scale) {
    auto axpy = [scale](std::vector<double>& dst,
                        const std::vector<double>& src) {
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += scale * src[i];
    };
    axpy(W_X.a, other.W_X.a);
    axpy(W_H.a, other.W_H.a);
    axpy(W_T.a, other.W_T.a);
    axpy(b_X, other.b_X);
    axpy(b_H, other.b_H);
    axpy(b_T, other.b_T);
    axpy(w, other.w);
  }

  friend bool operator==(const HighwayParams&, const HighwayParams&) = default;
};

/// Visit every parameter in serialization order: W_X, b_X, W_H, b_H, W_T,
/// b_T, w (matrices row-major). The finite-difference tests and the binary
/// container both rely on this order.
template <class Params, class Fn>
void for_each_param(Params&& params, Fn&& fn) {
  for (auto& v : params.W_X.a) fn(v);
  for (auto& v : params.b_X) fn(v);
  for (auto& v : params.W_H.a) fn(v);
  for (auto& v : params.b_H) fn(v);
  for (auto& v : params.W_T.a) fn(v);
  for (auto& v : params.b_T) fn(v);
  for (auto& v : params.w) fn(v);
}

/// Paper-style initialization: weights from N(0, 0.01^2), gate bias at -1 so
/// the early network passes information through, other biases at 0.
inline HighwayParams init_highway(std::size_t p, std::size_t K, std::size_t L,
                                  std::uint64_t seed) {
  if (p < 1 || K < 1 || L < 1)
    throw ValidationError("init_highway: p, K, L must all be >= 1");
  HighwayParams params(p, K, L);
  Rng rng(derive_seed(seed, "highway-init"));
  constexpr double kSigma = 0.01;
  for (auto& v : params.W_X.a) v = kSigma * rng.normal();
  for (auto& v : params.W_H.a) v = kSigma * rng.normal();
  for (auto& v : params.W_T.a) v = kSigma * rng.normal();
  for (auto& v : params.w) v = kSigma * rng.normal();
  std::fill(params.b_T.begin(), params.b_T.end(), -1.0);
  return params;
}

/// Intermediates of one forward pass, replayed by highway_backward. Masks
/// hold the inverted-dropout multiplier (0 or 1/(1-p)); empty means no
/// dropout was applied at that point.
struct HighwayTape {
  std::size_t p = 0, K = 0, L = 0;
  RunMode mode = RunMode::kInfer;

  std::vector<double> x_used;   // input after visible dropout
  std::vector<double> a_x;      // b_X + W_X x (pre-activation)
  std::vector<double> vis_mask;

  // Per layer l = 0..L-1: z[l] is the (post-dropout) activation feeding
  // layer l+1; hid_mask[l] its dropout multipliers.
  std::vector<std::vector<double>> z;
  std::vector<std::vector<double>> hid_mask;

  // Per recurrent step l = 0..L-2.
  std::vector<std::vector<double>> a_t;     // gate pre-activation
  std::vector<std::vector<double>> a_h;     // transform pre-activation
  std::vector<std::vector<double>> t_gate;  // sigmoid(a_t)
  std::vector<std::vector<double>> h_val;   // relu(a_h)
};

namespace detail {

inline double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline void matvec(const Matrix& m, std::span<const double> x,
                   std::vector<double>& out) {
  out.resize(m.rows);
  for (std::size_t r = 0; r < m.rows; ++r) out[r] = dot(m.row(r), x);
}

/// Draw an inverted-dropout mask: entry 0 with probability p, else 1/(1-p).
inline void draw_mask(std::vector<double>& mask, std::size_t n, double p,
                      Rng& rng) {
  mask.resize(n);
  const double keep_scale = 1.0 / (1.0 - p);
  for (std::size_t i = 0; i < n; ++i)
    mask[i] = rng.u01() < p ? 0.0 : keep_scale;
}

}  // namespace detail

/// Evaluate the highway network on one item. In train mode with a dropout
/// config, fresh masks are drawn from rng for this item (one per layer); in
/// infer mode no randomness is consumed. The tape records everything
/// highway_backward needs.
inline double highway_forward(const HighwayParams& params,
                              std::span<const double> x, HighwayTape& tape,
                              RunMode mode = RunMode::kInfer,
                              const DropoutConfig* dropout = nullptr,
                              Rng* rng = nullptr) {
  if (x.size() != params.p)
    throw ValidationError("highway_forward: input has dimension " +
                          std::to_string(x.size()) + ", expected " +
                          std::to_string(params.p));
  const bool use_dropout =
      mode == RunMode::kTrain && dropout != nullptr && dropout->enabled();
  if (use_dropout) {
    dropout->validate();
    if (rng == nullptr)
      throw ContractError("highway_forward: dropout requires an rng");
  }

  tape.p = params.p;
  tape.K = params.K;
  tape.L = params.L;
  tape.mode = mode;
  tape.z.assign(params.L, {});
  tape.hid_mask.assign(params.L, {});
  tape.a_t.assign(params.L > 0 ? params.L - 1 : 0, {});
  tape.a_h.assign(params.L > 0 ? params.L - 1 : 0, {});
  tape.t_gate.assign(params.L > 0 ? params.L - 1 : 0, {});
  tape.h_val.assign(params.L > 0 ? params.L - 1 : 0, {});
  tape.vis_mask.clear();

  tape.x_used.assign(x.begin(), x.end());
  if (use_dropout && dropout->p_vis > 0.0) {
    detail::draw_mask(tape.vis_mask, params.p, dropout->p_vis, *rng);
    for (std::size_t i = 0; i < params.p; ++i)
      tape.x_used[i] *= tape.vis_mask[i];
  }

  detail::matvec(params.W_X, tape.x_used, tape.a_x);
  for (std::size_t i = 0; i < params.K; ++i) tape.a_x[i] += params.b_X[i];

  auto apply_hidden_dropout = [&](std::vector<double>& zl, std::size_t layer) {
    if (use_dropout && dropout->p_hid > 0.0) {
      detail::draw_mask(tape.hid_mask[layer], params.K, dropout->p_hid, *rng);
      for (std::size_t i = 0; i < params.K; ++i)
        zl[i] *= tape.hid_mask[layer][i];
    }
  };

  tape.z[0].resize(params.K);
  for (std::size_t i = 0; i < params.K; ++i)
    tape.z[0][i] = tape.a_x[i] > 0.0 ? tape.a_x[i] : 0.0;
  apply_hidden_dropout(tape.z[0], 0);

  for (std::size_t l = 0; l + 1 < params.L; ++l) {
    const std::vector<double>& zl = tape.z[l];
    detail::matvec(params.W_T, zl, tape.a_t[l]);
    detail::matvec(params.W_H, zl, tape.a_h[l]);
    tape.t_gate[l].resize(params.K);
    tape.h_val[l].resize(params.K);
    tape.z[l + 1].resize(params.K);
    for (std::size_t i = 0; i < params.K; ++i) {
      tape.a_t[l][i] += params.b_T[i];
      tape.a_h[l][i] += params.b_H[i];
      const double t = detail::sigmoid(tape.a_t[l][i]);
      const double h = tape.a_h[l][i] > 0.0 ? tape.a_h[l][i] : 0.0;
      tape.t_gate[l][i] = t;
      tape.h_val[l][i] = h;
      tape.z[l + 1][i] = h * t + zl[i] * (1.0 - t);
    }
    apply_hidden_dropout(tape.z[l + 1], l + 1);
  }

  return dot(params.w, tape.z[params.L - 1]);
}

/// Infer-mode score without keeping the tape alive between calls.
inline double highway_score(const HighwayParams& params,
                            std::span<const double> x) {
  HighwayTape tape;
  return highway_forward(params, x, tape);
}

/// Exact reverse-mode gradient of (dscore * score) w.r.t. every parameter,
/// accumulated into grad. Shared recurrent parameters sum their per-layer
/// contributions; dropout masks recorded on the tape are replayed.
inline void highway_backward(const HighwayParams& params,
                             const HighwayTape& tape, double dscore,
                             HighwayParams& grad) {
  if (tape.p != params.p || tape.K != params.K || tape.L != params.L)
    throw ContractError("highway_backward: tape does not match parameters");
  if (grad.p != params.p || grad.K != params.K)
    throw ContractError("highway_backward: gradient shape mismatch");
  const std::size_t K = params.K;
  const std::size_t L = params.L;

  // score = <w, z_L>
  for (std::size_t i = 0; i < K; ++i)
    grad.w[i] += dscore * tape.z[L - 1][i];

  std::vector<double> dz(K);
  for (std::size_t i = 0; i < K; ++i) dz[i] = dscore * params.w[i];

  std::vector<double> da_t(K), da_h(K), dz_prev(K);
  for (std::size_t l = L - 1; l-- > 0;) {
    // undo dropout applied to z_{l+1}
    if (!tape.hid_mask[l + 1].empty())
      for (std::size_t i = 0; i < K; ++i) dz[i] *= tape.hid_mask[l + 1][i];

    const std::vector<double>& zl = tape.z[l];
    for (std::size_t i = 0; i < K; ++i) {
      const double t = tape.t_gate[l][i];
      const double dh = dz[i] * t;
      const double dt = dz[i] * (tape.h_val[l][i] - zl[i]);
      da_h[i] = tape.a_h[l][i] > 0.0 ? dh : 0.0;
      da_t[i] = dt * t * (1.0 - t);
      dz_prev[i] = dz[i] * (1.0 - t);
    }
    for (std::size_t i = 0; i < K; ++i) {
      grad.b_H[i] += da_h[i];
      grad.b_T[i] += da_t[i];
      auto gh = grad.W_H.row(i);
      auto gt = grad.W_T.row(i);
      for (std::size_t j = 0; j < K; ++j) {
        gh[j] += da_h[i] * zl[j];
        gt[j] += da_t[i] * zl[j];
      }
    }
    // dz_prev += W_H^T da_h + W_T^T da_t
    for (std::size_t i = 0; i < K; ++i) {
      const auto wh = params.W_H.row(i);
      const auto wt = params.W_T.row(i);
      for (std::size_t j = 0; j < K; ++j)
        dz_prev[j] += wh[j] * da_h[i] + wt[j] * da_t[i];
    }
    dz = dz_prev;
  }

  if (!tape.hid_mask[0].empty())
    for (std::size_t i = 0; i < K; ++i) dz[i] *= tape.hid_mask[0][i];
  for (std::size_t i = 0; i < K; ++i) {
    const double da_x = tape.a_x[i] > 0.0 ? dz[i] : 0.0;
    grad.b_X[i] += da_x;
    auto gx = grad.W_X.row(i);
    for (std::size_t j = 0; j < params.p; ++j)
      gx[j] += da_x * tape.x_used[j];
  }
}

/// Cap the L2 norm of each hidden unit's incoming weight row (W_X, W_H, W_T
/// independently) at cap. Rows already inside a relative band of 1e-12 are
/// left untouched, which makes the projection idempotent bit-for-bit.
inline void project_maxnorm(HighwayParams& params, double cap = 1.0) {
  if (cap <= 0.0) throw ValidationError("project_maxnorm: cap must be > 0");
  auto project_rows = [cap](Matrix& m) {
    for (std::size_t r = 0; r < m.rows; ++r) {
      auto row = m.row(r);
      double sq = 0.0;
      for (double v : row) sq += v * v;
      const double norm = std::sqrt(sq);
      if (norm > cap * (1.0 + 1e-12)) {
        const double scale = cap / norm;
        for (double& v : row) v *= scale;
      }
    }
  };
  project_rows(params.W_X);
  project_rows(params.W_H);
  project_rows(params.W_T);
}

// ---------------------------------------------------------------------------
// Rank model wrapper + binary container
// ---------------------------------------------------------------------------

enum class ModelKind : std::uint32_t { kLinear = 0, kHighway = 1 };

struct RankModel {
  std::variant<LinearParams, HighwayParams> params;

  ModelKind kind() const {
    return std::holds_alternative<LinearParams>(params) ? ModelKind::kLinear
                                                        : ModelKind::kHighway;
  }
  std::size_t feature_dim() const {
    if (kind() == ModelKind::kLinear)
      return std::get<LinearParams>(params).dim();
    return std::get<HighwayParams>(params).p;
  }
};

/// Infer-mode score of one item.
inline double score_item(const RankModel& model, std::span<const double> x) {
  if (model.kind() == ModelKind::kLinear)
    return linear_forward(std::get<LinearParams>(model.params), x);
  return highway_score(std::get<HighwayParams>(model.params), x);
}

// Container layout (all integers little-endian):
//   magic   "RKFN"              4 bytes
//   version u32                 currently 1
//   kind    u32                 0 = linear, 1 = highway
//   p, K, L u64 each            K = L = 0 for linear models
//   tensors f64 little-endian:
//     linear:  w[p], b
//     highway: W_X (K*p row-major), b_X[K], W_H (K*K), b_H[K],
//              W_T (K*K), b_T[K], w[K]
constexpr char kModelMagic[4] = {'R', 'K', 'F', 'N'};
constexpr std::uint32_t kModelFormatVersion = 1;

inline void save_model(const RankModel& model, std::ostream& os) {
  os.write(kModelMagic, 4);
  write_u32le(os, kModelFormatVersion);
  write_u32le(os, static_cast<std::uint32_t>(model.kind()));
  if (model.kind() == ModelKind::kLinear) {
    const auto& lin = std::get<LinearParams>(model.params);
    write_u64le(os, lin.dim());
    write_u64le(os, 0);
    write_u64le(os, 0);
    for (double v : lin.w) write_f64le(os, v);
    write_f64le(os, lin.b);
  } else {
    const auto& hw = std::get<HighwayParams>(model.params);
    write_u64le(os, hw.p);
    write_u64le(os, hw.K);
    write_u64le(os, hw.L);
    for_each_param(hw, [&](double v) { write_f64le(os, v); });
  }
  if (!os) throw ValidationError("save_model: write failed");
}

inline RankModel load_model(std::istream& is) {
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, kModelMagic, 4) != 0)
    throw ValidationError("load_model: bad magic, not a rank model file");
  const std::uint32_t version = read_u32le(is);
  if (version != kModelFormatVersion)
    throw ValidationError("load_model: unsupported format version " +
                          std::to_string(version));
  const std::uint32_t kind = read_u32le(is);
  const std::uint64_t p = read_u64le(is);
  const std::uint64_t k = read_u64le(is);
  const std::uint64_t l = read_u64le(is);
  if (kind == static_cast<std::uint32_t>(ModelKind::kLinear)) {
    LinearParams lin(static_cast<std::size_t>(p));
    for (auto& v : lin.w) v = read_f64le(is);
    lin.b = read_f64le(is);
    return RankModel{std::move(lin)};
  }
  if (kind == static_cast<std::uint32_t>(ModelKind::kHighway)) {
    HighwayParams hw(static_cast<std::size_t>(p), static_cast<std::size_t>(k),
                     static_cast<std::size_t>(l));
    for_each_param(hw, [&](double& v) { v = read_f64le(is); });
    return RankModel{std::move(hw)};
  }
  throw ValidationError("load_model: unknown model kind " +
                        std::to_string(kind));
}

inline void save_model_file(const RankModel& model, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw ValidationError("cannot open model file for write: " + path);
  save_model(model, os);
}

inline RankModel load_model_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ValidationError("cannot open model file: " + path);
  return load_model(is);
}

}  // namespace elimrank
