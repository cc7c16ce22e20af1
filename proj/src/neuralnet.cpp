#include "dknav/neuralnet.hpp"

#include <algorithm>
#include <cassert>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <limits>
#include <map>
#include <numeric>
#include <utility>

#include "dknav/imaging.hpp"
#include "dknav/rng.hpp"
#include "internal/file_io.hpp"
#include "json.hpp"

#ifdef DKNAV_HAVE_OPENBLAS
#include <cblas.h>
#endif

namespace dknav {

namespace {

using ordered_json = nlohmann::ordered_json;

#ifdef DKNAV_HAVE_OPENBLAS
void ensure_single_thread() {
  static const bool once = [] {
    openblas_set_num_threads(1);
    return true;
  }();
  (void)once;
}
#endif

// C[m x n] (+)= A[m x k] * B[k x n], row-major, optional transposes of the
// stored operands.
void gemm(bool ta, bool tb, int m, int n, int k, const float* a, const float* b, float beta,
          float* c) {
#ifdef DKNAV_HAVE_OPENBLAS
  ensure_single_thread();
  cblas_sgemm(CblasRowMajor, ta ? CblasTrans : CblasNoTrans, tb ? CblasTrans : CblasNoTrans, m, n,
              k, 1.0f, a, ta ? m : k, b, tb ? k : n, beta, c, n);
#else
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) {
      float acc = 0.0f;
      for (int p = 0; p < k; ++p) {
        acc += (ta ? a[p * m + i] : a[i * k + p]) * (tb ? b[j * k + p] : b[p * n + j]);
      }
      c[i * n + j] = beta * c[i * n + j] + acc;
    }
#endif
}

void gemm(bool ta, bool tb, int m, int n, int k, const double* a, const double* b, double beta,
          double* c) {
#ifdef DKNAV_HAVE_OPENBLAS
  ensure_single_thread();
  cblas_dgemm(CblasRowMajor, ta ? CblasTrans : CblasNoTrans, tb ? CblasTrans : CblasNoTrans, m, n,
              k, 1.0, a, ta ? m : k, b, tb ? k : n, beta, c, n);
#else
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) {
      double acc = 0.0;
      for (int p = 0; p < k; ++p) {
        acc += (ta ? a[p * m + i] : a[i * k + p]) * (tb ? b[j * k + p] : b[p * n + j]);
      }
      c[i * n + j] = beta * c[i * n + j] + acc;
    }
#endif
}

template <typename T>
void debug_check_finite(const Tensor<T>& t) {
#ifndef NDEBUG
  for (const T x : t.v) assert(std::isfinite(static_cast<double>(x)));
#else
  (void)t;
#endif
}

// 3x3, stride 1, pad 1 patch matrix: input [B, C, H, W] gathered into
// col [C*9, B*H*W] so one GEMM convolves the whole batch.
template <typename T>
void im2col_batch(const T* in, int bsz, int c_in, int h, int w, T* col) {
  const long long hw = static_cast<long long>(h) * w;
  const long long bhw = static_cast<long long>(bsz) * hw;
  for (int c = 0; c < c_in; ++c) {
    for (int ky = 0; ky < 3; ++ky) {
      for (int kx = 0; kx < 3; ++kx) {
        T* dst = col + ((static_cast<long long>(c) * 3 + ky) * 3 + kx) * bhw;
        const int x0 = std::max(0, 1 - kx);
        const int x1 = std::min(w, w + 1 - kx);
        for (int b = 0; b < bsz; ++b) {
          const T* src = in + (static_cast<long long>(b) * c_in + c) * hw;
          T* d = dst + static_cast<long long>(b) * hw;
          for (int y = 0; y < h; ++y) {
            const int sy = y + ky - 1;
            T* drow = d + static_cast<long long>(y) * w;
            if (sy < 0 || sy >= h) {
              std::fill(drow, drow + w, T(0));
              continue;
            }
            const T* srow = src + static_cast<long long>(sy) * w;
            for (int x = 0; x < x0; ++x) drow[x] = T(0);
            std::copy(srow + x0 + kx - 1, srow + x1 + kx - 1, drow + x0);
            for (int x = x1; x < w; ++x) drow[x] = T(0);
          }
        }
      }
    }
  }
}

// Transpose of im2col: scatter-adds col gradients back onto the input grid.
template <typename T>
void col2im_batch(const T* col, int bsz, int c_in, int h, int w, T* in_grad) {
  const long long hw = static_cast<long long>(h) * w;
  const long long bhw = static_cast<long long>(bsz) * hw;
  for (int c = 0; c < c_in; ++c) {
    for (int ky = 0; ky < 3; ++ky) {
      for (int kx = 0; kx < 3; ++kx) {
        const T* src = col + ((static_cast<long long>(c) * 3 + ky) * 3 + kx) * bhw;
        const int x0 = std::max(0, 1 - kx);
        const int x1 = std::min(w, w + 1 - kx);
        for (int b = 0; b < bsz; ++b) {
          T* dst = in_grad + (static_cast<long long>(b) * c_in + c) * hw;
          const T* s = src + static_cast<long long>(b) * hw;
          for (int y = 0; y < h; ++y) {
            const int sy = y + ky - 1;
            if (sy < 0 || sy >= h) continue;
            const T* srow = s + static_cast<long long>(y) * w;
            T* drow = dst + static_cast<long long>(sy) * w + (kx - 1);
            for (int x = x0; x < x1; ++x) drow[x] += srow[x];
          }
        }
      }
    }
  }
}

template <typename T>
struct BlockCache {
  Tensor<T> input;      // what the conv consumed [B, Cin, H, W]
  Tensor<T> activated;  // post-leaky-ReLU [B, Cout, H, W]
  std::vector<long long> argmax;  // flat index into `activated` per pooled value
  int h = 0, w = 0;               // pre-pool spatial dims
};

template <typename T>
struct ForwardCache {
  std::vector<BlockCache<T>> blocks;
  Tensor<T> pooled;           // final pooled feature map [B, F, h, w]
  std::vector<char> keep;     // dropout keep mask per (b, feature)
  T drop_scale = T(1);
  Tensor<T> gap;              // [B, F]
  int bsz = 0;
};

template <typename T>
void conv_forward(const ConvLayer<T>& layer, const Tensor<T>& in, int bsz, int c_in, int h, int w,
                  Tensor<T>& out, std::vector<T>& col_buf, std::vector<T>& mat_buf) {
  const int c_out = layer.w.shape[0];
  const long long hw = static_cast<long long>(h) * w;
  const long long bhw = static_cast<long long>(bsz) * hw;

  col_buf.resize(static_cast<std::size_t>(c_in) * 9 * bhw);
  im2col_batch(in.data(), bsz, c_in, h, w, col_buf.data());

  mat_buf.resize(static_cast<std::size_t>(c_out) * bhw);
  gemm(false, false, c_out, static_cast<int>(bhw), c_in * 9, layer.w.data(), col_buf.data(), T(0),
       mat_buf.data());

  out = Tensor<T>::zeros({bsz, c_out, h, w});
  for (int b = 0; b < bsz; ++b) {
    for (int co = 0; co < c_out; ++co) {
      const T bias = layer.b.v[static_cast<std::size_t>(co)];
      const T* src = mat_buf.data() + co * bhw + static_cast<long long>(b) * hw;
      T* dst = out.data() + (static_cast<long long>(b) * c_out + co) * hw;
      for (long long p = 0; p < hw; ++p) dst[p] = src[p] + bias;
    }
  }
}

// Leaky slope never changes sign, so the activation's own sign tells the
// backward pass which branch fired.
template <typename T>
void leaky_relu_inplace(Tensor<T>& t, T slope) {
  for (T& x : t.v) x = x > T(0) ? x : slope * x;
}

template <typename T>
void maxpool_forward(const Tensor<T>& in, int bsz, int c, int h, int w, Tensor<T>& out,
                     std::vector<long long>& argmax) {
  const int oh = h / 2, ow = w / 2;
  out = Tensor<T>::zeros({bsz, c, oh, ow});
  argmax.assign(out.v.size(), 0);
  const long long hw = static_cast<long long>(h) * w;
  long long j = 0;
  for (int b = 0; b < bsz; ++b) {
    for (int ch = 0; ch < c; ++ch) {
      const T* base = in.data() + (static_cast<long long>(b) * c + ch) * hw;
      const long long base_off = (static_cast<long long>(b) * c + ch) * hw;
      for (int oy = 0; oy < oh; ++oy) {
        for (int ox = 0; ox < ow; ++ox, ++j) {
          const int y = 2 * oy, x = 2 * ox;
          long long best_off = static_cast<long long>(y) * w + x;
          T best = base[best_off];
          const long long cands[3] = {static_cast<long long>(y) * w + x + 1,
                                      (static_cast<long long>(y) + 1) * w + x,
                                      (static_cast<long long>(y) + 1) * w + x + 1};
          for (const long long cand : cands) {
            if (base[cand] > best) {
              best = base[cand];
              best_off = cand;
            }
          }
          out.v[static_cast<std::size_t>(j)] = best;
          argmax[static_cast<std::size_t>(j)] = base_off + best_off;
        }
      }
    }
  }
}

template <typename T>
void check_input_shape(const NetworkParamsT<T>& params, const Tensor<T>& batch) {
  if (batch.shape.size() != 4) {
    throw ShapeMismatch("network input must be a [batch, channels, height, width] tensor");
  }
  const int c = batch.shape[1], h = batch.shape[2], w = batch.shape[3];
  if (batch.shape[0] < 1) throw ShapeMismatch("batch must contain at least one image");
  if (c != params.config.in_channels) {
    throw ShapeMismatch("expected " + std::to_string(params.config.in_channels) +
                        " input channels, got " + std::to_string(c));
  }
  const int min_side = params.config.min_input_side();
  if (h < min_side || w < min_side) {
    throw ShapeMismatch("input " + std::to_string(h) + "x" + std::to_string(w) +
                        " too small for " + std::to_string(params.config.blocks) +
                        " pooling stages (needs >= " + std::to_string(min_side) + ")");
  }
}

template <typename T>
void forward_impl(const NetworkParamsT<T>& params, const Tensor<T>& batch, bool training,
                  std::uint64_t dropout_seed, Tensor<T>& t_hat, Tensor<T>& r_hat,
                  ForwardCache<T>* cache) {
  check_input_shape(params, batch);
  const NetworkConfig& cfg = params.config;
  const int bsz = batch.shape[0];

  std::vector<T> col_buf, mat_buf;
  Tensor<T> cur = batch;
  int h = batch.shape[2], w = batch.shape[3];
  int c_in = cfg.in_channels;

  if (cache) {
    cache->blocks.clear();
    cache->blocks.resize(static_cast<std::size_t>(cfg.blocks));
    cache->bsz = bsz;
  }

  for (int i = 0; i < cfg.blocks; ++i) {
    const int c_out = cfg.channels_at(i);
    Tensor<T> act;
    conv_forward(params.conv[static_cast<std::size_t>(i)], cur, bsz, c_in, h, w, act, col_buf,
                 mat_buf);
    leaky_relu_inplace(act, static_cast<T>(cfg.leaky_slope));

    Tensor<T> pooled;
    std::vector<long long> argmax;
    maxpool_forward(act, bsz, c_out, h, w, pooled, argmax);

    if (cache) {
      BlockCache<T>& bc = cache->blocks[static_cast<std::size_t>(i)];
      bc.input = std::move(cur);
      bc.activated = std::move(act);
      bc.argmax = std::move(argmax);
      bc.h = h;
      bc.w = w;
    }
    cur = std::move(pooled);
    h /= 2;
    w /= 2;
    c_in = c_out;
  }

  const int feat = cfg.feature_dim();
  const long long hw = static_cast<long long>(h) * w;

  // Spatial dropout: whole feature maps are zeroed per sample, survivors
  // scaled so the expectation matches eval mode.
  std::vector<char> keep(static_cast<std::size_t>(bsz) * feat, 1);
  T scale = T(1);
  if (training && params.config.dropout_p > 0.0) {
    Rng rng(dropout_seed);
    for (auto& k : keep) k = rng.bernoulli(params.config.dropout_p) ? 0 : 1;
    scale = static_cast<T>(1.0 / (1.0 - params.config.dropout_p));
  }

  Tensor<T> gap = Tensor<T>::zeros({bsz, feat});
  for (int b = 0; b < bsz; ++b) {
    for (int f = 0; f < feat; ++f) {
      if (!keep[static_cast<std::size_t>(b) * feat + f]) continue;
      const T* src = cur.data() + (static_cast<long long>(b) * feat + f) * hw;
      T acc = T(0);
      for (long long p = 0; p < hw; ++p) acc += src[p];
      gap.v[static_cast<std::size_t>(b) * feat + f] = scale * acc / static_cast<T>(hw);
    }
  }

  t_hat = Tensor<T>::zeros({bsz, 3});
  r_hat = Tensor<T>::zeros({bsz, 6});
  for (int b = 0; b < bsz; ++b) {
    const T* g = gap.data() + static_cast<long long>(b) * feat;
    for (int i = 0; i < 3; ++i) {
      T acc = params.head_t_b.v[static_cast<std::size_t>(i)];
      const T* row = params.head_t_w.data() + static_cast<long long>(i) * feat;
      for (int f = 0; f < feat; ++f) acc += row[f] * g[f];
      t_hat.v[static_cast<std::size_t>(b) * 3 + i] = acc;
    }
    for (int i = 0; i < 6; ++i) {
      T acc = params.head_r_b.v[static_cast<std::size_t>(i)];
      const T* row = params.head_r_w.data() + static_cast<long long>(i) * feat;
      for (int f = 0; f < feat; ++f) acc += row[f] * g[f];
      r_hat.v[static_cast<std::size_t>(b) * 6 + i] = acc;
    }
  }

  debug_check_finite(t_hat);
  debug_check_finite(r_hat);

  if (cache) {
    cache->pooled = std::move(cur);
    cache->keep = std::move(keep);
    cache->drop_scale = scale;
    cache->gap = std::move(gap);
  }
}

template <typename T>
NetworkParamsT<T> zeros_like(const NetworkParamsT<T>& p) {
  NetworkParamsT<T> z;
  z.config = p.config;
  z.conv.resize(p.conv.size());
  for (std::size_t i = 0; i < p.conv.size(); ++i) {
    z.conv[i].w = Tensor<T>::zeros(p.conv[i].w.shape);
    z.conv[i].b = Tensor<T>::zeros(p.conv[i].b.shape);
  }
  z.head_t_w = Tensor<T>::zeros(p.head_t_w.shape);
  z.head_t_b = Tensor<T>::zeros(p.head_t_b.shape);
  z.head_r_w = Tensor<T>::zeros(p.head_r_w.shape);
  z.head_r_b = Tensor<T>::zeros(p.head_r_b.shape);
  z.sigma_t = Tensor<T>::zeros({1});
  z.sigma_r = Tensor<T>::zeros({1});
  return z;
}

template <typename T>
std::vector<Tensor<T>*> tensor_list(NetworkParamsT<T>& p) {
  std::vector<Tensor<T>*> out;
  p.for_each([&](const std::string&, Tensor<T>& t) { out.push_back(&t); });
  return out;
}

}  // namespace

template <typename T>
NetworkParamsT<T> init_params(const NetworkConfig& config, std::uint64_t seed) {
  if (config.blocks < 1 || config.base_channels < 1 || config.in_channels < 1) {
    throw ConfigInvalid("network needs at least one block, channel, and input channel");
  }
  if (config.dropout_p < 0.0 || config.dropout_p >= 1.0) {
    throw ConfigInvalid("dropout probability must lie in [0, 1)");
  }

  NetworkParamsT<T> p;
  p.config = config;
  Rng rng(derive_seed(seed, 0x11717));

  int c_in = config.in_channels;
  for (int i = 0; i < config.blocks; ++i) {
    const int c_out = config.channels_at(i);
    ConvLayer<T> layer;
    layer.w = Tensor<T>::zeros({c_out, c_in, 3, 3});
    layer.b = Tensor<T>::zeros({c_out});
    const double bound = std::sqrt(6.0 / (c_in * 9));  // He-uniform fan-in
    for (T& x : layer.w.v) x = static_cast<T>(rng.uniform(-bound, bound));
    p.conv.push_back(std::move(layer));
    c_in = c_out;
  }

  const int feat = config.feature_dim();
  const double head_bound = std::sqrt(6.0 / feat);
  p.head_t_w = Tensor<T>::zeros({3, feat});
  p.head_t_b = Tensor<T>::zeros({3});
  p.head_r_w = Tensor<T>::zeros({6, feat});
  p.head_r_b = Tensor<T>::zeros({6});
  for (T& x : p.head_t_w.v) x = static_cast<T>(rng.uniform(-head_bound, head_bound));
  for (T& x : p.head_r_w.v) x = static_cast<T>(rng.uniform(-head_bound, head_bound));
  p.sigma_t = Tensor<T>::zeros({1});
  p.sigma_r = Tensor<T>::zeros({1});
  return p;
}

template <typename T>
void forward(const NetworkParamsT<T>& params, const Tensor<T>& batch, bool training,
             std::uint64_t dropout_seed, Tensor<T>& t_hat, Tensor<T>& r_hat) {
  forward_impl(params, batch, training, dropout_seed, t_hat, r_hat,
               static_cast<ForwardCache<T>*>(nullptr));
}

template <typename T>
LossBreakdown loss_value(const Tensor<T>& t_hat, const Tensor<T>& r_hat, const Tensor<T>& t_label,
                         const Tensor<T>& r_label, T sigma_t, T sigma_r) {
  if (t_hat.shape != t_label.shape || r_hat.shape != r_label.shape ||
      t_hat.shape.size() != 2 || t_hat.shape[1] != 3 || r_hat.shape[1] != 6 ||
      t_hat.shape[0] != r_hat.shape[0]) {
    throw ShapeMismatch("loss expects t [B,3] and r [B,6] with matching labels");
  }
  const int bsz = t_hat.shape[0];
  LossBreakdown out;
  for (int b = 0; b < bsz; ++b) {
    double nt = 0.0, nr = 0.0;
    for (int i = 0; i < 3; ++i) {
      const double d = static_cast<double>(t_hat.v[static_cast<std::size_t>(b) * 3 + i]) -
                       static_cast<double>(t_label.v[static_cast<std::size_t>(b) * 3 + i]);
      nt += d * d;
    }
    for (int i = 0; i < 6; ++i) {
      const double d = static_cast<double>(r_hat.v[static_cast<std::size_t>(b) * 6 + i]) -
                       static_cast<double>(r_label.v[static_cast<std::size_t>(b) * 6 + i]);
      nr += d * d;
    }
    out.l_t += std::sqrt(nt);
    out.l_r += std::sqrt(nr);
  }
  const double st = static_cast<double>(sigma_t), sr = static_cast<double>(sigma_r);
  out.total = out.l_r * std::exp(-2.0 * sr) + out.l_t * std::exp(-2.0 * st) + 2.0 * (sr + st);
  return out;
}

template <typename T>
double compute_loss(const NetworkParamsT<T>& params, const Tensor<T>& batch,
                    const Tensor<T>& t_label, const Tensor<T>& r_label, bool training,
                    std::uint64_t dropout_seed) {
  Tensor<T> t_hat, r_hat;
  forward(params, batch, training, dropout_seed, t_hat, r_hat);
  return loss_value(t_hat, r_hat, t_label, r_label, params.sigma_t.v[0], params.sigma_r.v[0])
      .total;
}

template <typename T>
NetworkParamsT<T> compute_gradients(const NetworkParamsT<T>& params, const Tensor<T>& batch,
                                    const Tensor<T>& t_label, const Tensor<T>& r_label,
                                    bool training, std::uint64_t dropout_seed,
                                    LossBreakdown* loss_out, Tensor<T>* t_hat_out,
                                    Tensor<T>* r_hat_out) {
  ForwardCache<T> cache;
  Tensor<T> t_hat, r_hat;
  forward_impl(params, batch, training, dropout_seed, t_hat, r_hat, &cache);

  const LossBreakdown breakdown =
      loss_value(t_hat, r_hat, t_label, r_label, params.sigma_t.v[0], params.sigma_r.v[0]);
  if (loss_out) *loss_out = breakdown;

  const NetworkConfig& cfg = params.config;
  const int bsz = cache.bsz;
  const int feat = cfg.feature_dim();
  NetworkParamsT<T> g = zeros_like(params);

  const double st = static_cast<double>(params.sigma_t.v[0]);
  const double sr = static_cast<double>(params.sigma_r.v[0]);
  const double wt = std::exp(-2.0 * st);
  const double wr = std::exp(-2.0 * sr);
  g.sigma_t.v[0] = static_cast<T>(-2.0 * breakdown.l_t * wt + 2.0);
  g.sigma_r.v[0] = static_cast<T>(-2.0 * breakdown.l_r * wr + 2.0);

  // d loss / d predictions: the unsquared L2 norm differentiates to the unit
  // residual (zero at a zero residual, the chosen subgradient).
  Tensor<T> d_t = Tensor<T>::zeros({bsz, 3});
  Tensor<T> d_r = Tensor<T>::zeros({bsz, 6});
  for (int b = 0; b < bsz; ++b) {
    double nt = 0.0, nr = 0.0;
    double dt_vec[3], dr_vec[6];
    for (int i = 0; i < 3; ++i) {
      dt_vec[i] = static_cast<double>(t_hat.v[static_cast<std::size_t>(b) * 3 + i]) -
                  static_cast<double>(t_label.v[static_cast<std::size_t>(b) * 3 + i]);
      nt += dt_vec[i] * dt_vec[i];
    }
    for (int i = 0; i < 6; ++i) {
      dr_vec[i] = static_cast<double>(r_hat.v[static_cast<std::size_t>(b) * 6 + i]) -
                  static_cast<double>(r_label.v[static_cast<std::size_t>(b) * 6 + i]);
      nr += dr_vec[i] * dr_vec[i];
    }
    nt = std::sqrt(nt);
    nr = std::sqrt(nr);
    if (nt > 0.0) {
      for (int i = 0; i < 3; ++i) {
        d_t.v[static_cast<std::size_t>(b) * 3 + i] = static_cast<T>(wt * dt_vec[i] / nt);
      }
    }
    if (nr > 0.0) {
      for (int i = 0; i < 6; ++i) {
        d_r.v[static_cast<std::size_t>(b) * 6 + i] = static_cast<T>(wr * dr_vec[i] / nr);
      }
    }
  }

  // Heads.
  Tensor<T> d_gap = Tensor<T>::zeros({bsz, feat});
  for (int b = 0; b < bsz; ++b) {
    const T* gv = cache.gap.data() + static_cast<long long>(b) * feat;
    T* dg = d_gap.data() + static_cast<long long>(b) * feat;
    for (int i = 0; i < 3; ++i) {
      const T d = d_t.v[static_cast<std::size_t>(b) * 3 + i];
      g.head_t_b.v[static_cast<std::size_t>(i)] += d;
      T* wrow = g.head_t_w.data() + static_cast<long long>(i) * feat;
      const T* prow = params.head_t_w.data() + static_cast<long long>(i) * feat;
      for (int f = 0; f < feat; ++f) {
        wrow[f] += d * gv[f];
        dg[f] += d * prow[f];
      }
    }
    for (int i = 0; i < 6; ++i) {
      const T d = d_r.v[static_cast<std::size_t>(b) * 6 + i];
      g.head_r_b.v[static_cast<std::size_t>(i)] += d;
      T* wrow = g.head_r_w.data() + static_cast<long long>(i) * feat;
      const T* prow = params.head_r_w.data() + static_cast<long long>(i) * feat;
      for (int f = 0; f < feat; ++f) {
        wrow[f] += d * gv[f];
        dg[f] += d * prow[f];
      }
    }
  }

  // GAP + spatial dropout.
  const int last_h = cache.blocks.back().h / 2;
  const int last_w = cache.blocks.back().w / 2;
  const long long hw = static_cast<long long>(last_h) * last_w;
  Tensor<T> d_cur = Tensor<T>::zeros({bsz, feat, last_h, last_w});
  for (int b = 0; b < bsz; ++b) {
    for (int f = 0; f < feat; ++f) {
      if (!cache.keep[static_cast<std::size_t>(b) * feat + f]) continue;
      const T dv = d_gap.v[static_cast<std::size_t>(b) * feat + f] * cache.drop_scale /
                   static_cast<T>(hw);
      T* dst = d_cur.data() + (static_cast<long long>(b) * feat + f) * hw;
      for (long long p = 0; p < hw; ++p) dst[p] = dv;
    }
  }

  // Blocks in reverse: unpool, undo leaky-ReLU, then conv weight/input grads.
  std::vector<T> col_buf, mat_buf, dcol_buf;
  for (int i = cfg.blocks - 1; i >= 0; --i) {
    const BlockCache<T>& bc = cache.blocks[static_cast<std::size_t>(i)];
    const int c_out = cfg.channels_at(i);
    const int c_in = i == 0 ? cfg.in_channels : cfg.channels_at(i - 1);
    const long long hw_in = static_cast<long long>(bc.h) * bc.w;
    const long long bhw = static_cast<long long>(bsz) * hw_in;

    // Max-pool backward: route each pooled gradient to its argmax source.
    Tensor<T> d_act = Tensor<T>::zeros({bsz, c_out, bc.h, bc.w});
    for (std::size_t j = 0; j < bc.argmax.size(); ++j) {
      d_act.v[static_cast<std::size_t>(bc.argmax[j])] += d_cur.v[j];
    }

    // Leaky-ReLU backward via the activation's sign.
    const T slope = static_cast<T>(cfg.leaky_slope);
    for (std::size_t j = 0; j < d_act.v.size(); ++j) {
      if (!(bc.activated.v[j] > T(0))) d_act.v[j] *= slope;
    }

    // Gather [B, Cout, H, W] into the GEMM layout [Cout, B*H*W].
    mat_buf.resize(static_cast<std::size_t>(c_out) * bhw);
    for (int b = 0; b < bsz; ++b) {
      for (int co = 0; co < c_out; ++co) {
        const T* src = d_act.data() + (static_cast<long long>(b) * c_out + co) * hw_in;
        std::copy(src, src + hw_in, mat_buf.data() + co * bhw + static_cast<long long>(b) * hw_in);
      }
    }

    col_buf.resize(static_cast<std::size_t>(c_in) * 9 * bhw);
    im2col_batch(bc.input.data(), bsz, c_in, bc.h, bc.w, col_buf.data());

    ConvLayer<T>& gl = g.conv[static_cast<std::size_t>(i)];
    gemm(false, true, c_out, c_in * 9, static_cast<int>(bhw), mat_buf.data(), col_buf.data(), T(0),
         gl.w.data());
    for (int co = 0; co < c_out; ++co) {
      T acc = T(0);
      const T* row = mat_buf.data() + co * bhw;
      for (long long p = 0; p < bhw; ++p) acc += row[p];
      gl.b.v[static_cast<std::size_t>(co)] = acc;
    }

    if (i > 0) {
      dcol_buf.resize(static_cast<std::size_t>(c_in) * 9 * bhw);
      gemm(true, false, c_in * 9, static_cast<int>(bhw), c_out,
           params.conv[static_cast<std::size_t>(i)].w.data(), mat_buf.data(), T(0),
           dcol_buf.data());
      d_cur = Tensor<T>::zeros({bsz, c_in, bc.h, bc.w});
      col2im_batch(dcol_buf.data(), bsz, c_in, bc.h, bc.w, d_cur.data());
    }
  }

  if (t_hat_out) *t_hat_out = std::move(t_hat);
  if (r_hat_out) *r_hat_out = std::move(r_hat);
  return g;
}

template <typename T>
void adam_step(NetworkParamsT<T>& params, const NetworkParamsT<T>& grads, AdamState<T>& state,
               double lr) {
  constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kEps = 1e-8;
  if (state.m.conv.empty()) {
    state.m = zeros_like(params);
    state.v = zeros_like(params);
    state.step = 0;
  }
  ++state.step;
  const double bc1 = 1.0 - std::pow(kBeta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(kBeta2, static_cast<double>(state.step));

  auto ps = tensor_list(params);
  auto gs = tensor_list(const_cast<NetworkParamsT<T>&>(grads));
  auto ms = tensor_list(state.m);
  auto vs = tensor_list(state.v);
  if (ps.size() != gs.size()) throw ShapeMismatch("gradient structure does not match parameters");

  for (std::size_t t = 0; t < ps.size(); ++t) {
    if (ps[t]->v.size() != gs[t]->v.size()) {
      throw ShapeMismatch("gradient tensor size mismatch");
    }
    for (std::size_t j = 0; j < ps[t]->v.size(); ++j) {
      const double gj = static_cast<double>(gs[t]->v[j]);
      double m = static_cast<double>(ms[t]->v[j]);
      double v = static_cast<double>(vs[t]->v[j]);
      m = kBeta1 * m + (1.0 - kBeta1) * gj;
      v = kBeta2 * v + (1.0 - kBeta2) * gj * gj;
      ms[t]->v[j] = static_cast<T>(m);
      vs[t]->v[j] = static_cast<T>(v);
      const double m_hat = m / bc1;
      const double v_hat = v / bc2;
      ps[t]->v[j] = static_cast<T>(static_cast<double>(ps[t]->v[j]) -
                                   lr * m_hat / (std::sqrt(v_hat) + kEps));
    }
  }
}

double cyclical_lr(int epoch, const TrainConfig& config) {
  if (config.epochs < config.cycles || config.cycles < 1) {
    throw ConfigInvalid("need epochs >= cycles >= 1");
  }
  if (epoch < 0 || epoch >= config.epochs) {
    throw ConfigInvalid("epoch outside [0, epochs)");
  }
  const double lr_min = config.lr_max / 10.0;
  const double period = static_cast<double>(config.epochs) / config.cycles;
  const double phase = std::fmod(static_cast<double>(epoch), period) / period;
  const double tri = 1.0 - std::abs(2.0 * phase - 1.0);
  return lr_min + (config.lr_max - lr_min) * tri;
}

// --- training -------------------------------------------------------------

namespace {

CameraIntrinsics scaled_intrinsics(CameraIntrinsics c, int factor) {
  c.width /= factor;
  c.height /= factor;
  c.fx /= factor;
  c.fy /= factor;
  c.cx /= factor;
  c.cy /= factor;
  return c;
}

struct FrameHandle {
  const SequenceRecord* rec = nullptr;
  std::size_t rec_ordinal = 0;
  std::size_t frame = 0;
  std::size_t image_slot = 0;  // index into the preloaded image store
};

std::array<double, 6> rot6d_label(const UnitQuaternion& q) {
  return dcm_to_rot6d(quat_to_dcm(q)).v;
}

UnitQuaternion decode_rotation(const float* six) {
  Rot6D r;
  for (int i = 0; i < 6; ++i) r.v[static_cast<std::size_t>(i)] = static_cast<double>(six[i]);
  try {
    return dcm_to_quat(rot6d_to_dcm(r));
  } catch (const DegenerateRotation&) {
    return UnitQuaternion::identity();
  }
}

void fill_image(const Image& img, float* dst) {
  const long long hw = static_cast<long long>(img.width) * img.height;
  constexpr float kInv = 1.0f / 255.0f;
  for (int c = 0; c < 3; ++c) {
    float* plane = dst + c * hw;
    const std::uint8_t* src = img.rgb.data() + c;
    for (long long p = 0; p < hw; ++p) plane[p] = static_cast<float>(src[3 * p]) * kInv;
  }
}

struct MetricAccum {
  double loss_sum = 0.0;
  double dt_sum = 0.0;
  double dq_sum = 0.0;
  double dtr_sum = 0.0;
  long long frames = 0;

  EpochMetrics to_metrics(int epoch, const std::string& split) const {
    EpochMetrics m;
    m.epoch = epoch;
    m.split = split;
    const double n = frames > 0 ? static_cast<double>(frames) : 1.0;
    m.loss = loss_sum / n;
    m.mean_dt_m = dt_sum / n;
    m.mean_dq_deg = dq_sum / n;
    m.mean_dtr_frac = dtr_sum / n;
    return m;
  }
};

// Accumulates decoded pose errors for a batch of predictions.
void accumulate_errors(const Tensor<float>& t_hat, const Tensor<float>& r_hat,
                       const std::vector<Pose>& labels, MetricAccum& acc) {
  for (std::size_t b = 0; b < labels.size(); ++b) {
    const Vec3 t{static_cast<double>(t_hat.v[b * 3 + 0]), static_cast<double>(t_hat.v[b * 3 + 1]),
                 static_cast<double>(t_hat.v[b * 3 + 2])};
    const UnitQuaternion q = decode_rotation(r_hat.data() + b * 6);
    acc.dt_sum += position_error(t, labels[b].translation);
    acc.dq_sum += attitude_error_deg(q, labels[b].rotation);
    acc.dtr_sum += range_normalized_error(t, labels[b].translation);
    acc.frames += 1;
  }
}

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

}  // namespace

AugmentedFrame augment_frame(const Image& image, const Pose& pose, const CameraIntrinsics& intr,
                             std::uint64_t seed) {
  AugmentedFrame out{image, pose};
  try {
    WarpResult w = augment_pose_warp(image, pose, intr, derive_seed(seed, 1), WarpLimits{});
    out.image = std::move(w.image);
    out.pose = w.pose;
  } catch (const PlaneBehindCamera&) {
    // Too close for a plane-induced warp: keep the original geometry.
  }
  out.image = augment_photometric(out.image, derive_seed(seed, 2), PhotometricStrength{});
  return out;
}

TrainResult train(const std::vector<SequenceRecord>& records, const SplitPlan& plan,
                  const TrainConfig& config) {
  if (config.epochs < config.cycles || config.cycles < 1) {
    throw ConfigInvalid("need epochs >= cycles >= 1");
  }
  if (config.batch_size < 1) throw ConfigInvalid("batch_size must be positive");
  if (config.downscale < 1) throw ConfigInvalid("downscale must be >= 1");
  if (config.dropout_p < 0.0 || config.dropout_p >= 1.0) {
    throw ConfigInvalid("dropout probability must lie in [0, 1)");
  }

  std::map<std::string, std::pair<const SequenceRecord*, std::size_t>> by_id;
  for (std::size_t i = 0; i < records.size(); ++i) by_id[records[i].id] = {&records[i], i};

  // Preload (and downscale) every frame referenced by the plan.
  std::vector<Image> images;
  std::vector<CameraIntrinsics> cams(records.size());
  int in_h = -1, in_w = -1;

  const auto resolve = [&](const std::vector<SplitSlice>& slices) {
    std::vector<FrameHandle> handles;
    for (const SplitSlice& s : slices) {
      const auto it = by_id.find(s.sequence_id);
      if (it == by_id.end()) {
        throw ConfigInvalid("split plan references unknown sequence '" + s.sequence_id + "'");
      }
      const SequenceRecord* rec = it->second.first;
      if (s.range.begin < 0 || s.range.end > static_cast<long long>(rec->frames.size()) ||
          s.range.begin > s.range.end) {
        throw ConfigInvalid("split range outside sequence '" + s.sequence_id + "'");
      }
      cams[it->second.second] = scaled_intrinsics(rec->camera, config.downscale);
      for (long long i = s.range.begin; i < s.range.end; ++i) {
        Image img = read_ppm(rec->frame_path(static_cast<std::size_t>(i)));
        if (config.downscale > 1) img = downscale_box(img, config.downscale);
        if (in_h < 0) {
          in_h = img.height;
          in_w = img.width;
        } else if (img.height != in_h || img.width != in_w) {
          throw ShapeMismatch("all training frames must share one resolution");
        }
        handles.push_back({rec, it->second.second, static_cast<std::size_t>(i), images.size()});
        images.push_back(std::move(img));
      }
    }
    return handles;
  };

  std::vector<FrameHandle> train_handles = resolve(plan.train);
  std::vector<FrameHandle> val_handles = resolve(plan.val);
  if (train_handles.empty()) throw EmptySplit("split plan has no training frames");

  NetworkConfig net_cfg = config.network;
  net_cfg.dropout_p = config.dropout_p;
  NetworkParams params = init_params<float>(net_cfg, derive_seed(config.seed, 0x1A17));
  AdamState<float> adam;

  TrainResult result;
  double best_val = std::numeric_limits<double>::infinity();

  const long long hw = static_cast<long long>(in_h) * in_w;
  const auto run_batch = [&](const std::vector<FrameHandle>& handles, std::size_t lo,
                             std::size_t hi, bool training, std::uint64_t epoch_seed,
                             std::uint64_t batch_no, double lr, MetricAccum& acc) {
    const int bsz = static_cast<int>(hi - lo);
    Tensor<float> batch = Tensor<float>::zeros({bsz, 3, in_h, in_w});
    Tensor<float> t_label = Tensor<float>::zeros({bsz, 3});
    Tensor<float> r_label = Tensor<float>::zeros({bsz, 6});
    std::vector<Pose> poses(static_cast<std::size_t>(bsz));

    for (int b = 0; b < bsz; ++b) {
      const FrameHandle& h = handles[lo + static_cast<std::size_t>(b)];
      Pose pose = h.rec->frames[h.frame].pose;
      const Image* img = &images[h.image_slot];
      Image scratch;
      if (training && config.augment) {
        const std::uint64_t frame_seed =
            derive_seed(derive_seed(epoch_seed, h.rec_ordinal), h.frame);
        AugmentedFrame aug = augment_frame(*img, pose, cams[h.rec_ordinal], frame_seed);
        scratch = std::move(aug.image);
        pose = aug.pose;
        img = &scratch;
      }
      fill_image(*img, batch.data() + static_cast<long long>(b) * 3 * hw);
      poses[static_cast<std::size_t>(b)] = pose;
      const auto r6 = rot6d_label(pose.rotation);
      for (int i = 0; i < 3; ++i) {
        t_label.v[static_cast<std::size_t>(b) * 3 + i] =
            static_cast<float>(i == 0 ? pose.translation.x
                                      : (i == 1 ? pose.translation.y : pose.translation.z));
      }
      for (int i = 0; i < 6; ++i) {
        r_label.v[static_cast<std::size_t>(b) * 6 + i] =
            static_cast<float>(r6[static_cast<std::size_t>(i)]);
      }
    }

    LossBreakdown breakdown;
    Tensor<float> t_hat, r_hat;
    if (training) {
      NetworkParams grads =
          compute_gradients(params, batch, t_label, r_label, true,
                            derive_seed(epoch_seed, 0xD000 + batch_no), &breakdown, &t_hat,
                            &r_hat);
      adam_step(params, grads, adam, lr);
    } else {
      forward(params, batch, false, 0, t_hat, r_hat);
      breakdown = loss_value(t_hat, r_hat, t_label, r_label, params.sigma_t.v[0],
                             params.sigma_r.v[0]);
    }
    acc.loss_sum += breakdown.total;
    accumulate_errors(t_hat, r_hat, poses, acc);
  };

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    const double lr = cyclical_lr(epoch, config);
    const std::uint64_t epoch_seed = derive_seed(config.seed, 0xE90C + static_cast<std::uint64_t>(epoch));

    // Seeded Fisher-Yates shuffle of the training frames.
    Rng shuffle_rng(derive_seed(config.seed, 0x5E00 + static_cast<std::uint64_t>(epoch)));
    for (std::size_t i = train_handles.size(); i > 1; --i) {
      std::swap(train_handles[i - 1], train_handles[shuffle_rng.below(i)]);
    }

    MetricAccum train_acc;
    std::uint64_t batch_no = 0;
    for (std::size_t lo = 0; lo < train_handles.size(); lo += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t hi =
          std::min(train_handles.size(), lo + static_cast<std::size_t>(config.batch_size));
      run_batch(train_handles, lo, hi, true, epoch_seed, batch_no++, lr, train_acc);
    }
    result.log.push_back(train_acc.to_metrics(epoch, "train"));

    if (!val_handles.empty()) {
      MetricAccum val_acc;
      for (std::size_t lo = 0; lo < val_handles.size(); lo += static_cast<std::size_t>(config.batch_size)) {
        const std::size_t hi =
            std::min(val_handles.size(), lo + static_cast<std::size_t>(config.batch_size));
        run_batch(val_handles, lo, hi, false, epoch_seed, 0, lr, val_acc);
      }
      const EpochMetrics vm = val_acc.to_metrics(epoch, "val");
      result.log.push_back(vm);
      if (vm.loss < best_val) {
        best_val = vm.loss;
        result.params = params;
        result.best_epoch = epoch;
      }
    }
  }

  if (val_handles.empty()) {
    result.params = params;
    result.best_epoch = config.epochs - 1;
  }
  return result;
}

void write_metrics_csv(const std::string& path, const std::vector<EpochMetrics>& log) {
  std::string out = "epoch,split,loss,mean_dt_m,mean_dq_deg,mean_dtr_frac\n";
  for (const EpochMetrics& m : log) {
    out += std::to_string(m.epoch) + "," + m.split + "," + format_double(m.loss) + "," +
           format_double(m.mean_dt_m) + "," + format_double(m.mean_dq_deg) + "," +
           format_double(m.mean_dtr_frac) + "\n";
  }
  internal::write_file_atomic(path, out);
}

double median(std::vector<double> values) {
  if (values.empty()) return 0.0;
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  if (n % 2 == 1) return values[n / 2];
  return 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

EvalResult evaluate(const NetworkParams& params, const SequenceRecord& sequence,
                    const EvalThresholds& thresholds, int downscale) {
  if (downscale < 1) throw ConfigInvalid("downscale must be >= 1");
  if (sequence.frames.empty()) throw ConfigInvalid("cannot evaluate an empty sequence");

  EvalResult result;
  result.frames.reserve(sequence.frames.size());

  constexpr std::size_t kBatch = 32;
  int in_h = -1, in_w = -1;
  for (std::size_t lo = 0; lo < sequence.frames.size(); lo += kBatch) {
    const std::size_t hi = std::min(sequence.frames.size(), lo + kBatch);
    const int bsz = static_cast<int>(hi - lo);

    std::vector<Image> imgs;
    imgs.reserve(static_cast<std::size_t>(bsz));
    for (std::size_t i = lo; i < hi; ++i) {
      Image img = read_ppm(sequence.frame_path(i));
      if (downscale > 1) img = downscale_box(img, downscale);
      if (in_h < 0) {
        in_h = img.height;
        in_w = img.width;
      } else if (img.height != in_h || img.width != in_w) {
        throw ShapeMismatch("sequence frames must share one resolution");
      }
      imgs.push_back(std::move(img));
    }

    const long long hw = static_cast<long long>(in_h) * in_w;
    Tensor<float> batch = Tensor<float>::zeros({bsz, 3, in_h, in_w});
    for (int b = 0; b < bsz; ++b) {
      fill_image(imgs[static_cast<std::size_t>(b)],
                 batch.data() + static_cast<long long>(b) * 3 * hw);
    }

    Tensor<float> t_hat, r_hat;
    forward(params, batch, false, 0, t_hat, r_hat);

    for (int b = 0; b < bsz; ++b) {
      const FrameRef& f = sequence.frames[lo + static_cast<std::size_t>(b)];
      const Vec3 t{static_cast<double>(t_hat.v[static_cast<std::size_t>(b) * 3 + 0]),
                   static_cast<double>(t_hat.v[static_cast<std::size_t>(b) * 3 + 1]),
                   static_cast<double>(t_hat.v[static_cast<std::size_t>(b) * 3 + 2])};
      const UnitQuaternion q = decode_rotation(r_hat.data() + static_cast<std::size_t>(b) * 6);
      FrameEval fe;
      fe.t_s = f.t_s;
      fe.phase = f.phase;
      fe.dt_m = position_error(t, f.pose.translation);
      fe.dq_deg = attitude_error_deg(q, f.pose.rotation);
      fe.dtr_frac = range_normalized_error(t, f.pose.translation);
      result.frames.push_back(fe);
    }
  }

  std::vector<double> dts, dqs, dtrs;
  long long pos_ok = 0, att_ok = 0;
  for (const FrameEval& f : result.frames) {
    dts.push_back(f.dt_m);
    dqs.push_back(f.dq_deg);
    dtrs.push_back(f.dtr_frac);
    pos_ok += f.dtr_frac <= thresholds.pos_frac;
    att_ok += f.dq_deg <= thresholds.att_deg;
  }
  const double n = static_cast<double>(result.frames.size());
  EvalSummary& s = result.summary;
  s.mean_dt_m = std::accumulate(dts.begin(), dts.end(), 0.0) / n;
  s.mean_dq_deg = std::accumulate(dqs.begin(), dqs.end(), 0.0) / n;
  s.mean_dtr_frac = std::accumulate(dtrs.begin(), dtrs.end(), 0.0) / n;
  s.median_dt_m = median(dts);
  s.median_dq_deg = median(dqs);
  s.median_dtr_frac = median(dtrs);
  s.pos_compliance = static_cast<double>(pos_ok) / n;
  s.att_compliance = static_cast<double>(att_ok) / n;
  return result;
}

void write_eval_csv(const std::string& path, const EvalResult& result) {
  std::string out = "t_s,dt_m,dq_deg,dtr_frac,phase\n";
  for (const FrameEval& f : result.frames) {
    out += format_double(f.t_s) + "," + format_double(f.dt_m) + "," + format_double(f.dq_deg) +
           "," + format_double(f.dtr_frac) + "," + std::to_string(f.phase) + "\n";
  }
  internal::write_file_atomic(path, out);
}

// --- checkpoints ------------------------------------------------------------

namespace {

constexpr char kMagic[4] = {'D', 'K', 'Z', '1'};

void append_le_u32(std::string& out, std::uint32_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
  out.push_back(static_cast<char>((v >> 16) & 0xff));
  out.push_back(static_cast<char>((v >> 24) & 0xff));
}

std::uint32_t read_le_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

}  // namespace

void save_checkpoint(const std::string& path, const NetworkParams& params) {
  ordered_json header;
  header["config"] = {{"blocks", params.config.blocks},
                      {"base_channels", params.config.base_channels},
                      {"in_channels", params.config.in_channels},
                      {"leaky_slope", params.config.leaky_slope},
                      {"dropout_p", params.config.dropout_p}};
  ordered_json tensors = ordered_json::array();
  params.for_each([&](const std::string& name, const Tensor<float>& t) {
    tensors.push_back(ordered_json{{"name", name}, {"shape", t.shape}});
  });
  header["tensors"] = tensors;
  const std::string header_str = header.dump();

  std::string out(kMagic, 4);
  append_le_u32(out, static_cast<std::uint32_t>(header_str.size()));
  out += header_str;
  params.for_each([&](const std::string&, const Tensor<float>& t) {
    for (const float x : t.v) {
      std::uint32_t bits;
      std::memcpy(&bits, &x, 4);
      append_le_u32(out, bits);
    }
  });
  internal::write_file_atomic(path, out);
}

NetworkParams load_checkpoint(const std::string& path) {
  const std::string content = internal::read_file(path);
  if (content.size() < 8 || std::memcmp(content.data(), kMagic, 4) != 0) {
    throw MalformedFile(path + ": not a checkpoint file");
  }
  const auto* bytes = reinterpret_cast<const unsigned char*>(content.data());
  const std::uint32_t header_len = read_le_u32(bytes + 4);
  if (content.size() < 8 + static_cast<std::size_t>(header_len)) {
    throw MalformedFile(path + ": truncated checkpoint header");
  }

  ordered_json header;
  try {
    header = ordered_json::parse(content.substr(8, header_len));
  } catch (const nlohmann::json::exception& e) {
    throw MalformedFile(path + ": bad checkpoint header: " + std::string(e.what()));
  }

  NetworkConfig cfg;
  try {
    const auto& c = header.at("config");
    cfg.blocks = c.at("blocks").get<int>();
    cfg.base_channels = c.at("base_channels").get<int>();
    cfg.in_channels = c.at("in_channels").get<int>();
    cfg.leaky_slope = c.at("leaky_slope").get<double>();
    cfg.dropout_p = c.at("dropout_p").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw MalformedFile(path + ": bad checkpoint config: " + std::string(e.what()));
  }

  NetworkParams params;
  try {
    params = init_params<float>(cfg, 0);
  } catch (const ConfigInvalid& e) {
    throw MalformedFile(path + ": invalid checkpoint config: " + std::string(e.what()));
  }
  std::vector<std::pair<std::string, std::vector<int>>> expected;
  params.for_each([&](const std::string& name, const Tensor<float>& t) {
    expected.emplace_back(name, t.shape);
  });

  try {
    const auto& tensors = header.at("tensors");
    if (tensors.size() != expected.size()) {
      throw MalformedFile(path + ": checkpoint tensor count mismatch");
    }
    for (std::size_t i = 0; i < expected.size(); ++i) {
      if (tensors[i].at("name").get<std::string>() != expected[i].first ||
          tensors[i].at("shape").get<std::vector<int>>() != expected[i].second) {
        throw MalformedFile(path + ": checkpoint tensor layout mismatch at '" +
                            expected[i].first + "'");
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw MalformedFile(path + ": bad checkpoint tensors: " + std::string(e.what()));
  }

  std::size_t offset = 8 + header_len;
  std::size_t total = 0;
  params.for_each([&](const std::string&, Tensor<float>& t) { total += t.v.size(); });
  if (content.size() != offset + 4 * total) {
    throw MalformedFile(path + ": checkpoint data size mismatch");
  }
  params.for_each([&](const std::string&, Tensor<float>& t) {
    for (float& x : t.v) {
      const std::uint32_t bits = read_le_u32(bytes + offset);
      std::memcpy(&x, &bits, 4);
      offset += 4;
    }
  });
  return params;
}

// --- explicit instantiations ------------------------------------------------

template NetworkParamsT<float> init_params<float>(const NetworkConfig&, std::uint64_t);
template NetworkParamsT<double> init_params<double>(const NetworkConfig&, std::uint64_t);
template void forward<float>(const NetworkParamsT<float>&, const Tensor<float>&, bool,
                             std::uint64_t, Tensor<float>&, Tensor<float>&);
template void forward<double>(const NetworkParamsT<double>&, const Tensor<double>&, bool,
                              std::uint64_t, Tensor<double>&, Tensor<double>&);
template LossBreakdown loss_value<float>(const Tensor<float>&, const Tensor<float>&,
                                         const Tensor<float>&, const Tensor<float>&, float,
                                         float);
template LossBreakdown loss_value<double>(const Tensor<double>&, const Tensor<double>&,
                                          const Tensor<double>&, const Tensor<double>&, double,
                                          double);
template double compute_loss<float>(const NetworkParamsT<float>&, const Tensor<float>&,
                                    const Tensor<float>&, const Tensor<float>&, bool,
                                    std::uint64_t);
template double compute_loss<double>(const NetworkParamsT<double>&, const Tensor<double>&,
                                     const Tensor<double>&, const Tensor<double>&, bool,
                                     std::uint64_t);
template NetworkParamsT<float> compute_gradients<float>(const NetworkParamsT<float>&,
                                                        const Tensor<float>&,
                                                        const Tensor<float>&,
                                                        const Tensor<float>&, bool, std::uint64_t,
                                                        LossBreakdown*, Tensor<float>*,
                                                        Tensor<float>*);
template NetworkParamsT<double> compute_gradients<double>(const NetworkParamsT<double>&,
                                                          const Tensor<double>&,
                                                          const Tensor<double>&,
                                                          const Tensor<double>&, bool,
                                                          std::uint64_t, LossBreakdown*,
                                                          Tensor<double>*, Tensor<double>*);
template void adam_step<float>(NetworkParamsT<float>&, const NetworkParamsT<float>&,
                               AdamState<float>&, double);
template void adam_step<double>(NetworkParamsT<double>&, const NetworkParamsT<double>&,
                                AdamState<double>&, double);

}  // namespace dknav
