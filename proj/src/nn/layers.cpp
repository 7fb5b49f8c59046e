#include "ichseg/nn/layers.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>

#include "ichseg/kernels/kernels.hpp"
#include "ichseg/volume.hpp"

namespace ichseg::nn {

namespace {

Dim3 spatial_of(const Tensor& x) { return {x.d(), x.h(), x.w()}; }

float sigmoid(float z) { return 1.0f / (1.0f + std::exp(-z)); }

}  // namespace

// ---------------------------------------------------------------- Conv3d

Conv3d::Conv3d(const std::string& name, std::size_t in, std::size_t out, Dim3 kernel, Dim3 stride, Dim3 pad,
               bool bias, std::mt19937_64& rng)
    : weight(name + ".weight", {out, in, kernel.d, kernel.h, kernel.w}),
      in_(in),
      out_(out),
      k_(kernel),
      s_(stride),
      p_(pad),
      has_bias_(bias) {
  he_normal(weight, in * kernel.volume(), rng);
  if (bias) this->bias = Parameter(name + ".bias", {out});
}

Dim3 Conv3d::output_dims(const Tensor& x) const {
  auto one = [](std::size_t n, std::size_t k, std::size_t s, std::size_t p) -> std::size_t {
    if (n + 2 * p < k) throw Error("conv input smaller than kernel");
    return (n + 2 * p - k) / s + 1;
  };
  return {one(x.d(), k_.d, s_.d, p_.d), one(x.h(), k_.h, s_.h, p_.h), one(x.w(), k_.w, s_.w, p_.w)};
}

void Conv3d::im2col(const float* x, Dim3 in, Dim3 od, float* col) const {
  const std::size_t plane = od.volume();
  for (std::size_t c = 0; c < in_; ++c)
    for (std::size_t a = 0; a < k_.d; ++a)
      for (std::size_t b = 0; b < k_.h; ++b)
        for (std::size_t e = 0; e < k_.w; ++e) {
          const std::size_t row = ((c * k_.d + a) * k_.h + b) * k_.w + e;
          float* dst = col + row * plane;
          for (std::size_t zd = 0; zd < od.d; ++zd) {
            const long id = static_cast<long>(zd * s_.d + a) - static_cast<long>(p_.d);
            float* dz = dst + zd * od.h * od.w;
            if (id < 0 || id >= static_cast<long>(in.d)) {
              std::fill(dz, dz + od.h * od.w, 0.0f);
              continue;
            }
            for (std::size_t zh = 0; zh < od.h; ++zh) {
              const long ih = static_cast<long>(zh * s_.h + b) - static_cast<long>(p_.h);
              float* dr = dz + zh * od.w;
              if (ih < 0 || ih >= static_cast<long>(in.h)) {
                std::fill(dr, dr + od.w, 0.0f);
                continue;
              }
              const float* src = x + ((c * in.d + id) * in.h + ih) * in.w;
              for (std::size_t zw = 0; zw < od.w; ++zw) {
                const long iw = static_cast<long>(zw * s_.w + e) - static_cast<long>(p_.w);
                dr[zw] = (iw >= 0 && iw < static_cast<long>(in.w)) ? src[iw] : 0.0f;
              }
            }
          }
        }
}

void Conv3d::col2im(const float* col, Dim3 in, Dim3 od, float* dx) const {
  const std::size_t plane = od.volume();
  for (std::size_t c = 0; c < in_; ++c)
    for (std::size_t a = 0; a < k_.d; ++a)
      for (std::size_t b = 0; b < k_.h; ++b)
        for (std::size_t e = 0; e < k_.w; ++e) {
          const std::size_t row = ((c * k_.d + a) * k_.h + b) * k_.w + e;
          const float* srcrow = col + row * plane;
          for (std::size_t zd = 0; zd < od.d; ++zd) {
            const long id = static_cast<long>(zd * s_.d + a) - static_cast<long>(p_.d);
            if (id < 0 || id >= static_cast<long>(in.d)) continue;
            for (std::size_t zh = 0; zh < od.h; ++zh) {
              const long ih = static_cast<long>(zh * s_.h + b) - static_cast<long>(p_.h);
              if (ih < 0 || ih >= static_cast<long>(in.h)) continue;
              float* dst = dx + ((c * in.d + id) * in.h + ih) * in.w;
              const float* sr = srcrow + (zd * od.h + zh) * od.w;
              for (std::size_t zw = 0; zw < od.w; ++zw) {
                const long iw = static_cast<long>(zw * s_.w + e) - static_cast<long>(p_.w);
                if (iw >= 0 && iw < static_cast<long>(in.w)) dst[iw] += sr[zw];
              }
            }
          }
        }
}

Tensor Conv3d::forward(const Tensor& x) const {
  if (x.c() != in_) throw Error("conv channel mismatch: expected " + std::to_string(in_) + ", got " +
                                std::to_string(x.c()));
  const Dim3 od = output_dims(x);
  const Dim3 in = spatial_of(x);
  Tensor y(x.n(), out_, od.d, od.h, od.w);
  const std::size_t ck = in_ * k_.volume();
  const std::size_t plane = od.volume();
  const bool pointwise = k_.volume() == 1 && s_.volume() == 1 && p_.d + p_.h + p_.w == 0;
  std::vector<float> col(pointwise ? 0 : ck * plane);
  for (std::size_t n = 0; n < x.n(); ++n) {
    const float* src = x.sample(n);
    if (!pointwise) {
      im2col(src, in, od, col.data());
      src = col.data();
    }
    float* dst = y.sample(n);
    gemm(Trans::kNo, Trans::kNo, out_, plane, ck, weight.value.data(), src, dst, false);
    if (has_bias_)
      for (std::size_t o = 0; o < out_; ++o) {
        const float bv = bias.value[o];
        float* row = dst + o * plane;
        for (std::size_t i = 0; i < plane; ++i) row[i] += bv;
      }
  }
  return y;
}

Tensor Conv3d::backward(const Tensor& x, const Tensor& dy, bool need_dx) {
  const Dim3 od = output_dims(x);
  const Dim3 in = spatial_of(x);
  const std::size_t ck = in_ * k_.volume();
  const std::size_t plane = od.volume();
  const bool pointwise = k_.volume() == 1 && s_.volume() == 1 && p_.d + p_.h + p_.w == 0;
  Tensor dx;
  if (need_dx) dx = Tensor(x.n(), x.c(), x.d(), x.h(), x.w());
  std::vector<float> col(pointwise ? 0 : ck * plane);
  std::vector<float> dcol(pointwise ? 0 : ck * plane);
  for (std::size_t n = 0; n < x.n(); ++n) {
    const float* src = x.sample(n);
    if (!pointwise) {
      im2col(src, in, od, col.data());
      src = col.data();
    }
    const float* g = dy.sample(n);
    gemm(Trans::kNo, Trans::kYes, out_, ck, plane, g, src, weight.grad.data(), true);
    if (has_bias_)
      for (std::size_t o = 0; o < out_; ++o) {
        double s = 0.0;
        for (std::size_t i = 0; i < plane; ++i) s += g[o * plane + i];
        bias.grad[o] += static_cast<float>(s);
      }
    if (need_dx) {
      if (pointwise) {
        gemm(Trans::kYes, Trans::kNo, ck, plane, out_, weight.value.data(), g, dx.sample(n), false);
      } else {
        gemm(Trans::kYes, Trans::kNo, ck, plane, out_, weight.value.data(), g, dcol.data(), false);
        col2im(dcol.data(), in, od, dx.sample(n));
      }
    }
  }
  return dx;
}

void Conv3d::collect(ParamRefs& out) {
  out.push_back(&weight);
  if (has_bias_) out.push_back(&bias);
}

void Conv3d::collect(ConstParamRefs& out) const {
  out.push_back(&weight);
  if (has_bias_) out.push_back(&bias);
}

// ------------------------------------------------------- ConvTranspose3d

ConvTranspose3d::ConvTranspose3d(const std::string& name, std::size_t in, std::size_t out, Dim3 kernel,
                                 std::mt19937_64& rng)
    : weight(name + ".weight", {in, out, kernel.d, kernel.h, kernel.w}),
      bias(name + ".bias", {out}),
      in_(in),
      out_(out),
      k_(kernel) {
  he_normal(weight, in, rng);
}

Tensor ConvTranspose3d::forward(const Tensor& x) const {
  if (x.c() != in_) throw Error("transposed conv channel mismatch");
  const std::size_t kv = k_.volume();
  const std::size_t rows = out_ * kv;
  const std::size_t plane = x.spatial();
  Tensor y(x.n(), out_, x.d() * k_.d, x.h() * k_.h, x.w() * k_.w);
  std::vector<float> cols(rows * plane);
  for (std::size_t n = 0; n < x.n(); ++n) {
    gemm(Trans::kYes, Trans::kNo, rows, plane, in_, weight.value.data(), x.sample(n), cols.data(), false);
    float* dst = y.sample(n);
    for (std::size_t o = 0; o < out_; ++o)
      for (std::size_t a = 0; a < k_.d; ++a)
        for (std::size_t b = 0; b < k_.h; ++b)
          for (std::size_t e = 0; e < k_.w; ++e) {
            const float* src = cols.data() + (o * kv + (a * k_.h + b) * k_.w + e) * plane;
            const float bv = bias.value[o];
            for (std::size_t zd = 0; zd < x.d(); ++zd)
              for (std::size_t zh = 0; zh < x.h(); ++zh)
                for (std::size_t zw = 0; zw < x.w(); ++zw) {
                  const std::size_t od = zd * k_.d + a, oh = zh * k_.h + b, ow = zw * k_.w + e;
                  dst[((o * y.d() + od) * y.h() + oh) * y.w() + ow] = src[(zd * x.h() + zh) * x.w() + zw] + bv;
                }
          }
  }
  return y;
}

Tensor ConvTranspose3d::backward(const Tensor& x, const Tensor& dy, bool need_dx) {
  const std::size_t kv = k_.volume();
  const std::size_t rows = out_ * kv;
  const std::size_t plane = x.spatial();
  Tensor dx;
  if (need_dx) dx = Tensor(x.n(), x.c(), x.d(), x.h(), x.w());
  std::vector<float> cols(rows * plane);
  for (std::size_t n = 0; n < x.n(); ++n) {
    const float* g = dy.sample(n);
    for (std::size_t o = 0; o < out_; ++o) {
      double bsum = 0.0;
      for (std::size_t a = 0; a < k_.d; ++a)
        for (std::size_t b = 0; b < k_.h; ++b)
          for (std::size_t e = 0; e < k_.w; ++e) {
            float* dst = cols.data() + (o * kv + (a * k_.h + b) * k_.w + e) * plane;
            for (std::size_t zd = 0; zd < x.d(); ++zd)
              for (std::size_t zh = 0; zh < x.h(); ++zh)
                for (std::size_t zw = 0; zw < x.w(); ++zw) {
                  const std::size_t od = zd * k_.d + a, oh = zh * k_.h + b, ow = zw * k_.w + e;
                  const float v = g[((o * dy.d() + od) * dy.h() + oh) * dy.w() + ow];
                  dst[(zd * x.h() + zh) * x.w() + zw] = v;
                  bsum += v;
                }
          }
      bias.grad[o] += static_cast<float>(bsum);
    }
    gemm(Trans::kNo, Trans::kYes, in_, rows, plane, x.sample(n), cols.data(), weight.grad.data(), true);
    if (need_dx) gemm(Trans::kNo, Trans::kNo, in_, plane, rows, weight.value.data(), cols.data(), dx.sample(n), false);
  }
  return dx;
}

void ConvTranspose3d::collect(ParamRefs& out) {
  out.push_back(&weight);
  out.push_back(&bias);
}

void ConvTranspose3d::collect(ConstParamRefs& out) const {
  out.push_back(&weight);
  out.push_back(&bias);
}

// ------------------------------------------------------------- MaxPool3d

Tensor MaxPool3d::forward(const Tensor& x, std::vector<std::uint32_t>* argmax) const {
  const std::size_t od = x.d() / k_.d, oh = x.h() / k_.h, ow = x.w() / k_.w;
  if (od == 0 || oh == 0 || ow == 0) throw Error("pooling input smaller than kernel");
  Tensor y(x.n(), x.c(), od, oh, ow);
  if (argmax) argmax->assign(y.size(), 0);
  std::size_t out = 0;
  for (std::size_t nc = 0; nc < x.n() * x.c(); ++nc) {
    const std::size_t base = nc * x.spatial();
    for (std::size_t zd = 0; zd < od; ++zd)
      for (std::size_t zh = 0; zh < oh; ++zh)
        for (std::size_t zw = 0; zw < ow; ++zw, ++out) {
          float best = -std::numeric_limits<float>::infinity();
          std::size_t at = 0;
          for (std::size_t a = 0; a < k_.d; ++a)
            for (std::size_t b = 0; b < k_.h; ++b)
              for (std::size_t e = 0; e < k_.w; ++e) {
                const std::size_t idx =
                    base + ((zd * k_.d + a) * x.h() + zh * k_.h + b) * x.w() + zw * k_.w + e;
                if (x.data[idx] > best || (a + b + e) == 0) {
                  best = x.data[idx];
                  at = idx;
                }
              }
          y.data[out] = best;
          if (argmax) (*argmax)[out] = static_cast<std::uint32_t>(at);
        }
  }
  return y;
}

Tensor MaxPool3d::backward(const Tensor& x, const Tensor& dy, const std::vector<std::uint32_t>& argmax) const {
  Tensor dx(x.n(), x.c(), x.d(), x.h(), x.w());
  for (std::size_t i = 0; i < dy.size(); ++i) dx.data[argmax[i]] += dy.data[i];
  return dx;
}

// ---------------------------------------------------------------- Linear

Linear::Linear(const std::string& name, std::size_t in, std::size_t out, std::mt19937_64& rng)
    : weight(name + ".weight", {out, in}), bias(name + ".bias", {out}), in_(in), out_(out) {
  uniform_init(weight, 1.0f / std::sqrt(static_cast<float>(in)), rng);
}

Tensor Linear::forward(const Tensor& x) const {
  if (x.sample_size() != in_) throw Error("linear input size mismatch");
  Tensor y = Tensor::matrix(x.n(), out_);
  gemm(Trans::kNo, Trans::kYes, x.n(), out_, in_, x.data.data(), weight.value.data(), y.data.data(), false);
  for (std::size_t n = 0; n < x.n(); ++n)
    for (std::size_t o = 0; o < out_; ++o) y.data[n * out_ + o] += bias.value[o];
  return y;
}

Tensor Linear::backward(const Tensor& x, const Tensor& dy, bool need_dx) {
  gemm(Trans::kYes, Trans::kNo, out_, in_, x.n(), dy.data.data(), x.data.data(), weight.grad.data(), true);
  for (std::size_t n = 0; n < x.n(); ++n)
    for (std::size_t o = 0; o < out_; ++o) bias.grad[o] += dy.data[n * out_ + o];
  Tensor dx;
  if (need_dx) {
    dx = Tensor(x.n(), x.c(), x.d(), x.h(), x.w());
    gemm(Trans::kNo, Trans::kNo, x.n(), in_, out_, dy.data.data(), weight.value.data(), dx.data.data(), false);
  }
  return dx;
}

void Linear::collect(ParamRefs& out) {
  out.push_back(&weight);
  out.push_back(&bias);
}

void Linear::collect(ConstParamRefs& out) const {
  out.push_back(&weight);
  out.push_back(&bias);
}

// ------------------------------------------------------------------ Lstm

Lstm::Lstm(const std::string& name, std::size_t input, std::size_t hidden, std::mt19937_64& rng)
    : w_ih(name + ".w_ih", {4 * hidden, input}),
      w_hh(name + ".w_hh", {4 * hidden, hidden}),
      b(name + ".b", {4 * hidden}),
      input_(input),
      hidden_(hidden) {
  const float bound = 1.0f / std::sqrt(static_cast<float>(hidden));
  uniform_init(w_ih, bound, rng);
  uniform_init(w_hh, bound, rng);
  for (std::size_t j = hidden; j < 2 * hidden; ++j) b.value[j] = 1.0f;
}

Tensor Lstm::forward(const Tensor& x, Trace* trace) const {
  const std::size_t batch = x.n(), steps = x.c(), f = x.d() * x.h() * x.w();
  if (f != input_) throw Error("lstm input size mismatch");
  const std::size_t h = hidden_, g4 = 4 * h;
  Tensor y(batch, steps, h, 1, 1);
  std::vector<float> xt(batch * f), z(batch * g4);
  std::vector<float> hprev(batch * h, 0.0f), cprev(batch * h, 0.0f);
  if (trace) {
    trace->batch = batch;
    trace->steps = steps;
    trace->gates.assign(steps * batch * g4, 0.0f);
    trace->cells.assign((steps + 1) * batch * h, 0.0f);
    trace->hidden.assign((steps + 1) * batch * h, 0.0f);
  }
  for (std::size_t t = 0; t < steps; ++t) {
    for (std::size_t bi = 0; bi < batch; ++bi)
      std::memcpy(xt.data() + bi * f, x.data.data() + (bi * steps + t) * f, f * sizeof(float));
    gemm(Trans::kNo, Trans::kYes, batch, g4, f, xt.data(), w_ih.value.data(), z.data(), false);
    gemm(Trans::kNo, Trans::kYes, batch, g4, h, hprev.data(), w_hh.value.data(), z.data(), true);
    for (std::size_t bi = 0; bi < batch; ++bi) {
      float* zr = z.data() + bi * g4;
      for (std::size_t j = 0; j < h; ++j) {
        const float ig = sigmoid(zr[j] + b.value[j]);
        const float fg = sigmoid(zr[h + j] + b.value[h + j]);
        const float gg = std::tanh(zr[2 * h + j] + b.value[2 * h + j]);
        const float og = sigmoid(zr[3 * h + j] + b.value[3 * h + j]);
        const float c = fg * cprev[bi * h + j] + ig * gg;
        const float hv = og * std::tanh(c);
        zr[j] = ig;
        zr[h + j] = fg;
        zr[2 * h + j] = gg;
        zr[3 * h + j] = og;
        cprev[bi * h + j] = c;
        hprev[bi * h + j] = hv;
        y.data[(bi * steps + t) * h + j] = hv;
      }
    }
    if (trace) {
      std::copy(z.begin(), z.end(), trace->gates.begin() + t * batch * g4);
      std::copy(cprev.begin(), cprev.end(), trace->cells.begin() + (t + 1) * batch * h);
      std::copy(hprev.begin(), hprev.end(), trace->hidden.begin() + (t + 1) * batch * h);
    }
  }
  return y;
}

Tensor Lstm::backward(const Tensor& x, const Trace& trace, const Tensor& dy, bool need_dx) {
  const std::size_t batch = trace.batch, steps = trace.steps, f = input_, h = hidden_, g4 = 4 * h;
  Tensor dx;
  if (need_dx) dx = Tensor(x.n(), x.c(), x.d(), x.h(), x.w());
  std::vector<float> dh_next(batch * h, 0.0f), dc_next(batch * h, 0.0f);
  std::vector<float> dz(batch * g4), xt(batch * f), dxt(batch * f);
  for (std::size_t t = steps; t-- > 0;) {
    const float* gates = trace.gates.data() + t * batch * g4;
    const float* cprev = trace.cells.data() + t * batch * h;
    const float* ccur = trace.cells.data() + (t + 1) * batch * h;
    const float* hprev = trace.hidden.data() + t * batch * h;
    for (std::size_t bi = 0; bi < batch; ++bi) {
      const float* gr = gates + bi * g4;
      float* dzr = dz.data() + bi * g4;
      for (std::size_t j = 0; j < h; ++j) {
        const float ig = gr[j], fg = gr[h + j], gg = gr[2 * h + j], og = gr[3 * h + j];
        const float tc = std::tanh(ccur[bi * h + j]);
        const float dh = dy.data[(bi * steps + t) * h + j] + dh_next[bi * h + j];
        const float dout = dh * tc;
        const float dc = dh * og * (1.0f - tc * tc) + dc_next[bi * h + j];
        dzr[j] = dc * gg * ig * (1.0f - ig);
        dzr[h + j] = dc * cprev[bi * h + j] * fg * (1.0f - fg);
        dzr[2 * h + j] = dc * ig * (1.0f - gg * gg);
        dzr[3 * h + j] = dout * og * (1.0f - og);
        dc_next[bi * h + j] = dc * fg;
      }
    }
    for (std::size_t bi = 0; bi < batch; ++bi)
      std::memcpy(xt.data() + bi * f, x.data.data() + (bi * steps + t) * f, f * sizeof(float));
    gemm(Trans::kYes, Trans::kNo, g4, f, batch, dz.data(), xt.data(), w_ih.grad.data(), true);
    gemm(Trans::kYes, Trans::kNo, g4, h, batch, dz.data(), hprev, w_hh.grad.data(), true);
    for (std::size_t bi = 0; bi < batch; ++bi)
      for (std::size_t j = 0; j < g4; ++j) b.grad[j] += dz[bi * g4 + j];
    gemm(Trans::kNo, Trans::kNo, batch, h, g4, dz.data(), w_hh.value.data(), dh_next.data(), false);
    if (need_dx) {
      gemm(Trans::kNo, Trans::kNo, batch, f, g4, dz.data(), w_ih.value.data(), dxt.data(), false);
      for (std::size_t bi = 0; bi < batch; ++bi)
        std::memcpy(dx.data.data() + (bi * steps + t) * f, dxt.data() + bi * f, f * sizeof(float));
    }
  }
  return dx;
}

void Lstm::collect(ParamRefs& out) {
  out.push_back(&w_ih);
  out.push_back(&w_hh);
  out.push_back(&b);
}

void Lstm::collect(ConstParamRefs& out) const {
  out.push_back(&w_ih);
  out.push_back(&w_hh);
  out.push_back(&b);
}

Tensor reverse_time(const Tensor& x) {
  Tensor y = x;
  const std::size_t steps = x.c(), f = x.d() * x.h() * x.w();
  for (std::size_t bi = 0; bi < x.n(); ++bi)
    for (std::size_t t = 0; t < steps; ++t)
      std::memcpy(y.data.data() + (bi * steps + t) * f, x.data.data() + (bi * steps + steps - 1 - t) * f,
                  f * sizeof(float));
  return y;
}

// --------------------------------------------------------------- helpers

void relu_inplace(Tensor& x) { kernels::active().relu(x.data.data(), x.data.data(), x.size()); }

void relu_backward(const Tensor& y, Tensor& dy) { kernels::active().relu_backward(y.data.data(), dy.data.data(), dy.size()); }

Tensor global_avg_pool(const Tensor& x) {
  Tensor y = Tensor::matrix(x.n(), x.c());
  const std::size_t plane = x.spatial();
  for (std::size_t i = 0; i < x.n() * x.c(); ++i) {
    double s = 0.0;
    const float* p = x.data.data() + i * plane;
    for (std::size_t j = 0; j < plane; ++j) s += p[j];
    y.data[i] = static_cast<float>(s / static_cast<double>(plane));
  }
  return y;
}

Tensor global_avg_pool_backward(const Tensor& x, const Tensor& dy) {
  Tensor dx(x.n(), x.c(), x.d(), x.h(), x.w());
  const std::size_t plane = x.spatial();
  const float inv = 1.0f / static_cast<float>(plane);
  for (std::size_t i = 0; i < x.n() * x.c(); ++i)
    std::fill(dx.data.begin() + i * plane, dx.data.begin() + (i + 1) * plane, dy.data[i] * inv);
  return dx;
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
  if (a.n() != b.n() || a.d() != b.d() || a.h() != b.h() || a.w() != b.w()) throw Error("concat shape mismatch");
  Tensor y(a.n(), a.c() + b.c(), a.d(), a.h(), a.w());
  for (std::size_t n = 0; n < a.n(); ++n) {
    std::copy(a.sample(n), a.sample(n) + a.sample_size(), y.sample(n));
    std::copy(b.sample(n), b.sample(n) + b.sample_size(), y.sample(n) + a.sample_size());
  }
  return y;
}

void split_channels(const Tensor& g, std::size_t ca, Tensor& ga, Tensor& gb) {
  const std::size_t cb = g.c() - ca;
  ga = Tensor(g.n(), ca, g.d(), g.h(), g.w());
  gb = Tensor(g.n(), cb, g.d(), g.h(), g.w());
  for (std::size_t n = 0; n < g.n(); ++n) {
    std::copy(g.sample(n), g.sample(n) + ga.sample_size(), ga.sample(n));
    std::copy(g.sample(n) + ga.sample_size(), g.sample(n) + g.sample_size(), gb.sample(n));
  }
}

void add_inplace(Tensor& dst, const Tensor& src) {
  if (dst.size() != src.size()) throw Error("tensor size mismatch in add");
  kernels::active().axpy(1.0f, src.data.data(), dst.data.data(), dst.size());
}

}  // namespace ichseg::nn
