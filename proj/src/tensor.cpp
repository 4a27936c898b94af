#include "hlfusion/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace hlfusion {

std::string shape_str(const Shape& s) {
  std::ostringstream out;
  out << "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out << ", ";
    out << s[i];
  }
  out << "]";
  return out.str();
}

namespace {

std::size_t shape_product(const Shape& s) {
  std::size_t n = 1;
  for (std::size_t d : s) {
    if (d == 0) throw std::invalid_argument("tensor dimensions must be positive, got " + shape_str(s));
    n *= d;
  }
  return n;
}

void require_same_shape(const char* op, const TensorPtr& a, const TensorPtr& b) {
  if (a->shape() != b->shape()) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " +
                                shape_str(a->shape()) + " vs " + shape_str(b->shape()));
  }
}

bool any_grad(std::initializer_list<const TensorPtr*> ts) {
  for (const TensorPtr* t : ts) {
    if ((*t)->requires_grad()) return true;
  }
  return false;
}

}  // namespace

Tensor::Tensor(Shape shape, bool requires_grad)
    : shape_(std::move(shape)),
      data_(shape_product(shape_), 0.0),
      grad_(requires_grad ? data_.size() : 0, 0.0),
      requires_grad_(requires_grad) {}

TensorPtr Tensor::zeros(Shape shape, bool requires_grad) {
  return std::make_shared<Tensor>(std::move(shape), requires_grad);
}

TensorPtr Tensor::full(Shape shape, double value, bool requires_grad) {
  auto t = std::make_shared<Tensor>(std::move(shape), requires_grad);
  std::fill(t->data_.begin(), t->data_.end(), value);
  return t;
}

TensorPtr Tensor::from_values(Shape shape, std::vector<double> values, bool requires_grad) {
  auto t = std::make_shared<Tensor>(std::move(shape), requires_grad);
  if (values.size() != t->size()) {
    throw std::invalid_argument("from_values: " + std::to_string(values.size()) +
                                " values for shape " + shape_str(t->shape()));
  }
  t->data_ = std::move(values);
  return t;
}

void Tensor::zero_grad() {
  std::fill(grad_.begin(), grad_.end(), 0.0);
}

bool Tensor::all_finite() const {
  for (double v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

// ---------------------------------------------------------------------------
// elementwise and shape ops
// ---------------------------------------------------------------------------

TensorPtr Tape::add(const TensorPtr& a, const TensorPtr& b) {
  require_same_shape("add", a, b);
  auto out = Tensor::zeros(a->shape(), any_grad({&a, &b}));
  const double* pa = a->data();
  const double* pb = b->data();
  double* po = out->data();
  const std::size_t n = out->size();
  for (std::size_t i = 0; i < n; ++i) po[i] = pa[i] + pb[i];
  if (out->requires_grad()) {
    record(out, [a, b, out, n] {
      const double* g = out->grad();
      if (a->requires_grad()) {
        double* ga = a->grad();
        for (std::size_t i = 0; i < n; ++i) ga[i] += g[i];
      }
      if (b->requires_grad()) {
        double* gb = b->grad();
        for (std::size_t i = 0; i < n; ++i) gb[i] += g[i];
      }
    });
  }
  return out;
}

TensorPtr Tape::scale(const TensorPtr& x, double factor) {
  auto out = Tensor::zeros(x->shape(), x->requires_grad());
  const double* px = x->data();
  double* po = out->data();
  const std::size_t n = out->size();
  for (std::size_t i = 0; i < n; ++i) po[i] = factor * px[i];
  if (out->requires_grad()) {
    record(out, [x, out, factor, n] {
      const double* g = out->grad();
      double* gx = x->grad();
      for (std::size_t i = 0; i < n; ++i) gx[i] += factor * g[i];
    });
  }
  return out;
}

TensorPtr Tape::relu(const TensorPtr& x) {
  auto out = Tensor::zeros(x->shape(), x->requires_grad());
  const double* px = x->data();
  double* po = out->data();
  const std::size_t n = out->size();
  for (std::size_t i = 0; i < n; ++i) po[i] = px[i] > 0.0 ? px[i] : 0.0;
  if (out->requires_grad()) {
    record(out, [x, out, n] {
      const double* g = out->grad();
      const double* px = x->data();
      double* gx = x->grad();
      for (std::size_t i = 0; i < n; ++i) {
        if (px[i] > 0.0) gx[i] += g[i];
      }
    });
  }
  return out;
}

TensorPtr Tape::tanh_act(const TensorPtr& x) {
  auto out = Tensor::zeros(x->shape(), x->requires_grad());
  const double* px = x->data();
  double* po = out->data();
  const std::size_t n = out->size();
  for (std::size_t i = 0; i < n; ++i) po[i] = std::tanh(px[i]);
  if (out->requires_grad()) {
    record(out, [x, out, n] {
      const double* g = out->grad();
      const double* po = out->data();
      double* gx = x->grad();
      for (std::size_t i = 0; i < n; ++i) gx[i] += g[i] * (1.0 - po[i] * po[i]);
    });
  }
  return out;
}

TensorPtr Tape::reshape(const TensorPtr& x, Shape new_shape) {
  if (shape_product(new_shape) != x->size()) {
    throw std::invalid_argument("reshape: cannot view " + shape_str(x->shape()) +
                                " as " + shape_str(new_shape));
  }
  auto out = Tensor::zeros(std::move(new_shape), x->requires_grad());
  out->values() = x->values();
  if (out->requires_grad()) {
    record(out, [x, out] {
      const double* g = out->grad();
      double* gx = x->grad();
      const std::size_t n = x->size();
      for (std::size_t i = 0; i < n; ++i) gx[i] += g[i];
    });
  }
  return out;
}

TensorPtr Tape::sum(const TensorPtr& x) {
  auto out = Tensor::zeros(Shape{1}, x->requires_grad());
  const double* px = x->data();
  double acc = 0.0;
  const std::size_t n = x->size();
  for (std::size_t i = 0; i < n; ++i) acc += px[i];
  out->data()[0] = acc;
  if (out->requires_grad()) {
    record(out, [x, out, n] {
      const double g = out->grad()[0];
      double* gx = x->grad();
      for (std::size_t i = 0; i < n; ++i) gx[i] += g;
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// linear algebra
// ---------------------------------------------------------------------------

TensorPtr Tape::matmul(const TensorPtr& a, const TensorPtr& b) {
  if (a->rank() != 2 || b->rank() != 2) {
    throw std::invalid_argument("matmul: expects rank-2 operands, got " +
                                shape_str(a->shape()) + " and " + shape_str(b->shape()));
  }
  const std::size_t m = a->dim(0), k = a->dim(1), n = b->dim(1);
  if (b->dim(0) != k) {
    throw std::invalid_argument("matmul: inner dimensions disagree, " +
                                shape_str(a->shape()) + " * " + shape_str(b->shape()));
  }
  auto out = Tensor::zeros({m, n}, any_grad({&a, &b}));
  const double* pa = a->data();
  const double* pb = b->data();
  double* po = out->data();
  for (std::size_t i = 0; i < m; ++i) {
    double* orow = po + i * n;
    for (std::size_t kk = 0; kk < k; ++kk) {
      const double av = pa[i * k + kk];
      const double* brow = pb + kk * n;
      for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  }
  if (out->requires_grad()) {
    record(out, [a, b, out, m, k, n] {
      const double* g = out->grad();
      if (a->requires_grad()) {
        // dA = G * B^T
        double* ga = a->grad();
        const double* pb = b->data();
        for (std::size_t i = 0; i < m; ++i) {
          const double* grow = g + i * n;
          for (std::size_t kk = 0; kk < k; ++kk) {
            const double* brow = pb + kk * n;
            double acc = 0.0;
            for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
            ga[i * k + kk] += acc;
          }
        }
      }
      if (b->requires_grad()) {
        // dB = A^T * G
        double* gb = b->grad();
        const double* pa = a->data();
        for (std::size_t i = 0; i < m; ++i) {
          const double* grow = g + i * n;
          for (std::size_t kk = 0; kk < k; ++kk) {
            const double av = pa[i * k + kk];
            double* gbrow = gb + kk * n;
            for (std::size_t j = 0; j < n; ++j) gbrow[j] += av * grow[j];
          }
        }
      }
    });
  }
  return out;
}

TensorPtr Tape::matmul_nt(const TensorPtr& a, const TensorPtr& b) {
  if (a->rank() != 2 || b->rank() != 2 || a->dim(1) != b->dim(1)) {
    throw std::invalid_argument("matmul_nt: width mismatch, " + shape_str(a->shape()) +
                                " vs " + shape_str(b->shape()));
  }
  const std::size_t m = a->dim(0), k = a->dim(1), n = b->dim(0);
  auto out = Tensor::zeros({m, n}, any_grad({&a, &b}));
  const double* pa = a->data();
  const double* pb = b->data();
  double* po = out->data();
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = pa + i * k;
    for (std::size_t j = 0; j < n; ++j) {
      const double* brow = pb + j * k;
      double acc = 0.0;
      for (std::size_t kk = 0; kk < k; ++kk) acc += arow[kk] * brow[kk];
      po[i * n + j] = acc;
    }
  }
  if (out->requires_grad()) {
    record(out, [a, b, out, m, k, n] {
      const double* g = out->grad();
      if (a->requires_grad()) {
        // dA = G * B
        double* ga = a->grad();
        const double* pb = b->data();
        for (std::size_t i = 0; i < m; ++i) {
          const double* grow = g + i * n;
          double* garow = ga + i * k;
          for (std::size_t j = 0; j < n; ++j) {
            const double gv = grow[j];
            const double* brow = pb + j * k;
            for (std::size_t kk = 0; kk < k; ++kk) garow[kk] += gv * brow[kk];
          }
        }
      }
      if (b->requires_grad()) {
        // dB = G^T * A
        double* gb = b->grad();
        const double* pa = a->data();
        for (std::size_t i = 0; i < m; ++i) {
          const double* grow = g + i * n;
          const double* arow = pa + i * k;
          for (std::size_t j = 0; j < n; ++j) {
            const double gv = grow[j];
            double* gbrow = gb + j * k;
            for (std::size_t kk = 0; kk < k; ++kk) gbrow[kk] += gv * arow[kk];
          }
        }
      }
    });
  }
  return out;
}

TensorPtr Tape::dense(const TensorPtr& x, const TensorPtr& w, const TensorPtr& b) {
  if (x->rank() != 1 || w->rank() != 2 || b->rank() != 1 ||
      w->dim(0) != x->dim(0) || w->dim(1) != b->dim(0)) {
    throw std::invalid_argument("dense: incompatible shapes x=" + shape_str(x->shape()) +
                                " w=" + shape_str(w->shape()) + " b=" + shape_str(b->shape()));
  }
  const std::size_t cin = x->dim(0), cout = b->dim(0);
  auto out = Tensor::zeros({cout}, any_grad({&x, &w, &b}));
  const double* px = x->data();
  const double* pw = w->data();
  double* po = out->data();
  for (std::size_t j = 0; j < cout; ++j) po[j] = b->data()[j];
  for (std::size_t i = 0; i < cin; ++i) {
    const double xv = px[i];
    const double* wrow = pw + i * cout;
    for (std::size_t j = 0; j < cout; ++j) po[j] += xv * wrow[j];
  }
  if (out->requires_grad()) {
    record(out, [x, w, b, out, cin, cout] {
      const double* g = out->grad();
      if (x->requires_grad()) {
        double* gx = x->grad();
        const double* pw = w->data();
        for (std::size_t i = 0; i < cin; ++i) {
          const double* wrow = pw + i * cout;
          double acc = 0.0;
          for (std::size_t j = 0; j < cout; ++j) acc += g[j] * wrow[j];
          gx[i] += acc;
        }
      }
      if (w->requires_grad()) {
        double* gw = w->grad();
        const double* px = x->data();
        for (std::size_t i = 0; i < cin; ++i) {
          const double xv = px[i];
          double* gwrow = gw + i * cout;
          for (std::size_t j = 0; j < cout; ++j) gwrow[j] += xv * g[j];
        }
      }
      if (b->requires_grad()) {
        double* gb = b->grad();
        for (std::size_t j = 0; j < cout; ++j) gb[j] += g[j];
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// neural-net ops
// ---------------------------------------------------------------------------

TensorPtr Tape::conv2d_same(const TensorPtr& x, const TensorPtr& w, const TensorPtr& b) {
  if (x->rank() != 3) {
    throw std::invalid_argument("conv2d_same: input must be [H,W,C], got " + shape_str(x->shape()));
  }
  if (w->rank() != 4 || w->dim(0) != 3 || w->dim(1) != 3) {
    throw std::invalid_argument("conv2d_same: kernel must be [3,3,Cin,Cout], got " + shape_str(w->shape()));
  }
  const std::size_t height = x->dim(0), width = x->dim(1), cin = x->dim(2);
  const std::size_t cout = w->dim(3);
  if (w->dim(2) != cin) {
    throw std::invalid_argument("conv2d_same: channel mismatch, input " + shape_str(x->shape()) +
                                " vs kernel " + shape_str(w->shape()));
  }
  if (b->rank() != 1 || b->dim(0) != cout) {
    throw std::invalid_argument("conv2d_same: bias must be [Cout], got " + shape_str(b->shape()));
  }
  auto out = Tensor::zeros({height, width, cout}, any_grad({&x, &w, &b}));
  const double* px = x->data();
  const double* pw = w->data();
  const double* pb = b->data();
  double* po = out->data();
  for (std::size_t r = 0; r < height; ++r) {
    for (std::size_t c = 0; c < width; ++c) {
      double* opix = po + (r * width + c) * cout;
      for (std::size_t o = 0; o < cout; ++o) opix[o] = pb[o];
      for (std::size_t kr = 0; kr < 3; ++kr) {
        const std::ptrdiff_t sr = static_cast<std::ptrdiff_t>(r + kr) - 1;
        if (sr < 0 || sr >= static_cast<std::ptrdiff_t>(height)) continue;
        for (std::size_t kc = 0; kc < 3; ++kc) {
          const std::ptrdiff_t sc = static_cast<std::ptrdiff_t>(c + kc) - 1;
          if (sc < 0 || sc >= static_cast<std::ptrdiff_t>(width)) continue;
          const double* xpix = px + (sr * width + sc) * cin;
          const double* wtap = pw + (kr * 3 + kc) * cin * cout;
          for (std::size_t ci = 0; ci < cin; ++ci) {
            const double xv = xpix[ci];
            const double* wrow = wtap + ci * cout;
            for (std::size_t o = 0; o < cout; ++o) opix[o] += xv * wrow[o];
          }
        }
      }
    }
  }
  if (out->requires_grad()) {
    record(out, [x, w, b, out, height, width, cin, cout] {
      const double* g = out->grad();
      const double* px = x->data();
      const double* pw = w->data();
      double* gx = x->requires_grad() ? x->grad() : nullptr;
      double* gw = w->requires_grad() ? w->grad() : nullptr;
      double* gb = b->requires_grad() ? b->grad() : nullptr;
      for (std::size_t r = 0; r < height; ++r) {
        for (std::size_t c = 0; c < width; ++c) {
          const double* gpix = g + (r * width + c) * cout;
          if (gb) {
            for (std::size_t o = 0; o < cout; ++o) gb[o] += gpix[o];
          }
          for (std::size_t kr = 0; kr < 3; ++kr) {
            const std::ptrdiff_t sr = static_cast<std::ptrdiff_t>(r + kr) - 1;
            if (sr < 0 || sr >= static_cast<std::ptrdiff_t>(height)) continue;
            for (std::size_t kc = 0; kc < 3; ++kc) {
              const std::ptrdiff_t sc = static_cast<std::ptrdiff_t>(c + kc) - 1;
              if (sc < 0 || sc >= static_cast<std::ptrdiff_t>(width)) continue;
              const std::size_t src = (sr * width + sc) * cin;
              const std::size_t tap = (kr * 3 + kc) * cin * cout;
              if (gx) {
                for (std::size_t ci = 0; ci < cin; ++ci) {
                  const double* wrow = pw + tap + ci * cout;
                  double acc = 0.0;
                  for (std::size_t o = 0; o < cout; ++o) acc += gpix[o] * wrow[o];
                  gx[src + ci] += acc;
                }
              }
              if (gw) {
                for (std::size_t ci = 0; ci < cin; ++ci) {
                  const double xv = px[src + ci];
                  double* gwrow = gw + tap + ci * cout;
                  for (std::size_t o = 0; o < cout; ++o) gwrow[o] += xv * gpix[o];
                }
              }
            }
          }
        }
      }
    });
  }
  return out;
}

TensorPtr Tape::layer_norm(const TensorPtr& x, const TensorPtr& gamma,
                           const TensorPtr& beta, double eps) {
  if (x->rank() == 0) throw std::invalid_argument("layer_norm: scalar input");
  const std::size_t channels = x->dim(x->rank() - 1);
  if (gamma->rank() != 1 || beta->rank() != 1 || gamma->dim(0) != channels ||
      beta->dim(0) != channels) {
    throw std::invalid_argument("layer_norm: gamma " + shape_str(gamma->shape()) + " / beta " +
                                shape_str(beta->shape()) + " do not match channel count " +
                                std::to_string(channels));
  }
  if (eps <= 0.0) throw std::invalid_argument("layer_norm: eps must be positive");
  const std::size_t positions = x->size() / channels;
  auto out = Tensor::zeros(x->shape(), any_grad({&x, &gamma, &beta}));
  // istd and xhat are reused by the backward rule
  auto istd = std::make_shared<std::vector<double>>(positions);
  auto xhat = std::make_shared<std::vector<double>>(x->size());
  const double* px = x->data();
  const double* pg = gamma->data();
  const double* pbt = beta->data();
  double* po = out->data();
  const double inv_c = 1.0 / static_cast<double>(channels);
  for (std::size_t p = 0; p < positions; ++p) {
    const double* xi = px + p * channels;
    double mean = 0.0;
    for (std::size_t ch = 0; ch < channels; ++ch) mean += xi[ch];
    mean *= inv_c;
    double var = 0.0;
    for (std::size_t ch = 0; ch < channels; ++ch) {
      const double d = xi[ch] - mean;
      var += d * d;
    }
    var *= inv_c;
    const double is = 1.0 / std::sqrt(var + eps);
    (*istd)[p] = is;
    double* oi = po + p * channels;
    double* xh = xhat->data() + p * channels;
    for (std::size_t ch = 0; ch < channels; ++ch) {
      xh[ch] = (xi[ch] - mean) * is;
      oi[ch] = pg[ch] * xh[ch] + pbt[ch];
    }
  }
  if (out->requires_grad()) {
    record(out, [x, gamma, beta, out, istd, xhat, positions, channels, inv_c] {
      const double* g = out->grad();
      const double* pg = gamma->data();
      const double* xh = xhat->data();
      double* ggamma = gamma->requires_grad() ? gamma->grad() : nullptr;
      double* gbeta = beta->requires_grad() ? beta->grad() : nullptr;
      double* gx = x->requires_grad() ? x->grad() : nullptr;
      for (std::size_t p = 0; p < positions; ++p) {
        const double* gi = g + p * channels;
        const double* xhi = xh + p * channels;
        if (ggamma) {
          for (std::size_t ch = 0; ch < channels; ++ch) ggamma[ch] += gi[ch] * xhi[ch];
        }
        if (gbeta) {
          for (std::size_t ch = 0; ch < channels; ++ch) gbeta[ch] += gi[ch];
        }
        if (gx) {
          // dx = istd * (dxhat - mean(dxhat) - xhat * mean(dxhat*xhat))
          double sum_dxh = 0.0, sum_dxh_xh = 0.0;
          for (std::size_t ch = 0; ch < channels; ++ch) {
            const double dxh = gi[ch] * pg[ch];
            sum_dxh += dxh;
            sum_dxh_xh += dxh * xhi[ch];
          }
          const double mean_dxh = sum_dxh * inv_c;
          const double mean_dxh_xh = sum_dxh_xh * inv_c;
          const double is = (*istd)[p];
          double* gxi = gx + p * channels;
          for (std::size_t ch = 0; ch < channels; ++ch) {
            const double dxh = gi[ch] * pg[ch];
            gxi[ch] += is * (dxh - mean_dxh - xhi[ch] * mean_dxh_xh);
          }
        }
      }
    });
  }
  return out;
}

TensorPtr Tape::softmax_rows(const TensorPtr& x) {
  if (x->rank() != 2) {
    throw std::invalid_argument("softmax_rows: expects [n,m], got " + shape_str(x->shape()));
  }
  const std::size_t rows = x->dim(0), cols = x->dim(1);
  auto out = Tensor::zeros(x->shape(), x->requires_grad());
  const double* px = x->data();
  double* po = out->data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xi = px + r * cols;
    double* oi = po + r * cols;
    double mx = xi[0];
    for (std::size_t j = 1; j < cols; ++j) mx = std::max(mx, xi[j]);
    double denom = 0.0;
    for (std::size_t j = 0; j < cols; ++j) {
      oi[j] = std::exp(xi[j] - mx);
      denom += oi[j];
    }
    const double inv = 1.0 / denom;
    for (std::size_t j = 0; j < cols; ++j) oi[j] *= inv;
  }
  if (out->requires_grad()) {
    record(out, [x, out, rows, cols] {
      const double* g = out->grad();
      const double* po = out->data();
      double* gx = x->grad();
      for (std::size_t r = 0; r < rows; ++r) {
        const double* gi = g + r * cols;
        const double* yi = po + r * cols;
        double dot = 0.0;
        for (std::size_t j = 0; j < cols; ++j) dot += gi[j] * yi[j];
        double* gxi = gx + r * cols;
        for (std::size_t j = 0; j < cols; ++j) gxi[j] += yi[j] * (gi[j] - dot);
      }
    });
  }
  return out;
}

TensorPtr Tape::global_avg_pool(const TensorPtr& x) {
  if (x->rank() != 3) {
    throw std::invalid_argument("global_avg_pool: expects [H,W,C], got " + shape_str(x->shape()));
  }
  const std::size_t positions = x->dim(0) * x->dim(1);
  const std::size_t channels = x->dim(2);
  auto out = Tensor::zeros({channels}, x->requires_grad());
  const double* px = x->data();
  double* po = out->data();
  for (std::size_t p = 0; p < positions; ++p) {
    const double* xi = px + p * channels;
    for (std::size_t ch = 0; ch < channels; ++ch) po[ch] += xi[ch];
  }
  const double inv_pos = 1.0 / static_cast<double>(positions);
  for (std::size_t ch = 0; ch < channels; ++ch) po[ch] *= inv_pos;
  if (out->requires_grad()) {
    record(out, [x, out, positions, channels, inv_pos] {
      const double* g = out->grad();
      double* gx = x->grad();
      for (std::size_t p = 0; p < positions; ++p) {
        double* gxi = gx + p * channels;
        for (std::size_t ch = 0; ch < channels; ++ch) gxi[ch] += g[ch] * inv_pos;
      }
    });
  }
  return out;
}

TensorPtr Tape::concat_channels(const std::vector<TensorPtr>& xs) {
  if (xs.empty()) throw std::invalid_argument("concat_channels: empty input list");
  const std::size_t height = xs[0]->dim(0), width = xs[0]->dim(1);
  std::size_t total = 0;
  bool needs_grad = false;
  for (const auto& x : xs) {
    if (x->rank() != 3 || x->dim(0) != height || x->dim(1) != width) {
      throw std::invalid_argument("concat_channels: spatial shape mismatch, expected " +
                                  std::to_string(height) + "x" + std::to_string(width) +
                                  ", got " + shape_str(x->shape()));
    }
    total += x->dim(2);
    needs_grad = needs_grad || x->requires_grad();
  }
  auto out = Tensor::zeros({height, width, total}, needs_grad);
  double* po = out->data();
  const std::size_t positions = height * width;
  std::size_t offset = 0;
  for (const auto& x : xs) {
    const std::size_t c = x->dim(2);
    const double* px = x->data();
    for (std::size_t p = 0; p < positions; ++p) {
      std::copy(px + p * c, px + (p + 1) * c, po + p * total + offset);
    }
    offset += c;
  }
  if (needs_grad) {
    record(out, [xs, out, positions, total] {
      const double* g = out->grad();
      std::size_t offset = 0;
      for (const auto& x : xs) {
        const std::size_t c = x->dim(2);
        if (x->requires_grad()) {
          double* gx = x->grad();
          for (std::size_t p = 0; p < positions; ++p) {
            const double* gi = g + p * total + offset;
            double* gxi = gx + p * c;
            for (std::size_t ch = 0; ch < c; ++ch) gxi[ch] += gi[ch];
          }
        }
        offset += c;
      }
    });
  }
  return out;
}

TensorPtr Tape::dropout(const TensorPtr& x, double rate, bool training, Rng& rng) {
  if (rate < 0.0 || rate >= 1.0) {
    throw std::invalid_argument("dropout: rate must lie in [0,1), got " + std::to_string(rate));
  }
  if (!training || rate == 0.0) return x;
  const std::size_t n = x->size();
  auto mask = std::make_shared<std::vector<double>>(n);
  const double inv_keep = 1.0 / (1.0 - rate);
  for (std::size_t i = 0; i < n; ++i) {
    (*mask)[i] = rng.uniform() < rate ? 0.0 : inv_keep;
  }
  auto out = Tensor::zeros(x->shape(), x->requires_grad());
  const double* px = x->data();
  double* po = out->data();
  for (std::size_t i = 0; i < n; ++i) po[i] = px[i] * (*mask)[i];
  if (out->requires_grad()) {
    record(out, [x, out, mask, n] {
      const double* g = out->grad();
      double* gx = x->grad();
      for (std::size_t i = 0; i < n; ++i) gx[i] += g[i] * (*mask)[i];
    });
  }
  return out;
}

namespace {
constexpr double kProbClamp = 1e-12;
}

TensorPtr Tape::cross_entropy(const TensorPtr& probs, std::size_t label) {
  if (label >= probs->size()) {
    throw std::invalid_argument("cross_entropy: label " + std::to_string(label) +
                                " out of range for " + std::to_string(probs->size()) + " classes");
  }
  const double p = probs->data()[label];
  auto out = Tensor::zeros(Shape{1}, probs->requires_grad());
  out->data()[0] = -std::log(std::max(p, kProbClamp));
  if (out->requires_grad()) {
    record(out, [probs, out, label] {
      const double p = probs->data()[label];
      if (p >= kProbClamp) {
        probs->grad()[label] += out->grad()[0] * (-1.0 / p);
      }
      // below the clamp the loss is flat in p
    });
  }
  return out;
}

void Tape::backward(const TensorPtr& loss, double seed) {
  if (loss->size() != 1) {
    throw std::invalid_argument("backward: loss must be scalar, got " + shape_str(loss->shape()));
  }
  if (!loss->requires_grad()) {
    throw std::invalid_argument("backward: loss was not produced from differentiable inputs");
  }
  for (const Node& node : nodes_) node.output->zero_grad();
  loss->grad()[0] += seed;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) it->backward();
}

}  // namespace hlfusion
