#include "fedgimp/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <unordered_map>

#include "fedgimp/error.hpp"
#include "fedgimp/kernels.hpp"

namespace fedgimp::ad {

namespace {

thread_local bool t_grad_enabled = true;

void require_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw Error(ErrorCode::kShapeError, std::string(op) + ": " + shape_string(a.shape()) + " vs " +
                                            shape_string(b.shape()));
  }
}

void require_rank(const Var& a, int rank, const char* op) {
  if (a.value().rank() != rank) {
    throw Error(ErrorCode::kShapeError, std::string(op) + ": expected rank " +
                                            std::to_string(rank) + ", got " +
                                            shape_string(a.shape()));
  }
}

template <typename F>
Tensor map_values(const Tensor& a, F f) {
  Tensor out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = f(a[i]);
  return out;
}

class GradModeGuard {
 public:
  explicit GradModeGuard(bool enabled) : previous_(t_grad_enabled) { t_grad_enabled = enabled; }
  ~GradModeGuard() { t_grad_enabled = previous_; }

 private:
  bool previous_;
};

}  // namespace

Var::Var(Tensor value, bool requires_grad) : node_(std::make_shared<Node>()) {
  node_->value = std::move(value);
  node_->requires_grad = requires_grad;
}

Var make_op(Tensor value, std::vector<Var> parents, BackwardFn backward, const char* op,
            bool first_order_only) {
  Var out(std::move(value));
  out.node_->op = op;
  const bool track =
      t_grad_enabled &&
      std::any_of(parents.begin(), parents.end(), [](const Var& p) { return p.requires_grad(); });
  if (track) {
    out.node_->requires_grad = true;
    out.node_->first_order_only = first_order_only;
    out.node_->parents = std::move(parents);
    out.node_->backward = std::move(backward);
  }
  return out;
}

bool grad_enabled() { return t_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }

std::vector<Var> grad(const Var& output, const std::vector<Var>& inputs, bool create_graph,
                      const Var& seed) {
  GradModeGuard mode(create_graph);

  // Reverse topological order by iterative post-order DFS.
  std::vector<Node*> order;
  std::unordered_map<Node*, bool> visited;
  if (output.requires_grad()) {
    std::vector<std::pair<Node*, std::size_t>> stack{{output.node(), 0}};
    visited[output.node()] = true;
    while (!stack.empty()) {
      auto& [node, next] = stack.back();
      if (next < node->parents.size()) {
        Node* p = node->parents[next++].node();
        if (p && p->requires_grad && !visited[p]) {
          visited[p] = true;
          stack.emplace_back(p, 0);
        }
      } else {
        order.push_back(node);
        stack.pop_back();
      }
    }
  }

  std::unordered_map<Node*, Var> grads;
  if (output.requires_grad()) {
    Var g = seed.defined() ? seed : Var(Tensor(output.shape(), 1.0));
    if (g.shape() != output.shape()) throw Error(ErrorCode::kShapeError, "grad seed shape");
    grads[output.node()] = g;
  }

  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* node = *it;
    auto found = grads.find(node);
    if (found == grads.end() || !node->backward) continue;
    if (create_graph && node->first_order_only) {
      throw std::logic_error(std::string("op '") + node->op +
                             "' does not support higher-order gradients");
    }
    std::vector<Var> parent_grads = node->backward(found->second);
    for (std::size_t i = 0; i < node->parents.size(); ++i) {
      const Var& parent = node->parents[i];
      if (!parent.requires_grad() || i >= parent_grads.size() || !parent_grads[i].defined()) continue;
      auto [slot, inserted] = grads.try_emplace(parent.node(), parent_grads[i]);
      if (!inserted) slot->second = add(slot->second, parent_grads[i]);
    }
  }

  std::vector<Var> result;
  result.reserve(inputs.size());
  for (const Var& in : inputs) {
    auto found = grads.find(in.node());
    result.push_back(found != grads.end() ? found->second : Var(Tensor(in.shape(), 0.0)));
  }
  return result;
}

// ---------------------------------------------------------------------------

Var add(const Var& a, const Var& b) {
  require_same_shape(a, b, "add");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.value()[i];
  return make_op(std::move(out), {a, b}, [](const Var& g) { return std::vector<Var>{g, g}; }, "add");
}

Var sub(const Var& a, const Var& b) {
  require_same_shape(a, b, "sub");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.value()[i];
  return make_op(std::move(out), {a, b},
                 [](const Var& g) { return std::vector<Var>{g, scale(g, -1.0)}; }, "sub");
}

Var mul(const Var& a, const Var& b) {
  require_same_shape(a, b, "mul");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
  return make_op(std::move(out), {a, b},
                 [a, b](const Var& g) { return std::vector<Var>{mul(g, b), mul(g, a)}; }, "mul");
}

Var scale(const Var& a, double s) {
  Tensor out = map_values(a.value(), [s](double v) { return v * s; });
  return make_op(std::move(out), {a}, [s](const Var& g) { return std::vector<Var>{scale(g, s)}; },
                 "scale");
}

Var mul_const(const Var& a, const Tensor& c) {
  if (a.shape() != c.shape()) throw Error(ErrorCode::kShapeError, "mul_const shape mismatch");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= c[i];
  return make_op(std::move(out), {a},
                 [c](const Var& g) { return std::vector<Var>{mul_const(g, c)}; }, "mul_const");
}

Var sum(const Var& a) {
  double s = 0.0;
  for (double v : a.value().values()) s += v;
  Shape shape = a.shape();
  return make_op(Tensor::scalar(s), {a},
                 [shape](const Var& g) { return std::vector<Var>{expand_scalar(g, shape)}; }, "sum");
}

Var mean(const Var& a) {
  return scale(sum(a), 1.0 / static_cast<double>(std::max<std::size_t>(a.value().size(), 1)));
}

Var expand_scalar(const Var& a, const Shape& shape) {
  if (a.value().size() != 1) throw Error(ErrorCode::kShapeError, "expand_scalar needs one value");
  return make_op(Tensor(shape, a.value()[0]), {a},
                 [](const Var& g) { return std::vector<Var>{sum(g)}; }, "expand_scalar");
}

Var reshape(const Var& a, const Shape& shape) {
  Shape original = a.shape();
  return make_op(a.value().reshaped(shape), {a},
                 [original](const Var& g) { return std::vector<Var>{reshape(g, original)}; },
                 "reshape");
}

Var leaky_relu(const Var& a, double slope) {
  Tensor slopes = map_values(a.value(), [slope](double v) { return v > 0.0 ? 1.0 : slope; });
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= slopes[i];
  return make_op(std::move(out), {a},
                 [slopes](const Var& g) { return std::vector<Var>{mul_const(g, slopes)}; },
                 "leaky_relu");
}

Var softplus(const Var& a) {
  Tensor out = map_values(a.value(), [](double v) {
    return v > 0.0 ? v + std::log1p(std::exp(-v)) : std::log1p(std::exp(v));
  });
  Tensor sig = map_values(a.value(), [](double v) {
    return v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
  });
  return make_op(std::move(out), {a},
                 [sig](const Var& g) { return std::vector<Var>{mul_const(g, sig)}; }, "softplus",
                 /*first_order_only=*/true);
}

Var matmul(const Var& a, const Var& b, bool trans_a, bool trans_b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const int m = trans_a ? a.shape()[1] : a.shape()[0];
  const int k = trans_a ? a.shape()[0] : a.shape()[1];
  const int kb = trans_b ? b.shape()[1] : b.shape()[0];
  const int n = trans_b ? b.shape()[0] : b.shape()[1];
  if (k != kb) {
    throw Error(ErrorCode::kShapeError,
                "matmul inner dimension " + shape_string(a.shape()) + " x " + shape_string(b.shape()));
  }
  Tensor out({m, n});
  kernels::matmul(m, n, k, trans_a, trans_b, a.value().values(), b.value().values(), out.values());
  return make_op(
      std::move(out), {a, b},
      [a, b, trans_a, trans_b](const Var& g) {
        if (!trans_a && !trans_b) return std::vector<Var>{matmul(g, b, false, true), matmul(a, g, true, false)};
        if (!trans_a && trans_b) return std::vector<Var>{matmul(g, b, false, false), matmul(g, a, true, false)};
        if (trans_a && !trans_b) return std::vector<Var>{matmul(b, g, false, true), matmul(a, g, false, false)};
        return std::vector<Var>{matmul(b, g, true, true), matmul(g, a, true, true)};
      },
      "matmul");
}

Var channel_expand(const Var& b, const Shape& shape) {
  require_rank(b, 1, "channel_expand");
  if (shape.size() < 2 || shape[1] != b.shape()[0]) {
    throw Error(ErrorCode::kShapeError, "channel_expand channel mismatch");
  }
  const int outer = shape[0], channels = shape[1];
  const std::size_t inner = shape_size(shape) / (std::size_t(outer) * channels);
  Tensor out(shape);
  for (int n = 0; n < outer; ++n)
    for (int c = 0; c < channels; ++c)
      std::fill_n(out.data() + (std::size_t(n) * channels + c) * inner, inner, b.value()[c]);
  return make_op(std::move(out), {b},
                 [](const Var& g) { return std::vector<Var>{channel_reduce(g)}; }, "channel_expand");
}

Var channel_reduce(const Var& g) {
  const Shape& shape = g.shape();
  if (shape.size() < 2) throw Error(ErrorCode::kShapeError, "channel_reduce needs rank >= 2");
  const int outer = shape[0], channels = shape[1];
  const std::size_t inner = shape_size(shape) / (std::size_t(outer) * channels);
  Tensor out({channels});
  for (int c = 0; c < channels; ++c) {
    double acc = 0.0;
    for (int n = 0; n < outer; ++n) {
      const double* p = g.value().data() + (std::size_t(n) * channels + c) * inner;
      for (std::size_t i = 0; i < inner; ++i) acc += p[i];
    }
    out[c] = acc;
  }
  return make_op(std::move(out), {g},
                 [shape](const Var& h) { return std::vector<Var>{channel_expand(h, shape)}; },
                 "channel_reduce");
}

Var add_channel_bias(const Var& x, const Var& bias) { return add(x, channel_expand(bias, x.shape())); }

Var sample_channel_expand(const Var& a, const Shape& shape) {
  require_rank(a, 2, "sample_channel_expand");
  if (shape.size() < 2 || shape[0] != a.shape()[0] || shape[1] != a.shape()[1]) {
    throw Error(ErrorCode::kShapeError, "sample_channel_expand mismatch");
  }
  const std::size_t rows = std::size_t(shape[0]) * shape[1];
  const std::size_t inner = shape_size(shape) / rows;
  Tensor out(shape);
  for (std::size_t r = 0; r < rows; ++r) std::fill_n(out.data() + r * inner, inner, a.value()[r]);
  return make_op(std::move(out), {a},
                 [](const Var& g) { return std::vector<Var>{sample_channel_reduce(g)}; },
                 "sample_channel_expand");
}

Var sample_channel_reduce(const Var& g) {
  const Shape& shape = g.shape();
  if (shape.size() < 2) throw Error(ErrorCode::kShapeError, "sample_channel_reduce rank");
  const std::size_t rows = std::size_t(shape[0]) * shape[1];
  const std::size_t inner = shape_size(shape) / rows;
  Tensor out({shape[0], shape[1]});
  for (std::size_t r = 0; r < rows; ++r) {
    double acc = 0.0;
    const double* p = g.value().data() + r * inner;
    for (std::size_t i = 0; i < inner; ++i) acc += p[i];
    out[r] = acc;
  }
  return make_op(std::move(out), {g},
                 [shape](const Var& h) { return std::vector<Var>{sample_channel_expand(h, shape)}; },
                 "sample_channel_reduce");
}

Var repeat_batch(const Var& a, int batch) {
  if (a.value().rank() < 1 || a.shape()[0] != 1) {
    throw Error(ErrorCode::kShapeError, "repeat_batch expects leading dimension 1");
  }
  Shape shape = a.shape();
  shape[0] = batch;
  Tensor out(shape);
  const std::size_t inner = a.value().size();
  for (int n = 0; n < batch; ++n) std::copy_n(a.value().data(), inner, out.data() + n * inner);
  return make_op(std::move(out), {a},
                 [](const Var& g) { return std::vector<Var>{batch_reduce(g)}; }, "repeat_batch");
}

Var batch_reduce(const Var& g) {
  Shape shape = g.shape();
  const int batch = shape[0];
  shape[0] = 1;
  const std::size_t inner = shape_size(shape);
  Tensor out(shape);
  for (int n = 0; n < batch; ++n)
    for (std::size_t i = 0; i < inner; ++i) out[i] += g.value()[n * inner + i];
  return make_op(std::move(out), {g},
                 [batch](const Var& h) { return std::vector<Var>{repeat_batch(h, batch)}; },
                 "batch_reduce");
}

namespace {

kernels::ConvDims conv_dims(const Shape& x, const Shape& w) {
  kernels::ConvDims d;
  d.batch = x[0];
  d.in_channels = x[1];
  d.height = x[2];
  d.width = x[3];
  d.out_channels = w[0];
  d.kernel = w[2];
  return d;
}

}  // namespace

Var conv2d(const Var& x, const Var& w) {
  require_rank(x, 4, "conv2d");
  require_rank(w, 4, "conv2d");
  if (w.shape()[1] != x.shape()[1] || w.shape()[2] != w.shape()[3] || w.shape()[2] % 2 == 0) {
    throw Error(ErrorCode::kShapeError,
                "conv2d input " + shape_string(x.shape()) + " vs kernel " + shape_string(w.shape()));
  }
  const auto d = conv_dims(x.shape(), w.shape());
  Tensor out({d.batch, d.out_channels, d.height, d.width});
  kernels::conv2d(d, x.value().values(), w.value().values(), out.values());
  const int in_channels = d.in_channels, kernel = d.kernel;
  return make_op(
      std::move(out), {x, w},
      [x, w, in_channels, kernel](const Var& g) {
        return std::vector<Var>{conv2d_input_grad(g, w, in_channels), conv2d_weight_grad(x, g, kernel)};
      },
      "conv2d");
}

Var conv2d_input_grad(const Var& g, const Var& w, int in_channels) {
  require_rank(g, 4, "conv2d_input_grad");
  if (w.shape()[0] != g.shape()[1] || w.shape()[1] != in_channels) {
    throw Error(ErrorCode::kShapeError, "conv2d_input_grad channel mismatch");
  }
  kernels::ConvDims d;
  d.batch = g.shape()[0];
  d.out_channels = g.shape()[1];
  d.height = g.shape()[2];
  d.width = g.shape()[3];
  d.in_channels = in_channels;
  d.kernel = w.shape()[2];
  Tensor out({d.batch, in_channels, d.height, d.width});
  kernels::conv2d_input_grad(d, g.value().values(), w.value().values(), out.values());
  const int kernel = d.kernel;
  return make_op(
      std::move(out), {g, w},
      [g, w, kernel](const Var& h) {
        return std::vector<Var>{conv2d(h, w), conv2d_weight_grad(h, g, kernel)};
      },
      "conv2d_input_grad");
}

Var conv2d_weight_grad(const Var& x, const Var& g, int kernel) {
  require_rank(x, 4, "conv2d_weight_grad");
  require_rank(g, 4, "conv2d_weight_grad");
  kernels::ConvDims d;
  d.batch = x.shape()[0];
  d.in_channels = x.shape()[1];
  d.height = x.shape()[2];
  d.width = x.shape()[3];
  d.out_channels = g.shape()[1];
  d.kernel = kernel;
  if (g.shape()[0] != d.batch || g.shape()[2] != d.height || g.shape()[3] != d.width) {
    throw Error(ErrorCode::kShapeError, "conv2d_weight_grad shape mismatch");
  }
  Tensor out({d.out_channels, d.in_channels, kernel, kernel});
  kernels::conv2d_weight_grad(d, x.value().values(), g.value().values(), out.values());
  const int in_channels = d.in_channels;
  return make_op(
      std::move(out), {x, g},
      [x, g, in_channels](const Var& h) {
        return std::vector<Var>{conv2d_input_grad(g, h, in_channels), conv2d(x, h)};
      },
      "conv2d_weight_grad");
}

namespace {

int planes_of(const Shape& s) { return static_cast<int>(shape_size(s) / (std::size_t(s[s.size() - 2]) * s.back())); }

}  // namespace

Var upsample2x(const Var& x) {
  if (x.value().rank() < 2) throw Error(ErrorCode::kShapeError, "upsample2x rank");
  Shape s = x.shape();
  const int h = s[s.size() - 2], w = s.back();
  Shape o = s;
  o[o.size() - 2] = 2 * h;
  o.back() = 2 * w;
  Tensor out(o);
  kernels::upsample2x(planes_of(s), h, w, x.value().values(), out.values());
  return make_op(std::move(out), {x},
                 [](const Var& g) { return std::vector<Var>{upsample2x_adjoint(g)}; }, "upsample2x");
}

Var upsample2x_adjoint(const Var& g) {
  Shape s = g.shape();
  const int h = s[s.size() - 2] / 2, w = s.back() / 2;
  Shape o = s;
  o[o.size() - 2] = h;
  o.back() = w;
  Tensor out(o);
  kernels::upsample2x_adjoint(planes_of(o), h, w, g.value().values(), out.values());
  return make_op(std::move(out), {g},
                 [](const Var& h2) { return std::vector<Var>{upsample2x(h2)}; }, "upsample2x_adjoint");
}

Var downsample2x(const Var& x) {
  Shape s = x.shape();
  if (s.size() < 2 || s[s.size() - 2] % 2 || s.back() % 2) {
    throw Error(ErrorCode::kShapeError, "downsample2x needs even spatial size");
  }
  const int h = s[s.size() - 2] / 2, w = s.back() / 2;
  Shape o = s;
  o[o.size() - 2] = h;
  o.back() = w;
  Tensor out(o);
  kernels::downsample2x(planes_of(o), h, w, x.value().values(), out.values());
  return make_op(std::move(out), {x},
                 [](const Var& g) { return std::vector<Var>{downsample2x_adjoint(g)}; },
                 "downsample2x");
}

Var downsample2x_adjoint(const Var& g) {
  Shape s = g.shape();
  const int h = s[s.size() - 2], w = s.back();
  Shape o = s;
  o[o.size() - 2] = 2 * h;
  o.back() = 2 * w;
  Tensor out(o);
  kernels::downsample2x_adjoint(planes_of(s), h, w, g.value().values(), out.values());
  return make_op(std::move(out), {g},
                 [](const Var& h2) { return std::vector<Var>{downsample2x(h2)}; },
                 "downsample2x_adjoint");
}

namespace {

// Copies the centred (h,w) window of src (H,W) into dst, or the reverse.
void crop_copy(const Tensor& src, Tensor& dst, bool to_small) {
  const Shape& big = to_small ? src.shape() : dst.shape();
  const Shape& small = to_small ? dst.shape() : src.shape();
  const int H = big[big.size() - 2], W = big.back();
  const int h = small[small.size() - 2], w = small.back();
  const int r0 = (H - h) / 2, c0 = (W - w) / 2;
  const int planes = planes_of(small);
  for (int p = 0; p < planes; ++p)
    for (int r = 0; r < h; ++r)
      for (int c = 0; c < w; ++c) {
        const std::size_t bi = (std::size_t(p) * H + r + r0) * W + c + c0;
        const std::size_t si = (std::size_t(p) * h + r) * w + c;
        if (to_small) dst[si] = src[bi];
        else dst[bi] = src[si];
      }
}

}  // namespace

Var center_crop(const Var& x, int height, int width) {
  Shape s = x.shape();
  if (s.size() < 2 || height > s[s.size() - 2] || width > s.back() || height < 1 || width < 1) {
    throw Error(ErrorCode::kShapeError, "center_crop target larger than input");
  }
  const int H = s[s.size() - 2], W = s.back();
  Shape o = s;
  o[o.size() - 2] = height;
  o.back() = width;
  Tensor out(o);
  crop_copy(x.value(), out, true);
  return make_op(std::move(out), {x},
                 [H, W](const Var& g) { return std::vector<Var>{center_pad(g, H, W)}; }, "center_crop");
}

Var center_pad(const Var& x, int height, int width) {
  Shape s = x.shape();
  if (s.size() < 2 || height < s[s.size() - 2] || width < s.back()) {
    throw Error(ErrorCode::kShapeError, "center_pad target smaller than input");
  }
  const int h = s[s.size() - 2], w = s.back();
  Shape o = s;
  o[o.size() - 2] = height;
  o.back() = width;
  Tensor out(o);
  crop_copy(x.value(), out, false);
  return make_op(std::move(out), {x},
                 [h, w](const Var& g) { return std::vector<Var>{center_crop(g, h, w)}; }, "center_pad");
}

Var instance_norm(const Var& x, double eps) {
  require_rank(x, 4, "instance_norm");
  const Shape& s = x.shape();
  const std::size_t rows = std::size_t(s[0]) * s[1];
  const std::size_t inner = std::size_t(s[2]) * s[3];
  Tensor out(s);
  std::vector<double> inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* p = x.value().data() + r * inner;
    double mu = 0.0;
    for (std::size_t i = 0; i < inner; ++i) mu += p[i];
    mu /= double(inner);
    double var = 0.0;
    for (std::size_t i = 0; i < inner; ++i) var += (p[i] - mu) * (p[i] - mu);
    var /= double(inner);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    double* o = out.data() + r * inner;
    for (std::size_t i = 0; i < inner; ++i) o[i] = (p[i] - mu) * inv_std[r];
  }
  Tensor normalized = out;
  return make_op(
      std::move(out), {x},
      [normalized, inv_std, rows, inner](const Var& g) {
        Tensor dx(normalized.shape());
        for (std::size_t r = 0; r < rows; ++r) {
          const double* gp = g.value().data() + r * inner;
          const double* y = normalized.data() + r * inner;
          double gm = 0.0, gy = 0.0;
          for (std::size_t i = 0; i < inner; ++i) {
            gm += gp[i];
            gy += gp[i] * y[i];
          }
          gm /= double(inner);
          gy /= double(inner);
          double* d = dx.data() + r * inner;
          for (std::size_t i = 0; i < inner; ++i) d[i] = inv_std[r] * (gp[i] - gm - y[i] * gy);
        }
        return std::vector<Var>{Var(std::move(dx))};
      },
      "instance_norm", /*first_order_only=*/true);
}

}  // namespace fedgimp::ad
