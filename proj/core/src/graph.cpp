#include "latentaug/graph.hpp"

#include <algorithm>
#include <cmath>

#include "latentaug/error.hpp"

namespace latentaug {
namespace {

// Shared convolution kernels. Output spatial size is (H + 2p - k) / s + 1;
// construction rejects shapes where the division is not exact, so the
// kernels can assume consistent geometry. The stride-1 inner loops are kept
// branch free over contiguous rows so the compiler vectorizes them.

struct ConvDims {
  int n, ci, h, w;      // input
  int co, kh, kw;       // filter
  int ho, wo;           // output
  int stride, pad;
};

ConvDims conv_dims(const Shape& x, const Shape& w, int stride, int pad) {
  ConvDims d;
  d.n = x[0];
  d.ci = x[1];
  d.h = x[2];
  d.w = x[3];
  d.co = w[0];
  d.kh = w[2];
  d.kw = w[3];
  d.stride = stride;
  d.pad = pad;
  d.ho = (d.h + 2 * pad - d.kh) / stride + 1;
  d.wo = (d.w + 2 * pad - d.kw) / stride + 1;
  return d;
}

// Range of output columns j with 0 <= j*s + v - p < w.
inline void col_range(int v, int p, int s, int w, int wo, int& j_lo, int& j_hi) {
  int lo = p - v;                      // need j*s >= lo
  j_lo = lo > 0 ? (lo + s - 1) / s : 0;
  int hi = w - 1 + p - v;              // need j*s <= hi
  j_hi = hi >= 0 ? std::min(wo, hi / s + 1) : 0;
}

void conv2d_forward(const Tensor& x, const Tensor& w, const ConvDims& d, Tensor& y) {
  y.fill(0.0);
  for (int n = 0; n < d.n; ++n) {
    for (int co = 0; co < d.co; ++co) {
      double* yp = y.data() + (static_cast<int64_t>(n) * d.co + co) * d.ho * d.wo;
      for (int ci = 0; ci < d.ci; ++ci) {
        const double* xp = x.data() + (static_cast<int64_t>(n) * d.ci + ci) * d.h * d.w;
        for (int u = 0; u < d.kh; ++u) {
          for (int v = 0; v < d.kw; ++v) {
            double wv = w.data()[((static_cast<int64_t>(co) * d.ci + ci) * d.kh + u) * d.kw + v];
            if (wv == 0.0) continue;
            int j_lo, j_hi;
            col_range(v, d.pad, d.stride, d.w, d.wo, j_lo, j_hi);
            for (int i = 0; i < d.ho; ++i) {
              int a = i * d.stride + u - d.pad;
              if (a < 0 || a >= d.h) continue;
              const double* xrow = xp + static_cast<int64_t>(a) * d.w;
              double* yrow = yp + static_cast<int64_t>(i) * d.wo;
              if (d.stride == 1) {
                const double* xr = xrow + v - d.pad;
                for (int j = j_lo; j < j_hi; ++j) yrow[j] += wv * xr[j];
              } else {
                for (int j = j_lo; j < j_hi; ++j) yrow[j] += wv * xrow[j * d.stride + v - d.pad];
              }
            }
          }
        }
      }
    }
  }
}

// dx += vjp of conv2d w.r.t. its input (dy scattered back through w).
void conv2d_input_grad(const Tensor& dy, const Tensor& w, const ConvDims& d, Tensor& dx) {
  for (int n = 0; n < d.n; ++n) {
    for (int co = 0; co < d.co; ++co) {
      const double* gp = dy.data() + (static_cast<int64_t>(n) * d.co + co) * d.ho * d.wo;
      for (int ci = 0; ci < d.ci; ++ci) {
        double* xp = dx.data() + (static_cast<int64_t>(n) * d.ci + ci) * d.h * d.w;
        for (int u = 0; u < d.kh; ++u) {
          for (int v = 0; v < d.kw; ++v) {
            double wv = w.data()[((static_cast<int64_t>(co) * d.ci + ci) * d.kh + u) * d.kw + v];
            if (wv == 0.0) continue;
            int j_lo, j_hi;
            col_range(v, d.pad, d.stride, d.w, d.wo, j_lo, j_hi);
            for (int i = 0; i < d.ho; ++i) {
              int a = i * d.stride + u - d.pad;
              if (a < 0 || a >= d.h) continue;
              const double* grow = gp + static_cast<int64_t>(i) * d.wo;
              double* xrow = xp + static_cast<int64_t>(a) * d.w;
              if (d.stride == 1) {
                double* xr = xrow + v - d.pad;
                for (int j = j_lo; j < j_hi; ++j) xr[j] += wv * grow[j];
              } else {
                for (int j = j_lo; j < j_hi; ++j) xrow[j * d.stride + v - d.pad] += wv * grow[j];
              }
            }
          }
        }
      }
    }
  }
}

// dw += correlation of dy with x.
void conv2d_weight_grad(const Tensor& dy, const Tensor& x, const ConvDims& d, Tensor& dw) {
  for (int co = 0; co < d.co; ++co) {
    for (int ci = 0; ci < d.ci; ++ci) {
      for (int u = 0; u < d.kh; ++u) {
        for (int v = 0; v < d.kw; ++v) {
          int j_lo, j_hi;
          col_range(v, d.pad, d.stride, d.w, d.wo, j_lo, j_hi);
          double acc = 0.0;
          for (int n = 0; n < d.n; ++n) {
            const double* gp = dy.data() + (static_cast<int64_t>(n) * d.co + co) * d.ho * d.wo;
            const double* xp = x.data() + (static_cast<int64_t>(n) * d.ci + ci) * d.h * d.w;
            for (int i = 0; i < d.ho; ++i) {
              int a = i * d.stride + u - d.pad;
              if (a < 0 || a >= d.h) continue;
              const double* grow = gp + static_cast<int64_t>(i) * d.wo;
              const double* xrow = xp + static_cast<int64_t>(a) * d.w;
              if (d.stride == 1) {
                const double* xr = xrow + v - d.pad;
                for (int j = j_lo; j < j_hi; ++j) acc += grow[j] * xr[j];
              } else {
                for (int j = j_lo; j < j_hi; ++j) acc += grow[j] * xrow[j * d.stride + v - d.pad];
              }
            }
          }
          dw.data()[((static_cast<int64_t>(co) * d.ci + ci) * d.kh + u) * d.kw + v] += acc;
        }
      }
    }
  }
}

inline double stable_softplus(double x) {
  return std::max(x, 0.0) + std::log1p(std::exp(-std::fabs(x)));
}

inline double stable_sigmoid(double x) {
  if (x >= 0.0) {
    double e = std::exp(-x);
    return 1.0 / (1.0 + e);
  }
  double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

const char* op_name(Op op) {
  switch (op) {
    case Op::kInput: return "input";
    case Op::kConstant: return "constant";
    case Op::kAdd: return "add";
    case Op::kSub: return "sub";
    case Op::kMul: return "mul";
    case Op::kScale: return "scale";
    case Op::kAddScalar: return "add_scalar";
    case Op::kMatmul: return "matmul";
    case Op::kTranspose: return "transpose";
    case Op::kAddRowVec: return "add_row_vec";
    case Op::kConv2d: return "conv2d";
    case Op::kConv2dVjpInput: return "conv2d_vjp_input";
    case Op::kBiasChan: return "bias_chan";
    case Op::kChannelAffine: return "channel_affine";
    case Op::kUpsample2x: return "upsample2x";
    case Op::kAvgPool2x: return "avg_pool2x";
    case Op::kLeakyRelu: return "leaky_relu";
    case Op::kLreluMask: return "lrelu_mask";
    case Op::kSoftplus: return "softplus";
    case Op::kSigmoid: return "sigmoid";
    case Op::kAbs: return "abs";
    case Op::kSquare: return "square";
    case Op::kSum: return "sum";
    case Op::kMean: return "mean";
    case Op::kSumSq: return "sum_sq";
    case Op::kReshape: return "reshape";
    case Op::kConcatChan: return "concat_chan";
    case Op::kSliceChan: return "slice_chan";
    case Op::kCrop2d: return "crop2d";
    case Op::kHFlip: return "hflip";
    case Op::kTranslate2d: return "translate2d";
  }
  return "?";
}

NodeId Graph::add_node(Node node) {
  node.value = Tensor(node.shape);
  nodes_.push_back(std::move(node));
  values_valid_ = false;
  grads_valid_ = false;
  return static_cast<NodeId>(nodes_.size() - 1);
}

NodeId Graph::check_id(NodeId id, const char* ctx) const {
  check(id >= 0 && static_cast<size_t>(id) < nodes_.size(), ctx, ": node id ", id, " out of range");
  return id;
}

Shape Graph::image_shape(NodeId id, const char* ctx) const {
  const Shape& s = node(id).shape;
  check(s.size() == 4, ctx, ": expected a [N,C,H,W] tensor, got ", shape_str(s));
  return s;
}

NodeId Graph::input(const std::string& name, Shape shape, bool differentiable) {
  check(!name.empty(), "input: name must be non-empty");
  check(!inputs_by_name_.count(name), "input: duplicate input name '", name, "'");
  Node n;
  n.op = Op::kInput;
  n.shape = std::move(shape);
  n.name = name;
  n.differentiable = differentiable;
  NodeId id = add_node(std::move(n));
  inputs_by_name_[name] = id;
  return id;
}

NodeId Graph::constant(Tensor value, const std::string& name) {
  Node n;
  n.op = Op::kConstant;
  n.shape = value.shape();
  n.name = name;
  NodeId id = add_node(std::move(n));
  nodes_[static_cast<size_t>(id)].value = std::move(value);
  nodes_[static_cast<size_t>(id)].bound = true;
  return id;
}

NodeId Graph::add(NodeId a, NodeId b) {
  check_id(a, "add");
  check_id(b, "add");
  check(node(a).shape == node(b).shape, "add: shape mismatch ", shape_str(node(a).shape), " vs ",
        shape_str(node(b).shape));
  Node n;
  n.op = Op::kAdd;
  n.shape = node(a).shape;
  n.parents = {a, b};
  return add_node(std::move(n));
}

NodeId Graph::sub(NodeId a, NodeId b) {
  check_id(a, "sub");
  check_id(b, "sub");
  check(node(a).shape == node(b).shape, "sub: shape mismatch ", shape_str(node(a).shape), " vs ",
        shape_str(node(b).shape));
  Node n;
  n.op = Op::kSub;
  n.shape = node(a).shape;
  n.parents = {a, b};
  return add_node(std::move(n));
}

NodeId Graph::mul(NodeId a, NodeId b) {
  check_id(a, "mul");
  check_id(b, "mul");
  check(node(a).shape == node(b).shape, "mul: shape mismatch ", shape_str(node(a).shape), " vs ",
        shape_str(node(b).shape));
  Node n;
  n.op = Op::kMul;
  n.shape = node(a).shape;
  n.parents = {a, b};
  return add_node(std::move(n));
}

NodeId Graph::scale(NodeId x, double factor) {
  check_id(x, "scale");
  Node n;
  n.op = Op::kScale;
  n.shape = node(x).shape;
  n.parents = {x};
  n.alpha = factor;
  return add_node(std::move(n));
}

NodeId Graph::add_scalar(NodeId x, double value) {
  check_id(x, "add_scalar");
  Node n;
  n.op = Op::kAddScalar;
  n.shape = node(x).shape;
  n.parents = {x};
  n.alpha = value;
  return add_node(std::move(n));
}

NodeId Graph::matmul(NodeId a, NodeId b) {
  check_id(a, "matmul");
  check_id(b, "matmul");
  const Shape& sa = node(a).shape;
  const Shape& sb = node(b).shape;
  check(sa.size() == 2 && sb.size() == 2, "matmul: operands must be rank 2, got ", shape_str(sa),
        " and ", shape_str(sb));
  check(sa[1] == sb[0], "matmul: inner dimensions differ, ", shape_str(sa), " x ", shape_str(sb));
  Node n;
  n.op = Op::kMatmul;
  n.shape = {sa[0], sb[1]};
  n.parents = {a, b};
  return add_node(std::move(n));
}

NodeId Graph::transpose(NodeId x) {
  check_id(x, "transpose");
  const Shape& s = node(x).shape;
  check(s.size() == 2, "transpose: operand must be rank 2, got ", shape_str(s));
  Node n;
  n.op = Op::kTranspose;
  n.shape = {s[1], s[0]};
  n.parents = {x};
  return add_node(std::move(n));
}

NodeId Graph::add_row_vec(NodeId x, NodeId bias) {
  check_id(x, "add_row_vec");
  check_id(bias, "add_row_vec");
  const Shape& sx = node(x).shape;
  const Shape& sb = node(bias).shape;
  check(sx.size() == 2 && sb.size() == 1 && sb[0] == sx[1], "add_row_vec: need [N,M] + [M], got ",
        shape_str(sx), " + ", shape_str(sb));
  Node n;
  n.op = Op::kAddRowVec;
  n.shape = sx;
  n.parents = {x, bias};
  return add_node(std::move(n));
}

NodeId Graph::conv2d(NodeId x, NodeId w, int stride, int pad) {
  check_id(x, "conv2d");
  check_id(w, "conv2d");
  Shape sx = image_shape(x, "conv2d");
  const Shape& sw = node(w).shape;
  check(sw.size() == 4, "conv2d: filter must be [Co,Ci,kh,kw], got ", shape_str(sw));
  check(sw[1] == sx[1], "conv2d: filter expects ", sw[1], " input channels, tensor has ", sx[1]);
  check(stride >= 1, "conv2d: stride must be >= 1, got ", stride);
  check(pad >= 0, "conv2d: pad must be >= 0, got ", pad);
  check(sw[2] <= sx[2] + 2 * pad && sw[3] <= sx[3] + 2 * pad,
        "conv2d: kernel ", sw[2], "x", sw[3], " larger than padded input ", sx[2] + 2 * pad, "x",
        sx[3] + 2 * pad);
  check((sx[2] + 2 * pad - sw[2]) % stride == 0 && (sx[3] + 2 * pad - sw[3]) % stride == 0,
        "conv2d: stride ", stride, " does not evenly tile input ", shape_str(sx), " with kernel ",
        shape_str(sw), " pad ", pad);
  Node n;
  n.op = Op::kConv2d;
  n.shape = {sx[0], sw[0], (sx[2] + 2 * pad - sw[2]) / stride + 1, (sx[3] + 2 * pad - sw[3]) / stride + 1};
  n.parents = {x, w};
  n.stride = stride;
  n.pad = pad;
  n.in_h = sx[2];
  n.in_w = sx[3];
  return add_node(std::move(n));
}

NodeId Graph::conv2d_vjp_input(NodeId dy, NodeId w, int stride, int pad, int in_h, int in_w) {
  check_id(dy, "conv2d_vjp_input");
  check_id(w, "conv2d_vjp_input");
  Shape sy = image_shape(dy, "conv2d_vjp_input");
  const Shape& sw = node(w).shape;
  check(sw.size() == 4, "conv2d_vjp_input: filter must be [Co,Ci,kh,kw], got ", shape_str(sw));
  check(sw[0] == sy[1], "conv2d_vjp_input: dy has ", sy[1], " channels, filter produces ", sw[0]);
  check(in_h > 0 && in_w > 0, "conv2d_vjp_input: target size must be positive");
  check((in_h + 2 * pad - sw[2]) / stride + 1 == sy[2] && (in_h + 2 * pad - sw[2]) % stride == 0,
        "conv2d_vjp_input: dy height ", sy[2], " inconsistent with target ", in_h);
  check((in_w + 2 * pad - sw[3]) / stride + 1 == sy[3] && (in_w + 2 * pad - sw[3]) % stride == 0,
        "conv2d_vjp_input: dy width ", sy[3], " inconsistent with target ", in_w);
  Node n;
  n.op = Op::kConv2dVjpInput;
  n.shape = {sy[0], sw[1], in_h, in_w};
  n.parents = {dy, w};
  n.stride = stride;
  n.pad = pad;
  n.in_h = in_h;
  n.in_w = in_w;
  return add_node(std::move(n));
}

NodeId Graph::bias_chan(NodeId x, NodeId bias) {
  check_id(x, "bias_chan");
  check_id(bias, "bias_chan");
  Shape sx = image_shape(x, "bias_chan");
  const Shape& sb = node(bias).shape;
  check(sb.size() == 1 && sb[0] == sx[1], "bias_chan: need [C] bias for ", shape_str(sx), ", got ",
        shape_str(sb));
  Node n;
  n.op = Op::kBiasChan;
  n.shape = sx;
  n.parents = {x, bias};
  return add_node(std::move(n));
}

NodeId Graph::channel_affine(NodeId x, NodeId scale, NodeId shift) {
  check_id(x, "channel_affine");
  check_id(scale, "channel_affine");
  check_id(shift, "channel_affine");
  Shape sx = image_shape(x, "channel_affine");
  Shape want{sx[0], sx[1]};
  check(node(scale).shape == want && node(shift).shape == want,
        "channel_affine: scale/shift must be [N,C] = ", shape_str(want), ", got ",
        shape_str(node(scale).shape), " and ", shape_str(node(shift).shape));
  Node n;
  n.op = Op::kChannelAffine;
  n.shape = sx;
  n.parents = {x, scale, shift};
  return add_node(std::move(n));
}

NodeId Graph::upsample2x(NodeId x) {
  check_id(x, "upsample2x");
  Shape s = image_shape(x, "upsample2x");
  Node n;
  n.op = Op::kUpsample2x;
  n.shape = {s[0], s[1], 2 * s[2], 2 * s[3]};
  n.parents = {x};
  return add_node(std::move(n));
}

NodeId Graph::avg_pool2x(NodeId x) {
  check_id(x, "avg_pool2x");
  Shape s = image_shape(x, "avg_pool2x");
  check(s[2] % 2 == 0 && s[3] % 2 == 0, "avg_pool2x: spatial dims must be even, got ", shape_str(s));
  Node n;
  n.op = Op::kAvgPool2x;
  n.shape = {s[0], s[1], s[2] / 2, s[3] / 2};
  n.parents = {x};
  return add_node(std::move(n));
}

NodeId Graph::hflip(NodeId x, std::vector<uint8_t> flip) {
  check_id(x, "hflip");
  Shape s = image_shape(x, "hflip");
  check(static_cast<int>(flip.size()) == s[0], "hflip: need one flag per sample (", s[0], "), got ",
        flip.size());
  Node n;
  n.op = Op::kHFlip;
  n.shape = s;
  n.parents = {x};
  n.flip = std::move(flip);
  return add_node(std::move(n));
}

NodeId Graph::translate2d(NodeId x, std::vector<int> off_y, std::vector<int> off_x) {
  check_id(x, "translate2d");
  Shape s = image_shape(x, "translate2d");
  check(static_cast<int>(off_y.size()) == s[0] && static_cast<int>(off_x.size()) == s[0],
        "translate2d: need one offset pair per sample (", s[0], ")");
  Node n;
  n.op = Op::kTranslate2d;
  n.shape = s;
  n.parents = {x};
  n.off_y = std::move(off_y);
  n.off_x = std::move(off_x);
  return add_node(std::move(n));
}

NodeId Graph::leaky_relu(NodeId x, double slope) {
  check_id(x, "leaky_relu");
  Node n;
  n.op = Op::kLeakyRelu;
  n.shape = node(x).shape;
  n.parents = {x};
  n.alpha = slope;
  return add_node(std::move(n));
}

NodeId Graph::lrelu_mask(NodeId x, double slope) {
  check_id(x, "lrelu_mask");
  Node n;
  n.op = Op::kLreluMask;
  n.shape = node(x).shape;
  n.parents = {x};
  n.alpha = slope;
  return add_node(std::move(n));
}

NodeId Graph::softplus(NodeId x) {
  check_id(x, "softplus");
  Node n;
  n.op = Op::kSoftplus;
  n.shape = node(x).shape;
  n.parents = {x};
  return add_node(std::move(n));
}

NodeId Graph::sigmoid(NodeId x) {
  check_id(x, "sigmoid");
  Node n;
  n.op = Op::kSigmoid;
  n.shape = node(x).shape;
  n.parents = {x};
  return add_node(std::move(n));
}

NodeId Graph::abs(NodeId x) {
  check_id(x, "abs");
  Node n;
  n.op = Op::kAbs;
  n.shape = node(x).shape;
  n.parents = {x};
  return add_node(std::move(n));
}

NodeId Graph::square(NodeId x) {
  check_id(x, "square");
  Node n;
  n.op = Op::kSquare;
  n.shape = node(x).shape;
  n.parents = {x};
  return add_node(std::move(n));
}

NodeId Graph::sum(NodeId x) {
  check_id(x, "sum");
  Node n;
  n.op = Op::kSum;
  n.shape = {};
  n.parents = {x};
  return add_node(std::move(n));
}

NodeId Graph::mean(NodeId x) {
  check_id(x, "mean");
  Node n;
  n.op = Op::kMean;
  n.shape = {};
  n.parents = {x};
  return add_node(std::move(n));
}

NodeId Graph::sum_sq(NodeId x) {
  check_id(x, "sum_sq");
  Node n;
  n.op = Op::kSumSq;
  n.shape = {};
  n.parents = {x};
  return add_node(std::move(n));
}

NodeId Graph::reshape(NodeId x, Shape shape) {
  check_id(x, "reshape");
  check(numel_of(shape) == numel_of(node(x).shape), "reshape: cannot view ",
        shape_str(node(x).shape), " as ", shape_str(shape));
  Node n;
  n.op = Op::kReshape;
  n.shape = std::move(shape);
  n.parents = {x};
  return add_node(std::move(n));
}

NodeId Graph::concat_chan(NodeId a, NodeId b) {
  check_id(a, "concat_chan");
  check_id(b, "concat_chan");
  Shape sa = image_shape(a, "concat_chan");
  Shape sb = image_shape(b, "concat_chan");
  check(sa[0] == sb[0] && sa[2] == sb[2] && sa[3] == sb[3],
        "concat_chan: batch/spatial dims differ, ", shape_str(sa), " vs ", shape_str(sb));
  Node n;
  n.op = Op::kConcatChan;
  n.shape = {sa[0], sa[1] + sb[1], sa[2], sa[3]};
  n.parents = {a, b};
  return add_node(std::move(n));
}

NodeId Graph::slice_chan(NodeId x, int from, int to) {
  check_id(x, "slice_chan");
  Shape s = image_shape(x, "slice_chan");
  check(0 <= from && from < to && to <= s[1], "slice_chan: invalid channel range [", from, ", ", to,
        ") for ", shape_str(s));
  Node n;
  n.op = Op::kSliceChan;
  n.shape = {s[0], to - from, s[2], s[3]};
  n.parents = {x};
  n.from = from;
  n.to = to;
  return add_node(std::move(n));
}

NodeId Graph::crop2d(NodeId x, int y0, int x0, int h, int w) {
  check_id(x, "crop2d");
  Shape s = image_shape(x, "crop2d");
  check(y0 >= 0 && x0 >= 0 && h > 0 && w > 0 && y0 + h <= s[2] && x0 + w <= s[3],
        "crop2d: window [", y0, ",", x0, ",", h, ",", w, "] outside ", shape_str(s));
  Node n;
  n.op = Op::kCrop2d;
  n.shape = {s[0], s[1], h, w};
  n.parents = {x};
  n.from = y0;
  n.to = x0;
  return add_node(std::move(n));
}

void Graph::set_output(NodeId id) {
  check_id(id, "set_output");
  check(node(id).value.numel() == 1 || numel_of(node(id).shape) == 1,
        "set_output: output must be scalar, got shape ", shape_str(node(id).shape));
  output_ = id;

  // Mark every node that can influence a differentiable leaf so the
  // backward pass skips dead branches (large reference constants mostly).
  for (auto& n : nodes_) n.needs_grad = false;
  for (size_t i = 0; i < nodes_.size(); ++i) {
    Node& n = nodes_[i];
    if (n.op == Op::kInput && n.differentiable) {
      n.needs_grad = true;
      continue;
    }
    for (NodeId p : n.parents) {
      if (nodes_[static_cast<size_t>(p)].needs_grad) {
        n.needs_grad = true;
        break;
      }
    }
    // The mask op is locally constant by definition.
    if (n.op == Op::kLreluMask) n.needs_grad = false;
  }
}

void Graph::bind(const std::string& name, const Tensor& value) {
  auto it = inputs_by_name_.find(name);
  check(it != inputs_by_name_.end(), "bind: no input named '", name, "'");
  Node& n = nodes_[static_cast<size_t>(it->second)];
  check(value.shape() == n.shape, "bind: input '", name, "' expects shape ", shape_str(n.shape),
        ", got ", shape_str(value.shape()));
  n.value = value;
  n.bound = true;
  values_valid_ = false;
  grads_valid_ = false;
}

bool Graph::has_input(const std::string& name) const { return inputs_by_name_.count(name) > 0; }

double Graph::evaluate(const std::map<std::string, Tensor>& inputs) {
  for (const auto& [name, value] : inputs) bind(name, value);
  return evaluate();
}

double Graph::evaluate() {
  check(output_ >= 0, "evaluate: no output set");
  for (const auto& [name, id] : inputs_by_name_) {
    check(node(id).bound, "evaluate: input '", name, "' is not bound");
  }
  for (size_t i = 0; i < nodes_.size(); ++i) {
    forward_node(static_cast<NodeId>(i));
    if (!nodes_[i].value.all_finite()) {
      fail("evaluate: non-finite value produced by node #", i, " (", op_name(nodes_[i].op),
           nodes_[i].name.empty() ? "" : " '" + nodes_[i].name + "'", ")");
    }
  }
  values_valid_ = true;
  grads_valid_ = false;
  return node(output_).value.item();
}

std::map<std::string, Tensor> Graph::backprop() {
  std::vector<std::string> names;
  for (const auto& [name, id] : inputs_by_name_) {
    if (node(id).differentiable) names.push_back(name);
  }
  return backprop(names);
}

std::map<std::string, Tensor> Graph::backprop(const std::vector<std::string>& names) {
  check(values_valid_, "backprop: call evaluate() first");
  if (!grads_valid_) run_backward();
  std::map<std::string, Tensor> grads;
  for (const auto& name : names) {
    auto it = inputs_by_name_.find(name);
    check(it != inputs_by_name_.end(), "backprop: no input named '", name, "'");
    const Node& n = node(it->second);
    check(n.differentiable, "backprop: input '", name, "' is not differentiable");
    grads.emplace(name, n.grad);
  }
  return grads;
}

void Graph::run_backward() {
  for (auto& n : nodes_) {
    if (n.needs_grad) {
      if (n.grad.shape() != n.shape || n.grad.numel() != n.value.numel()) {
        n.grad = Tensor(n.shape);
      } else {
        n.grad.fill(0.0);
      }
    }
  }
  Node& out = nodes_[static_cast<size_t>(output_)];
  if (out.needs_grad) out.grad[0] = 1.0;
  for (int64_t i = static_cast<int64_t>(nodes_.size()) - 1; i >= 0; --i) {
    if (nodes_[static_cast<size_t>(i)].needs_grad) backward_node(static_cast<NodeId>(i));
  }
  grads_valid_ = true;
}

void Graph::forward_node(NodeId id) {
  Node& n = nodes_[static_cast<size_t>(id)];
  switch (n.op) {
    case Op::kInput:
    case Op::kConstant:
      return;
    case Op::kAdd: {
      const Tensor& a = node(n.parents[0]).value;
      const Tensor& b = node(n.parents[1]).value;
      for (int64_t i = 0; i < n.value.numel(); ++i) n.value[i] = a[i] + b[i];
      return;
    }
    case Op::kSub: {
      const Tensor& a = node(n.parents[0]).value;
      const Tensor& b = node(n.parents[1]).value;
      for (int64_t i = 0; i < n.value.numel(); ++i) n.value[i] = a[i] - b[i];
      return;
    }
    case Op::kMul: {
      const Tensor& a = node(n.parents[0]).value;
      const Tensor& b = node(n.parents[1]).value;
      for (int64_t i = 0; i < n.value.numel(); ++i) n.value[i] = a[i] * b[i];
      return;
    }
    case Op::kScale: {
      const Tensor& a = node(n.parents[0]).value;
      for (int64_t i = 0; i < n.value.numel(); ++i) n.value[i] = n.alpha * a[i];
      return;
    }
    case Op::kAddScalar: {
      const Tensor& a = node(n.parents[0]).value;
      for (int64_t i = 0; i < n.value.numel(); ++i) n.value[i] = a[i] + n.alpha;
      return;
    }
    case Op::kMatmul: {
      const Tensor& a = node(n.parents[0]).value;
      const Tensor& b = node(n.parents[1]).value;
      int N = a.dim(0), K = a.dim(1), M = b.dim(1);
      n.value.fill(0.0);
      for (int i = 0; i < N; ++i) {
        double* yrow = n.value.data() + static_cast<int64_t>(i) * M;
        const double* arow = a.data() + static_cast<int64_t>(i) * K;
        for (int k = 0; k < K; ++k) {
          double av = arow[k];
          const double* brow = b.data() + static_cast<int64_t>(k) * M;
          for (int j = 0; j < M; ++j) yrow[j] += av * brow[j];
        }
      }
      return;
    }
    case Op::kTranspose: {
      const Tensor& a = node(n.parents[0]).value;
      int R = a.dim(0), C = a.dim(1);
      for (int i = 0; i < R; ++i)
        for (int j = 0; j < C; ++j) n.value.at(j, i) = a.at(i, j);
      return;
    }
    case Op::kAddRowVec: {
      const Tensor& a = node(n.parents[0]).value;
      const Tensor& b = node(n.parents[1]).value;
      int N = a.dim(0), M = a.dim(1);
      for (int i = 0; i < N; ++i) {
        const double* arow = a.data() + static_cast<int64_t>(i) * M;
        double* yrow = n.value.data() + static_cast<int64_t>(i) * M;
        for (int j = 0; j < M; ++j) yrow[j] = arow[j] + b[j];
      }
      return;
    }
    case Op::kConv2d: {
      const Tensor& x = node(n.parents[0]).value;
      const Tensor& w = node(n.parents[1]).value;
      ConvDims d = conv_dims(x.shape(), w.shape(), n.stride, n.pad);
      conv2d_forward(x, w, d, n.value);
      return;
    }
    case Op::kConv2dVjpInput: {
      const Tensor& dy = node(n.parents[0]).value;
      const Tensor& w = node(n.parents[1]).value;
      ConvDims d = conv_dims(n.shape, w.shape(), n.stride, n.pad);
      n.value.fill(0.0);
      conv2d_input_grad(dy, w, d, n.value);
      return;
    }
    case Op::kBiasChan: {
      const Tensor& x = node(n.parents[0]).value;
      const Tensor& b = node(n.parents[1]).value;
      int N = x.dim(0), C = x.dim(1);
      int64_t hw = static_cast<int64_t>(x.dim(2)) * x.dim(3);
      for (int i = 0; i < N; ++i) {
        for (int c = 0; c < C; ++c) {
          const double* xp = x.data() + (static_cast<int64_t>(i) * C + c) * hw;
          double* yp = n.value.data() + (static_cast<int64_t>(i) * C + c) * hw;
          double bv = b[c];
          for (int64_t k = 0; k < hw; ++k) yp[k] = xp[k] + bv;
        }
      }
      return;
    }
    case Op::kChannelAffine: {
      const Tensor& x = node(n.parents[0]).value;
      const Tensor& s = node(n.parents[1]).value;
      const Tensor& t = node(n.parents[2]).value;
      int N = x.dim(0), C = x.dim(1);
      int64_t hw = static_cast<int64_t>(x.dim(2)) * x.dim(3);
      for (int i = 0; i < N; ++i) {
        for (int c = 0; c < C; ++c) {
          const double* xp = x.data() + (static_cast<int64_t>(i) * C + c) * hw;
          double* yp = n.value.data() + (static_cast<int64_t>(i) * C + c) * hw;
          double sv = s.at(i, c), tv = t.at(i, c);
          for (int64_t k = 0; k < hw; ++k) yp[k] = sv * xp[k] + tv;
        }
      }
      return;
    }
    case Op::kUpsample2x: {
      const Tensor& x = node(n.parents[0]).value;
      int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
      for (int i = 0; i < N; ++i)
        for (int c = 0; c < C; ++c)
          for (int y = 0; y < H; ++y) {
            const double* xrow = x.data() + ((static_cast<int64_t>(i) * C + c) * H + y) * W;
            double* y0 = n.value.data() + ((static_cast<int64_t>(i) * C + c) * 2 * H + 2 * y) * 2 * W;
            double* y1 = y0 + 2 * W;
            for (int xcol = 0; xcol < W; ++xcol) {
              double v = xrow[xcol];
              y0[2 * xcol] = v;
              y0[2 * xcol + 1] = v;
              y1[2 * xcol] = v;
              y1[2 * xcol + 1] = v;
            }
          }
      return;
    }
    case Op::kAvgPool2x: {
      const Tensor& x = node(n.parents[0]).value;
      int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
      int Ho = H / 2, Wo = W / 2;
      for (int i = 0; i < N; ++i)
        for (int c = 0; c < C; ++c)
          for (int y = 0; y < Ho; ++y) {
            const double* r0 = x.data() + ((static_cast<int64_t>(i) * C + c) * H + 2 * y) * W;
            const double* r1 = r0 + W;
            double* yrow = n.value.data() + ((static_cast<int64_t>(i) * C + c) * Ho + y) * Wo;
            for (int j = 0; j < Wo; ++j) {
              yrow[j] = 0.25 * (r0[2 * j] + r0[2 * j + 1] + r1[2 * j] + r1[2 * j + 1]);
            }
          }
      return;
    }
    case Op::kHFlip: {
      const Tensor& x = node(n.parents[0]).value;
      int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
      for (int i = 0; i < N; ++i) {
        bool f = n.flip[static_cast<size_t>(i)] != 0;
        for (int c = 0; c < C; ++c)
          for (int y = 0; y < H; ++y) {
            const double* xrow = x.data() + ((static_cast<int64_t>(i) * C + c) * H + y) * W;
            double* yrow = n.value.data() + ((static_cast<int64_t>(i) * C + c) * H + y) * W;
            if (f) {
              for (int j = 0; j < W; ++j) yrow[j] = xrow[W - 1 - j];
            } else {
              std::copy(xrow, xrow + W, yrow);
            }
          }
      }
      return;
    }
    case Op::kTranslate2d: {
      const Tensor& x = node(n.parents[0]).value;
      int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
      n.value.fill(0.0);
      for (int i = 0; i < N; ++i) {
        int dy = n.off_y[static_cast<size_t>(i)], dx = n.off_x[static_cast<size_t>(i)];
        for (int c = 0; c < C; ++c)
          for (int y = 0; y < H; ++y) {
            int sy = y - dy;
            if (sy < 0 || sy >= H) continue;
            const double* xrow = x.data() + ((static_cast<int64_t>(i) * C + c) * H + sy) * W;
            double* yrow = n.value.data() + ((static_cast<int64_t>(i) * C + c) * H + y) * W;
            for (int j = std::max(0, dx); j < std::min(W, W + dx); ++j) yrow[j] = xrow[j - dx];
          }
      }
      return;
    }
    case Op::kLeakyRelu: {
      const Tensor& a = node(n.parents[0]).value;
      for (int64_t i = 0; i < n.value.numel(); ++i) {
        n.value[i] = a[i] > 0.0 ? a[i] : n.alpha * a[i];
      }
      return;
    }
    case Op::kLreluMask: {
      const Tensor& a = node(n.parents[0]).value;
      for (int64_t i = 0; i < n.value.numel(); ++i) n.value[i] = a[i] > 0.0 ? 1.0 : n.alpha;
      return;
    }
    case Op::kSoftplus: {
      const Tensor& a = node(n.parents[0]).value;
      for (int64_t i = 0; i < n.value.numel(); ++i) n.value[i] = stable_softplus(a[i]);
      return;
    }
    case Op::kSigmoid: {
      const Tensor& a = node(n.parents[0]).value;
      for (int64_t i = 0; i < n.value.numel(); ++i) n.value[i] = stable_sigmoid(a[i]);
      return;
    }
    case Op::kAbs: {
      const Tensor& a = node(n.parents[0]).value;
      for (int64_t i = 0; i < n.value.numel(); ++i) n.value[i] = std::fabs(a[i]);
      return;
    }
    case Op::kSquare: {
      const Tensor& a = node(n.parents[0]).value;
      for (int64_t i = 0; i < n.value.numel(); ++i) n.value[i] = a[i] * a[i];
      return;
    }
    case Op::kSum: {
      const Tensor& a = node(n.parents[0]).value;
      double acc = 0.0;
      for (int64_t i = 0; i < a.numel(); ++i) acc += a[i];
      n.value[0] = acc;
      return;
    }
    case Op::kMean: {
      const Tensor& a = node(n.parents[0]).value;
      double acc = 0.0;
      for (int64_t i = 0; i < a.numel(); ++i) acc += a[i];
      n.value[0] = acc / static_cast<double>(a.numel());
      return;
    }
    case Op::kSumSq: {
      const Tensor& a = node(n.parents[0]).value;
      double acc = 0.0;
      for (int64_t i = 0; i < a.numel(); ++i) acc += a[i] * a[i];
      n.value[0] = acc;
      return;
    }
    case Op::kReshape: {
      const Tensor& a = node(n.parents[0]).value;
      std::copy(a.data(), a.data() + a.numel(), n.value.data());
      return;
    }
    case Op::kConcatChan: {
      const Tensor& a = node(n.parents[0]).value;
      const Tensor& b = node(n.parents[1]).value;
      int N = a.dim(0), Ca = a.dim(1), Cb = b.dim(1);
      int64_t hw = static_cast<int64_t>(a.dim(2)) * a.dim(3);
      for (int i = 0; i < N; ++i) {
        std::copy(a.data() + static_cast<int64_t>(i) * Ca * hw,
                  a.data() + static_cast<int64_t>(i + 1) * Ca * hw,
                  n.value.data() + static_cast<int64_t>(i) * (Ca + Cb) * hw);
        std::copy(b.data() + static_cast<int64_t>(i) * Cb * hw,
                  b.data() + static_cast<int64_t>(i + 1) * Cb * hw,
                  n.value.data() + (static_cast<int64_t>(i) * (Ca + Cb) + Ca) * hw);
      }
      return;
    }
    case Op::kSliceChan: {
      const Tensor& a = node(n.parents[0]).value;
      int N = a.dim(0), C = a.dim(1), Cs = n.to - n.from;
      int64_t hw = static_cast<int64_t>(a.dim(2)) * a.dim(3);
      for (int i = 0; i < N; ++i) {
        std::copy(a.data() + (static_cast<int64_t>(i) * C + n.from) * hw,
                  a.data() + (static_cast<int64_t>(i) * C + n.to) * hw,
                  n.value.data() + static_cast<int64_t>(i) * Cs * hw);
      }
      return;
    }
    case Op::kCrop2d: {
      const Tensor& a = node(n.parents[0]).value;
      int N = a.dim(0), C = a.dim(1), H = a.dim(2), W = a.dim(3);
      int h = n.shape[2], w = n.shape[3];
      for (int i = 0; i < N; ++i)
        for (int c = 0; c < C; ++c)
          for (int y = 0; y < h; ++y) {
            const double* src = a.data() + ((static_cast<int64_t>(i) * C + c) * H + n.from + y) * W + n.to;
            double* dst = n.value.data() + ((static_cast<int64_t>(i) * C + c) * h + y) * w;
            std::copy(src, src + w, dst);
          }
      return;
    }
  }
  fail("forward: unhandled op ", op_name(n.op));
}

void Graph::backward_node(NodeId id) {
  Node& n = nodes_[static_cast<size_t>(id)];
  const Tensor& g = n.grad;
  auto pgrad = [&](int k) -> Tensor& { return nodes_[static_cast<size_t>(n.parents[static_cast<size_t>(k)])].grad; };
  auto pneeds = [&](int k) { return nodes_[static_cast<size_t>(n.parents[static_cast<size_t>(k)])].needs_grad; };
  auto pval = [&](int k) -> const Tensor& { return nodes_[static_cast<size_t>(n.parents[static_cast<size_t>(k)])].value; };

  switch (n.op) {
    case Op::kInput:
    case Op::kConstant:
      return;
    case Op::kAdd: {
      for (int k = 0; k < 2; ++k) {
        if (!pneeds(k)) continue;
        Tensor& pg = pgrad(k);
        for (int64_t i = 0; i < g.numel(); ++i) pg[i] += g[i];
      }
      return;
    }
    case Op::kSub: {
      if (pneeds(0)) {
        Tensor& pg = pgrad(0);
        for (int64_t i = 0; i < g.numel(); ++i) pg[i] += g[i];
      }
      if (pneeds(1)) {
        Tensor& pg = pgrad(1);
        for (int64_t i = 0; i < g.numel(); ++i) pg[i] -= g[i];
      }
      return;
    }
    case Op::kMul: {
      if (pneeds(0)) {
        Tensor& pg = pgrad(0);
        const Tensor& b = pval(1);
        for (int64_t i = 0; i < g.numel(); ++i) pg[i] += g[i] * b[i];
      }
      if (pneeds(1)) {
        Tensor& pg = pgrad(1);
        const Tensor& a = pval(0);
        for (int64_t i = 0; i < g.numel(); ++i) pg[i] += g[i] * a[i];
      }
      return;
    }
    case Op::kScale: {
      if (!pneeds(0)) return;
      Tensor& pg = pgrad(0);
      for (int64_t i = 0; i < g.numel(); ++i) pg[i] += n.alpha * g[i];
      return;
    }
    case Op::kAddScalar: {
      if (!pneeds(0)) return;
      Tensor& pg = pgrad(0);
      for (int64_t i = 0; i < g.numel(); ++i) pg[i] += g[i];
      return;
    }
    case Op::kMatmul: {
      const Tensor& a = pval(0);
      const Tensor& b = pval(1);
      int N = a.dim(0), K = a.dim(1), M = b.dim(1);
      if (pneeds(0)) {
        Tensor& da = pgrad(0);
        for (int i = 0; i < N; ++i) {
          const double* grow = g.data() + static_cast<int64_t>(i) * M;
          double* darow = da.data() + static_cast<int64_t>(i) * K;
          for (int k = 0; k < K; ++k) {
            const double* brow = b.data() + static_cast<int64_t>(k) * M;
            double acc = 0.0;
            for (int j = 0; j < M; ++j) acc += grow[j] * brow[j];
            darow[k] += acc;
          }
        }
      }
      if (pneeds(1)) {
        Tensor& db = pgrad(1);
        for (int i = 0; i < N; ++i) {
          const double* arow = a.data() + static_cast<int64_t>(i) * K;
          const double* grow = g.data() + static_cast<int64_t>(i) * M;
          for (int k = 0; k < K; ++k) {
            double av = arow[k];
            if (av == 0.0) continue;
            double* dbrow = db.data() + static_cast<int64_t>(k) * M;
            for (int j = 0; j < M; ++j) dbrow[j] += av * grow[j];
          }
        }
      }
      return;
    }
    case Op::kTranspose: {
      if (!pneeds(0)) return;
      Tensor& pg = pgrad(0);
      int R = n.shape[0], C = n.shape[1];  // output dims
      for (int i = 0; i < R; ++i)
        for (int j = 0; j < C; ++j) pg.at(j, i) += g.at(i, j);
      return;
    }
    case Op::kAddRowVec: {
      int N = n.shape[0], M = n.shape[1];
      if (pneeds(0)) {
        Tensor& pg = pgrad(0);
        for (int64_t i = 0; i < g.numel(); ++i) pg[i] += g[i];
      }
      if (pneeds(1)) {
        Tensor& pb = pgrad(1);
        for (int i = 0; i < N; ++i) {
          const double* grow = g.data() + static_cast<int64_t>(i) * M;
          for (int j = 0; j < M; ++j) pb[j] += grow[j];
        }
      }
      return;
    }
    case Op::kConv2d: {
      const Tensor& x = pval(0);
      const Tensor& w = pval(1);
      ConvDims d = conv_dims(x.shape(), w.shape(), n.stride, n.pad);
      if (pneeds(0)) conv2d_input_grad(g, w, d, pgrad(0));
      if (pneeds(1)) conv2d_weight_grad(g, x, d, pgrad(1));
      return;
    }
    case Op::kConv2dVjpInput: {
      // Forward scatters dy through w onto an input-sized canvas; the
      // adjoints are a plain convolution (for dy) and the usual weight
      // correlation with roles swapped (for w).
      const Tensor& dy = pval(0);
      const Tensor& w = pval(1);
      ConvDims d = conv_dims(n.shape, w.shape(), n.stride, n.pad);
      if (pneeds(0)) {
        Tensor tmp(node(n.parents[0]).shape);
        conv2d_forward(g, w, d, tmp);
        Tensor& pg = pgrad(0);
        for (int64_t i = 0; i < pg.numel(); ++i) pg[i] += tmp[i];
      }
      if (pneeds(1)) conv2d_weight_grad(dy, g, d, pgrad(1));
      return;
    }
    case Op::kBiasChan: {
      if (pneeds(0)) {
        Tensor& pg = pgrad(0);
        for (int64_t i = 0; i < g.numel(); ++i) pg[i] += g[i];
      }
      if (pneeds(1)) {
        Tensor& pb = pgrad(1);
        int N = n.shape[0], C = n.shape[1];
        int64_t hw = static_cast<int64_t>(n.shape[2]) * n.shape[3];
        for (int i = 0; i < N; ++i)
          for (int c = 0; c < C; ++c) {
            const double* gp = g.data() + (static_cast<int64_t>(i) * C + c) * hw;
            double acc = 0.0;
            for (int64_t k = 0; k < hw; ++k) acc += gp[k];
            pb[c] += acc;
          }
      }
      return;
    }
    case Op::kChannelAffine: {
      const Tensor& x = pval(0);
      const Tensor& s = pval(1);
      int N = n.shape[0], C = n.shape[1];
      int64_t hw = static_cast<int64_t>(n.shape[2]) * n.shape[3];
      for (int i = 0; i < N; ++i)
        for (int c = 0; c < C; ++c) {
          const double* gp = g.data() + (static_cast<int64_t>(i) * C + c) * hw;
          if (pneeds(0)) {
            double sv = s.at(i, c);
            double* xp = pgrad(0).data() + (static_cast<int64_t>(i) * C + c) * hw;
            for (int64_t k = 0; k < hw; ++k) xp[k] += sv * gp[k];
          }
          if (pneeds(1)) {
            const double* xp = x.data() + (static_cast<int64_t>(i) * C + c) * hw;
            double acc = 0.0;
            for (int64_t k = 0; k < hw; ++k) acc += gp[k] * xp[k];
            pgrad(1).at(i, c) += acc;
          }
          if (pneeds(2)) {
            double acc = 0.0;
            for (int64_t k = 0; k < hw; ++k) acc += gp[k];
            pgrad(2).at(i, c) += acc;
          }
        }
      return;
    }
    case Op::kUpsample2x: {
      if (!pneeds(0)) return;
      Tensor& pg = pgrad(0);
      int N = n.shape[0], C = n.shape[1], H = n.shape[2] / 2, W = n.shape[3] / 2;
      for (int i = 0; i < N; ++i)
        for (int c = 0; c < C; ++c)
          for (int y = 0; y < H; ++y) {
            const double* g0 = g.data() + ((static_cast<int64_t>(i) * C + c) * 2 * H + 2 * y) * 2 * W;
            const double* g1 = g0 + 2 * W;
            double* prow = pg.data() + ((static_cast<int64_t>(i) * C + c) * H + y) * W;
            for (int j = 0; j < W; ++j) {
              prow[j] += g0[2 * j] + g0[2 * j + 1] + g1[2 * j] + g1[2 * j + 1];
            }
          }
      return;
    }
    case Op::kAvgPool2x: {
      if (!pneeds(0)) return;
      Tensor& pg = pgrad(0);
      int N = n.shape[0], C = n.shape[1], Ho = n.shape[2], Wo = n.shape[3];
      int W = 2 * Wo;
      for (int i = 0; i < N; ++i)
        for (int c = 0; c < C; ++c)
          for (int y = 0; y < Ho; ++y) {
            const double* grow = g.data() + ((static_cast<int64_t>(i) * C + c) * Ho + y) * Wo;
            double* p0 = pg.data() + ((static_cast<int64_t>(i) * C + c) * 2 * Ho + 2 * y) * W;
            double* p1 = p0 + W;
            for (int j = 0; j < Wo; ++j) {
              double v = 0.25 * grow[j];
              p0[2 * j] += v;
              p0[2 * j + 1] += v;
              p1[2 * j] += v;
              p1[2 * j + 1] += v;
            }
          }
      return;
    }
    case Op::kHFlip: {
      if (!pneeds(0)) return;
      Tensor& pg = pgrad(0);
      int N = n.shape[0], C = n.shape[1], H = n.shape[2], W = n.shape[3];
      for (int i = 0; i < N; ++i) {
        bool f = n.flip[static_cast<size_t>(i)] != 0;
        for (int c = 0; c < C; ++c)
          for (int y = 0; y < H; ++y) {
            const double* grow = g.data() + ((static_cast<int64_t>(i) * C + c) * H + y) * W;
            double* prow = pg.data() + ((static_cast<int64_t>(i) * C + c) * H + y) * W;
            if (f) {
              for (int j = 0; j < W; ++j) prow[W - 1 - j] += grow[j];
            } else {
              for (int j = 0; j < W; ++j) prow[j] += grow[j];
            }
          }
      }
      return;
    }
    case Op::kTranslate2d: {
      if (!pneeds(0)) return;
      Tensor& pg = pgrad(0);
      int N = n.shape[0], C = n.shape[1], H = n.shape[2], W = n.shape[3];
      for (int i = 0; i < N; ++i) {
        int dy = n.off_y[static_cast<size_t>(i)], dx = n.off_x[static_cast<size_t>(i)];
        for (int c = 0; c < C; ++c)
          for (int y = 0; y < H; ++y) {
            int sy = y - dy;
            if (sy < 0 || sy >= H) continue;
            const double* grow = g.data() + ((static_cast<int64_t>(i) * C + c) * H + y) * W;
            double* prow = pg.data() + ((static_cast<int64_t>(i) * C + c) * H + sy) * W;
            for (int j = std::max(0, dx); j < std::min(W, W + dx); ++j) prow[j - dx] += grow[j];
          }
      }
      return;
    }
    case Op::kLeakyRelu: {
      if (!pneeds(0)) return;
      Tensor& pg = pgrad(0);
      const Tensor& a = pval(0);
      for (int64_t i = 0; i < g.numel(); ++i) pg[i] += g[i] * (a[i] > 0.0 ? 1.0 : n.alpha);
      return;
    }
    case Op::kLreluMask:
      return;  // locally constant
    case Op::kSoftplus: {
      if (!pneeds(0)) return;
      Tensor& pg = pgrad(0);
      const Tensor& a = pval(0);
      for (int64_t i = 0; i < g.numel(); ++i) pg[i] += g[i] * stable_sigmoid(a[i]);
      return;
    }
    case Op::kSigmoid: {
      if (!pneeds(0)) return;
      Tensor& pg = pgrad(0);
      for (int64_t i = 0; i < g.numel(); ++i) {
        double y = n.value[i];
        pg[i] += g[i] * y * (1.0 - y);
      }
      return;
    }
    case Op::kAbs: {
      if (!pneeds(0)) return;
      Tensor& pg = pgrad(0);
      const Tensor& a = pval(0);
      for (int64_t i = 0; i < g.numel(); ++i) {
        pg[i] += g[i] * (a[i] > 0.0 ? 1.0 : (a[i] < 0.0 ? -1.0 : 0.0));
      }
      return;
    }
    case Op::kSquare: {
      if (!pneeds(0)) return;
      Tensor& pg = pgrad(0);
      const Tensor& a = pval(0);
      for (int64_t i = 0; i < g.numel(); ++i) pg[i] += 2.0 * a[i] * g[i];
      return;
    }
    case Op::kSum: {
      if (!pneeds(0)) return;
      Tensor& pg = pgrad(0);
      double gv = g[0];
      for (int64_t i = 0; i < pg.numel(); ++i) pg[i] += gv;
      return;
    }
    case Op::kMean: {
      if (!pneeds(0)) return;
      Tensor& pg = pgrad(0);
      double gv = g[0] / static_cast<double>(pg.numel());
      for (int64_t i = 0; i < pg.numel(); ++i) pg[i] += gv;
      return;
    }
    case Op::kSumSq: {
      if (!pneeds(0)) return;
      Tensor& pg = pgrad(0);
      const Tensor& a = pval(0);
      double gv = g[0];
      for (int64_t i = 0; i < pg.numel(); ++i) pg[i] += 2.0 * a[i] * gv;
      return;
    }
    case Op::kReshape: {
      if (!pneeds(0)) return;
      Tensor& pg = pgrad(0);
      for (int64_t i = 0; i < g.numel(); ++i) pg[i] += g[i];
      return;
    }
    case Op::kConcatChan: {
      int N = n.shape[0];
      int Ca = node(n.parents[0]).shape[1];
      int Cb = node(n.parents[1]).shape[1];
      int64_t hw = static_cast<int64_t>(n.shape[2]) * n.shape[3];
      if (pneeds(0)) {
        Tensor& pa = pgrad(0);
        for (int i = 0; i < N; ++i) {
          const double* gp = g.data() + static_cast<int64_t>(i) * (Ca + Cb) * hw;
          double* pp = pa.data() + static_cast<int64_t>(i) * Ca * hw;
          for (int64_t k = 0; k < Ca * hw; ++k) pp[k] += gp[k];
        }
      }
      if (pneeds(1)) {
        Tensor& pb = pgrad(1);
        for (int i = 0; i < N; ++i) {
          const double* gp = g.data() + (static_cast<int64_t>(i) * (Ca + Cb) + Ca) * hw;
          double* pp = pb.data() + static_cast<int64_t>(i) * Cb * hw;
          for (int64_t k = 0; k < Cb * hw; ++k) pp[k] += gp[k];
        }
      }
      return;
    }
    case Op::kSliceChan: {
      if (!pneeds(0)) return;
      Tensor& pg = pgrad(0);
      int N = n.shape[0], C = node(n.parents[0]).shape[1], Cs = n.to - n.from;
      int64_t hw = static_cast<int64_t>(n.shape[2]) * n.shape[3];
      for (int i = 0; i < N; ++i) {
        const double* gp = g.data() + static_cast<int64_t>(i) * Cs * hw;
        double* pp = pg.data() + (static_cast<int64_t>(i) * C + n.from) * hw;
        for (int64_t k = 0; k < Cs * hw; ++k) pp[k] += gp[k];
      }
      return;
    }
    case Op::kCrop2d: {
      if (!pneeds(0)) return;
      Tensor& pg = pgrad(0);
      const Shape& ps = node(n.parents[0]).shape;
      int N = n.shape[0], C = n.shape[1], h = n.shape[2], w = n.shape[3];
      int H = ps[2], W = ps[3];
      for (int i = 0; i < N; ++i)
        for (int c = 0; c < C; ++c)
          for (int y = 0; y < h; ++y) {
            const double* gp = g.data() + ((static_cast<int64_t>(i) * C + c) * h + y) * w;
            double* pp = pg.data() + ((static_cast<int64_t>(i) * C + c) * H + n.from + y) * W + n.to;
            for (int j = 0; j < w; ++j) pp[j] += gp[j];
          }
      return;
    }
  }
  fail("backward: unhandled op ", op_name(n.op));
}

const Tensor& Graph::value(NodeId id) const {
  check_id(id, "value");
  check(values_valid_ || node(id).op == Op::kConstant, "value: call evaluate() first");
  return node(id).value;
}

const Shape& Graph::shape(NodeId id) const {
  check_id(id, "shape");
  return node(id).shape;
}

}  // namespace latentaug
