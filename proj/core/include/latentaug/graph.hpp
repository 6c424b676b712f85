#pragma once

#include <map>
#include <string>
#include <vector>

#include "latentaug/tensor.hpp"

namespace latentaug {

// Define-then-run reverse-mode autodiff over double tensors.
//
// A Graph is built once (shapes are fixed and validated at construction),
// then evaluated any number of times against rebound inputs. evaluate()
// runs the forward pass and returns the scalar output; backprop() walks the
// same graph in reverse and returns gradients for the differentiable
// inputs. Execution order is the construction order, single threaded, so
// repeated runs on identical inputs are bit-identical.
enum class Op {
  kInput,
  kConstant,
  kAdd,
  kSub,
  kMul,
  kScale,
  kAddScalar,
  kMatmul,
  kTranspose,
  kAddRowVec,
  kConv2d,
  kConv2dVjpInput,
  kBiasChan,
  kChannelAffine,
  kUpsample2x,
  kAvgPool2x,
  kLeakyRelu,
  kLreluMask,
  kSoftplus,
  kSigmoid,
  kAbs,
  kSquare,
  kSum,
  kMean,
  kSumSq,
  kReshape,
  kConcatChan,
  kSliceChan,
  kCrop2d,
  kHFlip,
  kTranslate2d,
};

const char* op_name(Op op);

using NodeId = int;

class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;
  Graph(Graph&&) = default;
  Graph& operator=(Graph&&) = default;

  // Leaf nodes. Input names must be unique; differentiable inputs are the
  // ones backprop() reports gradients for.
  NodeId input(const std::string& name, Shape shape, bool differentiable = true);
  NodeId constant(Tensor value, const std::string& name = "");

  // Elementwise; operands must have identical shapes.
  NodeId add(NodeId a, NodeId b);
  NodeId sub(NodeId a, NodeId b);
  NodeId mul(NodeId a, NodeId b);
  NodeId scale(NodeId x, double factor);
  NodeId add_scalar(NodeId x, double value);

  // Dense algebra on rank-2 tensors.
  NodeId matmul(NodeId a, NodeId b);
  NodeId transpose(NodeId x);
  NodeId add_row_vec(NodeId x, NodeId bias);

  // Image ops on [N,C,H,W] tensors.
  NodeId conv2d(NodeId x, NodeId w, int stride, int pad);
  // Adjoint of conv2d with respect to its input, as a first-class op so
  // gradient-penalty graphs stay differentiable. Maps dy back to an input
  // gradient of spatial size in_h x in_w.
  NodeId conv2d_vjp_input(NodeId dy, NodeId w, int stride, int pad, int in_h, int in_w);
  NodeId bias_chan(NodeId x, NodeId bias);
  // y[n,c,:,:] = scale[n,c] * x[n,c,:,:] + shift[n,c]
  NodeId channel_affine(NodeId x, NodeId scale, NodeId shift);
  NodeId upsample2x(NodeId x);
  NodeId avg_pool2x(NodeId x);
  // Per-sample horizontal flip / integer translation with zero fill. The
  // per-sample parameters are fixed attributes, differentiable w.r.t. x.
  NodeId hflip(NodeId x, std::vector<uint8_t> flip);
  NodeId translate2d(NodeId x, std::vector<int> off_y, std::vector<int> off_x);

  // Nonlinearities and reductions.
  NodeId leaky_relu(NodeId x, double slope);
  // Pointwise derivative of leaky_relu (1 for x > 0, slope otherwise),
  // treated as locally constant: its own derivative is zero.
  NodeId lrelu_mask(NodeId x, double slope);
  NodeId softplus(NodeId x);
  NodeId sigmoid(NodeId x);
  NodeId abs(NodeId x);
  NodeId square(NodeId x);
  NodeId sum(NodeId x);
  NodeId mean(NodeId x);
  NodeId sum_sq(NodeId x);

  NodeId reshape(NodeId x, Shape shape);
  NodeId concat_chan(NodeId a, NodeId b);
  NodeId slice_chan(NodeId x, int from, int to);
  // Spatial window [y0, y0+h) x [x0, x0+w), all channels.
  NodeId crop2d(NodeId x, int y0, int x0, int h, int w);

  void set_output(NodeId id);
  NodeId output() const { return output_; }

  void bind(const std::string& name, const Tensor& value);
  bool has_input(const std::string& name) const;

  // Forward pass; requires the output to be a scalar and every input bound.
  // Throws if any node produces a non-finite value.
  double evaluate();
  double evaluate(const std::map<std::string, Tensor>& inputs);

  // Gradients of the scalar output for all differentiable inputs (or the
  // given subset). Requires a prior evaluate() on the current bindings.
  std::map<std::string, Tensor> backprop();
  std::map<std::string, Tensor> backprop(const std::vector<std::string>& names);

  const Tensor& value(NodeId id) const;
  const Shape& shape(NodeId id) const;
  size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Op op;
    Shape shape;
    std::vector<NodeId> parents;
    std::string name;
    bool differentiable = false;
    double alpha = 0.0;  // scale factor, added scalar, or lrelu slope
    int stride = 1, pad = 0, in_h = 0, in_w = 0, from = 0, to = 0;
    std::vector<uint8_t> flip;
    std::vector<int> off_y, off_x;
    Tensor value;
    Tensor grad;
    bool bound = false;
    bool needs_grad = false;
  };

  NodeId add_node(Node node);
  NodeId check_id(NodeId id, const char* ctx) const;
  const Node& node(NodeId id) const { return nodes_[static_cast<size_t>(id)]; }
  Shape image_shape(NodeId id, const char* ctx) const;
  void forward_node(NodeId id);
  void backward_node(NodeId id);
  void run_backward();

  std::vector<Node> nodes_;
  std::map<std::string, NodeId> inputs_by_name_;
  NodeId output_ = -1;
  bool values_valid_ = false;
  bool grads_valid_ = false;
};

}  // namespace latentaug
