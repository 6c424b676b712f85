#pragma once

#include <map>
#include <string>
#include <vector>

#include "latentaug/graph.hpp"
#include "latentaug/rng.hpp"
#include "latentaug/tensor.hpp"

namespace latentaug {

// Binds named parameters into a graph, either as differentiable inputs
// (training: the trainer rebinds values every iteration and reads their
// gradients back by name) or as baked constants (frozen forward passes).
// Each name is materialized once per graph.
class ParamBinder {
 public:
  ParamBinder(Graph& graph, const std::map<std::string, Tensor>& params, bool trainable)
      : graph_(&graph), params_(&params), trainable_(trainable) {}

  NodeId operator()(const std::string& name);

  bool trainable() const { return trainable_; }

 private:
  Graph* graph_;
  const std::map<std::string, Tensor>* params_;
  bool trainable_;
  std::map<std::string, NodeId> cache_;
};

// One step of a sequential network. Dense expects [N,in] and weights
// [in,out]; Conv expects [N,C,H,W] and filters [Co,Ci,kh,kw].
struct LayerSpec {
  enum class Kind { kDense, kConv, kLeakyRelu, kFlatten };

  Kind kind = Kind::kDense;
  std::string weight;
  std::string bias;  // empty = no bias
  int stride = 1;
  int pad = 0;
  double slope = 0.2;

  static LayerSpec dense(std::string weight, std::string bias = "");
  static LayerSpec conv(std::string weight, std::string bias, int stride, int pad);
  static LayerSpec leaky_relu(double slope = 0.2);
  static LayerSpec flatten();
};

NodeId layer_forward(Graph& graph, const LayerSpec& spec, NodeId input, ParamBinder& bind);

// Record of a stack application; keeps the node ids needed to replay the
// chain in reverse.
struct StackTrace {
  struct Step {
    LayerSpec spec;
    NodeId in = -1;
    NodeId out = -1;
    NodeId weight = -1;
  };
  std::vector<Step> steps;
  NodeId out = -1;
};

StackTrace stack_forward(Graph& graph, const std::vector<LayerSpec>& stack, NodeId input,
                         ParamBinder& bind);

// Gradient of <seed, stack output> with respect to the stack input, built
// from first-class graph ops so it can itself be differentiated. This is
// what makes gradient-penalty losses exact rather than approximated: the
// activation derivative enters as a locally-constant mask and every linear
// piece uses its true adjoint.
NodeId stack_input_gradient(Graph& graph, const StackTrace& trace, NodeId seed);

// Initializers.
Tensor he_normal(Shape shape, Rng& rng);
Tensor normal_init(Shape shape, double stddev, Rng& rng);

}  // namespace latentaug
