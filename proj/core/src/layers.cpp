#include "latentaug/layers.hpp"

#include <cmath>

#include "latentaug/error.hpp"

namespace latentaug {

NodeId ParamBinder::operator()(const std::string& name) {
  auto cached = cache_.find(name);
  if (cached != cache_.end()) return cached->second;
  auto it = params_->find(name);
  check(it != params_->end(), "param binder: no parameter named '", name, "'");
  NodeId id;
  if (trainable_) {
    id = graph_->input(name, it->second.shape(), /*differentiable=*/true);
    graph_->bind(name, it->second);
  } else {
    id = graph_->constant(it->second, name);
  }
  cache_[name] = id;
  return id;
}

LayerSpec LayerSpec::dense(std::string weight, std::string bias) {
  LayerSpec s;
  s.kind = Kind::kDense;
  s.weight = std::move(weight);
  s.bias = std::move(bias);
  return s;
}

LayerSpec LayerSpec::conv(std::string weight, std::string bias, int stride, int pad) {
  LayerSpec s;
  s.kind = Kind::kConv;
  s.weight = std::move(weight);
  s.bias = std::move(bias);
  s.stride = stride;
  s.pad = pad;
  return s;
}

LayerSpec LayerSpec::leaky_relu(double slope) {
  LayerSpec s;
  s.kind = Kind::kLeakyRelu;
  s.slope = slope;
  return s;
}

LayerSpec LayerSpec::flatten() {
  LayerSpec s;
  s.kind = Kind::kFlatten;
  return s;
}

NodeId layer_forward(Graph& graph, const LayerSpec& spec, NodeId input, ParamBinder& bind) {
  switch (spec.kind) {
    case LayerSpec::Kind::kDense: {
      NodeId y = graph.matmul(input, bind(spec.weight));
      if (!spec.bias.empty()) y = graph.add_row_vec(y, bind(spec.bias));
      return y;
    }
    case LayerSpec::Kind::kConv: {
      NodeId y = graph.conv2d(input, bind(spec.weight), spec.stride, spec.pad);
      if (!spec.bias.empty()) y = graph.bias_chan(y, bind(spec.bias));
      return y;
    }
    case LayerSpec::Kind::kLeakyRelu:
      return graph.leaky_relu(input, spec.slope);
    case LayerSpec::Kind::kFlatten: {
      const Shape& s = graph.shape(input);
      check(s.size() >= 2, "flatten: expected at least rank 2, got ", shape_str(s));
      int64_t rest = 1;
      for (size_t i = 1; i < s.size(); ++i) rest *= s[i];
      return graph.reshape(input, {s[0], static_cast<int>(rest)});
    }
  }
  fail("layer_forward: unhandled layer kind");
}

StackTrace stack_forward(Graph& graph, const std::vector<LayerSpec>& stack, NodeId input,
                         ParamBinder& bind) {
  StackTrace trace;
  NodeId x = input;
  for (const auto& spec : stack) {
    StackTrace::Step step;
    step.spec = spec;
    step.in = x;
    if (!spec.weight.empty()) step.weight = bind(spec.weight);
    step.out = layer_forward(graph, spec, x, bind);
    x = step.out;
    trace.steps.push_back(step);
  }
  trace.out = x;
  return trace;
}

NodeId stack_input_gradient(Graph& graph, const StackTrace& trace, NodeId seed) {
  NodeId g = seed;
  for (auto it = trace.steps.rbegin(); it != trace.steps.rend(); ++it) {
    const auto& step = *it;
    switch (step.spec.kind) {
      case LayerSpec::Kind::kDense:
        g = graph.matmul(g, graph.transpose(step.weight));
        break;
      case LayerSpec::Kind::kConv: {
        const Shape& in_shape = graph.shape(step.in);
        g = graph.conv2d_vjp_input(g, step.weight, step.spec.stride, step.spec.pad, in_shape[2],
                                   in_shape[3]);
        break;
      }
      case LayerSpec::Kind::kLeakyRelu:
        g = graph.mul(g, graph.lrelu_mask(step.in, step.spec.slope));
        break;
      case LayerSpec::Kind::kFlatten:
        g = graph.reshape(g, graph.shape(step.in));
        break;
    }
  }
  return g;
}

Tensor he_normal(Shape shape, Rng& rng) {
  check(!shape.empty(), "he_normal: scalar shapes not supported");
  int64_t fan_in;
  if (shape.size() == 2) {
    fan_in = shape[0];  // dense [in,out]
  } else if (shape.size() == 4) {
    fan_in = static_cast<int64_t>(shape[1]) * shape[2] * shape[3];  // conv [Co,Ci,kh,kw]
  } else {
    fan_in = shape[0];
  }
  return normal_init(std::move(shape), std::sqrt(2.0 / static_cast<double>(fan_in)), rng);
}

Tensor normal_init(Shape shape, double stddev, Rng& rng) {
  Tensor t{std::move(shape)};
  for (int64_t i = 0; i < t.numel(); ++i) t[i] = stddev * rng.normal();
  return t;
}

}  // namespace latentaug
