#pragma once

#include "gatelab/graph.hpp"
#include "gatelab/tensor.hpp"

namespace gatelab {

// Hard Concrete stochastic gates over the (layers x heads) grid.
//
// Sampling:   g = sigmoid(logit(u) + alpha),  z = clamp(g*(r-l) + l, 0, 1)
// Expected:   E[z] = sigmoid(alpha - log(-l/r))   (= P(z > 0))
// Eval:       the u = 0.5 sample; a head is "kept" iff eval value > 0.
struct GateParams {
  Tensor alpha;      // [layers, heads]
  double l = -0.1;   // stretch lower bound, < 0
  double r = 1.1;    // stretch upper bound, > 1

  GateParams() = default;
  GateParams(int layers, int heads, double init_alpha = 2.0, double l_ = -0.1, double r_ = 1.1);

  int layers() const { return alpha.rows(); }
  int heads() const { return alpha.cols(); }
  void validate() const;  // l < 0 < 1 < r, alpha finite
};

namespace gates {

// Plain-value forms (analysis, eval paths).
double sample_gate(double alpha, double u, double l, double r);  // u in (0,1), error otherwise
double expected_gate(double alpha, double l, double r);
double eval_gate(double alpha, double l, double r);
double l0_penalty(const GateParams& gp);  // sum of expected_gate over all heads

// alpha value below/above which the eval gate clamps to exactly 0 / 1.
double prune_threshold(double l, double r);
double saturate_threshold(double l, double r);

// Graph forms (differentiable w.r.t. the alpha node).
// alpha_node: any shape; u must match elementwise.
NodeId sample_gate_node(Graph& g, NodeId alpha_node, const Tensor& u, double l, double r);
NodeId expected_gate_node(Graph& g, NodeId alpha_node, double l, double r);
NodeId l0_penalty_node(Graph& g, NodeId alpha_node, double l, double r);  // scalar

}  // namespace gates

}  // namespace gatelab
