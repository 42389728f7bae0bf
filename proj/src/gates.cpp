#include "gatelab/gates.hpp"

#include <cmath>
#include <stdexcept>

namespace gatelab {

GateParams::GateParams(int layers, int heads, double init_alpha, double l_, double r_) {
  alpha = Tensor::full({layers, heads}, init_alpha);
  l = l_;
  r = r_;
  validate();
}

void GateParams::validate() const {
  if (!(l < 0.0) || !(r > 1.0)) throw std::runtime_error("gates: require l < 0 < 1 < r");
  for (double a : alpha.data)
    if (!std::isfinite(a)) throw std::runtime_error("gates: non-finite alpha");
}

namespace gates {

double sample_gate(double alpha, double u, double l, double r) {
  if (!(u > 0.0 && u < 1.0)) throw std::runtime_error("gates: u must lie strictly in (0,1)");
  double g = 1.0 / (1.0 + std::exp(-(std::log(u) - std::log(1.0 - u) + alpha)));
  return std::min(1.0, std::max(0.0, g * (r - l) + l));
}

double expected_gate(double alpha, double l, double r) {
  return 1.0 / (1.0 + std::exp(-(alpha - std::log(-l / r))));
}

double eval_gate(double alpha, double l, double r) {
  double g = 1.0 / (1.0 + std::exp(-alpha));
  return std::min(1.0, std::max(0.0, g * (r - l) + l));
}

double l0_penalty(const GateParams& gp) {
  double s = 0.0;
  for (double a : gp.alpha.data) s += expected_gate(a, gp.l, gp.r);
  return s;
}

double prune_threshold(double l, double r) {
  // eval gate hits 0 when sigmoid(alpha) * (r-l) + l <= 0
  double p = -l / (r - l);
  return std::log(p / (1.0 - p));
}

double saturate_threshold(double l, double r) {
  double p = (1.0 - l) / (r - l);
  return std::log(p / (1.0 - p));
}

NodeId sample_gate_node(Graph& g, NodeId alpha_node, const Tensor& u, double l, double r) {
  if (!g.value(alpha_node).same_shape(u))
    throw std::runtime_error("gates: u shape mismatch");
  Tensor lu = u;
  for (double& x : lu.data) {
    if (!(x > 0.0 && x < 1.0)) throw std::runtime_error("gates: u must lie strictly in (0,1)");
    x = std::log(x) - std::log(1.0 - x);
  }
  NodeId shifted = g.add(alpha_node, g.input(std::move(lu)));
  NodeId s = g.sigmoid(shifted);
  NodeId stretched = g.add_const(g.scale(s, r - l), l);
  return g.clamp(stretched, 0.0, 1.0);
}

NodeId expected_gate_node(Graph& g, NodeId alpha_node, double l, double r) {
  return g.sigmoid(g.add_const(alpha_node, -std::log(-l / r)));
}

NodeId l0_penalty_node(Graph& g, NodeId alpha_node, double l, double r) {
  return g.sum(expected_gate_node(g, alpha_node, l, r));
}

}  // namespace gates
}  // namespace gatelab
