#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "gatelab/gates.hpp"

using namespace gatelab;

namespace {
constexpr double kL = -0.1, kR = 1.1;
}

TEST_CASE("sample gate hand values and clamping") {
  // u = 0.5 makes logit(u) vanish: z = clamp(sigmoid(alpha)*1.2 - 0.1, 0, 1)
  // alpha = 1: sigmoid(1) = 0.731058578..., z = 0.777270294...
  double z = gates::sample_gate(1.0, 0.5, kL, kR);
  CHECK(z == doctest::Approx(0.7310585786300049 * 1.2 - 0.1).epsilon(1e-12));
  // alpha = 0.3 with u = 0.3: g = sigmoid(log(0.3/0.7) + 0.3)
  double g = 1.0 / (1.0 + std::exp(-(std::log(0.3 / 0.7) + 0.3)));
  CHECK(gates::sample_gate(0.3, 0.3, kL, kR) ==
        doctest::Approx(std::clamp(g * (kR - kL) + kL, 0.0, 1.0)).epsilon(1e-12));
  // extreme alphas clamp exactly
  CHECK(gates::sample_gate(20.0, 0.5, kL, kR) == 1.0);
  CHECK(gates::sample_gate(-20.0, 0.5, kL, kR) == 0.0);
  CHECK_THROWS(gates::sample_gate(0.0, 0.0, kL, kR));
  CHECK_THROWS(gates::sample_gate(0.0, 1.0, kL, kR));
}

TEST_CASE("expected gate hand value at alpha = 0") {
  // sigmoid(-log(-l/r)) = 1/(1 + 0.1/1.1) = 11/12
  CHECK(gates::expected_gate(0.0, kL, kR) == doctest::Approx(11.0 / 12.0).epsilon(1e-9));
  // monotone in alpha
  CHECK(gates::expected_gate(1.0, kL, kR) > gates::expected_gate(0.0, kL, kR));
  CHECK(gates::expected_gate(-1.0, kL, kR) < gates::expected_gate(0.0, kL, kR));
}

TEST_CASE("l0 penalty sums expected gates") {
  GateParams gp(4, 36, 0.0, kL, kR);  // 144 heads at alpha = 0
  CHECK(gates::l0_penalty(gp) == doctest::Approx(144.0 * 11.0 / 12.0).epsilon(1e-9));
  CHECK(gates::l0_penalty(gp) == doctest::Approx(132.0).epsilon(1e-9));
}

TEST_CASE("thresholds bound the eval gate") {
  double lo = gates::prune_threshold(kL, kR);
  double hi = gates::saturate_threshold(kL, kR);
  // eval gate hits 0 when sigmoid(alpha)*(r-l) + l <= 0, i.e. alpha <= logit(-l/(r-l))
  CHECK(lo == doctest::Approx(std::log((1.0 / 12.0) / (11.0 / 12.0))).epsilon(1e-12));
  CHECK(gates::eval_gate(lo, kL, kR) == 0.0);
  CHECK(gates::eval_gate(lo + 1e-6, kL, kR) > 0.0);
  CHECK(gates::eval_gate(hi, kL, kR) == 1.0);
  CHECK(gates::eval_gate(hi - 1e-6, kL, kR) < 1.0);
}

TEST_CASE("expected gate equals the Monte Carlo keep probability") {
  Rng rng(5);
  for (double alpha : {-2.0, 0.0, 1.5}) {
    int kept = 0;
    const int n = 200000;
    for (int i = 0; i < n; ++i)
      if (gates::sample_gate(alpha, rng.open01(), kL, kR) > 0.0) ++kept;
    CHECK(static_cast<double>(kept) / n ==
          doctest::Approx(gates::expected_gate(alpha, kL, kR)).epsilon(0.01));
  }
}

TEST_CASE("graph forms match the value forms and differentiate") {
  GateParams gp(2, 3, 0.0, kL, kR);
  gp.alpha.at(0, 1) = 1.0;
  gp.alpha.at(1, 2) = -2.0;
  Graph g;
  NodeId a = g.input(gp.alpha, true);
  NodeId l0 = gates::l0_penalty_node(g, a, kL, kR);
  CHECK(g.value(l0).data[0] == doctest::Approx(gates::l0_penalty(gp)).epsilon(1e-12));
  g.backward(l0);
  for (int i = 0; i < gp.alpha.size(); ++i) {
    double fd = central_diff(
        [&](double x) {
          GateParams gp2 = gp;
          gp2.alpha.data[i] = x;
          return gates::l0_penalty(gp2);
        },
        gp.alpha.data[i]);
    CHECK(g.gradient(a).data[i] == doctest::Approx(fd).epsilon(1e-5));
  }

  Tensor u = Tensor::full({2, 3}, 0.37);
  Graph g2;
  NodeId a2 = g2.input(gp.alpha, true);
  NodeId z = gates::sample_gate_node(g2, a2, u, kL, kR);
  for (int i = 0; i < gp.alpha.size(); ++i)
    CHECK(g2.value(z).data[i] ==
          doctest::Approx(gates::sample_gate(gp.alpha.data[i], 0.37, kL, kR)).epsilon(1e-12));
}

TEST_CASE("gate params validation") {
  CHECK_THROWS(GateParams(2, 2, 0.0, 0.1, 1.1).validate());
  CHECK_THROWS(GateParams(2, 2, 0.0, -0.1, 0.9).validate());
  GateParams ok(2, 2);
  ok.validate();
}
