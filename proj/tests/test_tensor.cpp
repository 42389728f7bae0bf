#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cstdio>
#include <fstream>

#include "gatelab/graph.hpp"
#include "gatelab/kernels.hpp"

using namespace gatelab;

namespace {

// Finite-difference check of d(loss)/d(inputs[k]) for every coordinate.
// build() must construct the loss from freshly bound inputs each call.
void check_grads(std::vector<Tensor> inputs,
                 const std::function<NodeId(Graph&, const std::vector<NodeId>&)>& build,
                 double tol = 1e-4) {
  Graph g;
  std::vector<NodeId> ids;
  for (const Tensor& t : inputs) ids.push_back(g.input(t, true));
  NodeId loss = build(g, ids);
  g.backward(loss);
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    const Tensor& grad = g.gradient(ids[k]);
    REQUIRE(grad.size() == inputs[k].size());
    for (int i = 0; i < inputs[k].size(); ++i) {
      double fd = central_diff(
          [&](double x) {
            std::vector<Tensor> in2 = inputs;
            in2[k].data[i] = x;
            Graph g2;
            std::vector<NodeId> ids2;
            for (const Tensor& t : in2) ids2.push_back(g2.input(t, true));
            return g2.value(build(g2, ids2)).data[0];
          },
          inputs[k].data[i]);
      CHECK(std::fabs(grad.data[i] - fd) <= tol * std::max(1.0, std::fabs(fd)));
    }
  }
}

Tensor rand_t(std::vector<int> s, Rng& rng, double sigma = 1.0) {
  return Tensor::randn(std::move(s), sigma, rng);
}

}  // namespace

TEST_CASE("tensor basics") {
  Tensor z = Tensor::zeros({2, 3});
  CHECK(z.rows() == 2);
  CHECK(z.cols() == 3);
  CHECK(z.size() == 6);
  Tensor f = Tensor::full({2, 2}, 1.5);
  CHECK(f.at(1, 1) == 1.5);
  CHECK(Tensor::scalar(3.0).is_scalar());
  CHECK_THROWS(Tensor::zeros({0, 2}));
  CHECK_THROWS(Tensor({2, 2}, {1.0, 2.0}));
}

TEST_CASE("matmul reference matches hand computation") {
  // [[1,2],[3,4]] * [[5,6],[7,8]] = [[19,22],[43,50]]
  double a[] = {1, 2, 3, 4}, b[] = {5, 6, 7, 8}, c[4];
  kernels::matmul_ref(a, b, c, 2, 2, 2);
  CHECK(c[0] == 19);
  CHECK(c[1] == 22);
  CHECK(c[2] == 43);
  CHECK(c[3] == 50);
}

TEST_CASE("openmp matmul is bit-identical to the serial reference") {
  Rng rng(7);
  for (auto [n, k, m] : {std::tuple{3, 5, 4}, {17, 9, 13}, {64, 32, 48}, {1, 7, 1}}) {
    Tensor a = rand_t({n, k}, rng), b = rand_t({k, m}, rng);
    std::vector<double> c1(static_cast<std::size_t>(n) * m), c2(c1.size());
    kernels::matmul_ref(a.data.data(), b.data.data(), c1.data(), n, k, m);
    kernels::matmul_omp(a.data.data(), b.data.data(), c2.data(), n, k, m);
    CHECK(std::memcmp(c1.data(), c2.data(), c1.size() * sizeof(double)) == 0);
    // accumulate variant: c += a*b twice equals 2x the product
    std::vector<double> c3(c1.size(), 0.0);
    kernels::matmul_acc_omp(a.data.data(), b.data.data(), c3.data(), n, k, m);
    kernels::matmul_acc_omp(a.data.data(), b.data.data(), c3.data(), n, k, m);
    for (std::size_t i = 0; i < c1.size(); ++i) CHECK(c3[i] == doctest::Approx(2 * c1[i]));
  }
}

TEST_CASE("graph forward hand values") {
  Graph g;
  NodeId x = g.input(Tensor({1, 2}, {0.0, 1.0}));
  CHECK(g.value(g.sigmoid(x)).data[0] == 0.5);
  CHECK(g.value(g.gelu(x)).data[0] == 0.0);
  // gelu(1) = 0.5 * (1 + erf(1/sqrt(2))) = Phi(1) = 0.841344746...
  CHECK(g.value(g.gelu(x)).data[1] == doctest::Approx(0.8413447460685429).epsilon(1e-12));
  NodeId sm = g.softmax_rows(g.input(Tensor({2, 3}, {1, 2, 3, -1, -1, -1})));
  const Tensor& s = g.value(sm);
  CHECK(s.at(0, 0) + s.at(0, 1) + s.at(0, 2) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(s.at(1, 0) == doctest::Approx(1.0 / 3).epsilon(1e-12));
  // cross entropy of a uniform 2-way distribution is log 2
  NodeId ce = g.cross_entropy_mean(g.input(Tensor({1, 2}, {0.0, 0.0})), {0});
  CHECK(g.value(ce).data[0] == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  CHECK_THROWS(g.log_(g.input(Tensor({1, 1}, {-1.0}))));
}

TEST_CASE("gradients match central differences per primitive") {
  Rng rng(11);
  check_grads({rand_t({2, 3}, rng), rand_t({3, 2}, rng)},
              [](Graph& g, const std::vector<NodeId>& in) {
                return g.sum(g.matmul(in[0], in[1]));
              });
  check_grads({rand_t({2, 3}, rng)}, [](Graph& g, const std::vector<NodeId>& in) {
    return g.sum(g.mul(g.transpose(in[0]), g.transpose(in[0])));
  });
  check_grads({rand_t({2, 3}, rng), rand_t({2, 3}, rng)},
              [](Graph& g, const std::vector<NodeId>& in) {
                return g.sum(g.mul(g.add(in[0], in[1]), g.sub(in[0], in[1])));
              });
  // broadcast add of a row vector
  check_grads({rand_t({3, 2}, rng), rand_t({1, 2}, rng)},
              [](Graph& g, const std::vector<NodeId>& in) {
                return g.sum(g.sigmoid(g.add(in[0], in[1])));
              });
  check_grads({rand_t({2, 2}, rng)}, [](Graph& g, const std::vector<NodeId>& in) {
    return g.mean(g.add_const(g.scale(in[0], 1.7), 0.3));
  });
  check_grads({rand_t({2, 2}, rng), Tensor::scalar(0.8)},
              [](Graph& g, const std::vector<NodeId>& in) {
                return g.sum(g.scale_by(in[0], in[1]));
              });
  check_grads({rand_t({2, 2}, rng), rand_t({2, 3}, rng)},
              [](Graph& g, const std::vector<NodeId>& in) {
                return g.sum(g.tanh_(g.concat_cols(in[0], in[1])));
              });
  check_grads({rand_t({4, 3}, rng)}, [](Graph& g, const std::vector<NodeId>& in) {
    NodeId a = g.row(in[0], 2);
    NodeId b = g.rows(in[0], {0, 2, 2});
    NodeId c = g.slice_rows(in[0], 1, 3);
    NodeId d = g.mean_rows(in[0], 0, 4);
    return g.add(g.add(g.sum(a), g.sum(b)), g.add(g.sum(c), g.sum(d)));
  });
  check_grads({rand_t({1, 3}, rng), rand_t({1, 3}, rng)},
              [](Graph& g, const std::vector<NodeId>& in) {
                return g.sum(g.gelu(g.stack_rows({in[0], in[1], in[0]})));
              });
  check_grads({rand_t({1, 4}, rng)}, [](Graph& g, const std::vector<NodeId>& in) {
    return g.at(g.softmax_rows(in[0]), 0, 2);
  });
  check_grads({rand_t({2, 4}, rng)}, [](Graph& g, const std::vector<NodeId>& in) {
    return g.sum(g.mul(g.softmax_rows(in[0]), in[0]));
  });
  check_grads({Tensor({1, 3}, {0.5, 1.5, 2.5})},
              [](Graph& g, const std::vector<NodeId>& in) {
                return g.sum(g.log_(in[0]));
              });
  check_grads({Tensor({1, 4}, {-0.5, 0.3, 0.7, 1.5})},
              [](Graph& g, const std::vector<NodeId>& in) {
                return g.sum(g.mul(g.clamp(in[0], 0.0, 1.0), in[0]));
              });
  check_grads({rand_t({3, 4}, rng), rand_t({1, 4}, rng), rand_t({1, 4}, rng)},
              [](Graph& g, const std::vector<NodeId>& in) {
                return g.sum(g.mul(g.layer_norm(in[0], in[1], in[2]), in[0]));
              },
              5e-4);
  check_grads({rand_t({5, 3}, rng)}, [](Graph& g, const std::vector<NodeId>& in) {
    return g.sum(g.sigmoid(g.embedding(in[0], {1, 4, 1, 0})));
  });
  check_grads({rand_t({3, 4}, rng)}, [](Graph& g, const std::vector<NodeId>& in) {
    return g.cross_entropy_mean(in[0], {2, 0, 3});
  });
  check_grads({rand_t({2, 2}, rng)}, [](Graph& g, const std::vector<NodeId>& in) {
    return g.bce_logits_mean(in[0], {1.0, 0.0, 0.0, 1.0});
  });
}

TEST_CASE("clamp subgradient is zero at and outside the boundary") {
  Graph g;
  NodeId x = g.input(Tensor({1, 3}, {-0.2, 0.0, 1.3}), true);
  g.backward(g.sum(g.clamp(x, 0.0, 1.0)));
  const Tensor& gr = g.gradient(x);
  CHECK(gr.data[0] == 0.0);
  CHECK(gr.data[1] == 0.0);
  CHECK(gr.data[2] == 0.0);
}

TEST_CASE("shared subexpressions accumulate gradients") {
  Graph g;
  NodeId x = g.input(Tensor::scalar(3.0), true);
  NodeId y = g.add(g.mul(x, x), x);  // x^2 + x, dy/dx = 2x + 1 = 7
  g.backward(y);
  CHECK(g.gradient(x).data[0] == doctest::Approx(7.0).epsilon(1e-12));
}

TEST_CASE("adam first step and frozen groups") {
  ParamStore ps;
  int a = ps.add("a", Tensor({1, 2}, {1.0, 1.0}));
  int b = ps.add("b", Tensor({1, 1}, {5.0}));
  Adam opt;
  opt.init(ps);
  std::vector<Tensor> grads = {Tensor({1, 2}, {0.1, -0.2}), Tensor({1, 1}, {3.0})};
  opt.step(ps, grads, {1e-3, -1.0});
  // first step: delta = -lr * g / (|g| + eps)
  CHECK(ps[a].data[0] == doctest::Approx(1.0 - 1e-3 * 0.1 / (0.1 + 1e-8)).epsilon(1e-12));
  CHECK(ps[a].data[1] == doctest::Approx(1.0 + 1e-3 * 0.2 / (0.2 + 1e-8)).epsilon(1e-12));
  // frozen group entirely untouched, moments included
  CHECK(ps[b].data[0] == 5.0);
  CHECK(opt.m[b].data[0] == 0.0);
  CHECK(opt.v[b].data[0] == 0.0);
  // lr_scale halves the step
  ParamStore ps2;
  ps2.add("a", Tensor({1, 1}, {0.0}));
  Adam opt2;
  opt2.init(ps2);
  opt2.step(ps2, {Tensor({1, 1}, {1.0})}, {1e-3}, 0.5);
  CHECK(ps2[0].data[0] == doctest::Approx(-0.5e-3).epsilon(1e-6));
}

TEST_CASE("checkpoint roundtrip is byte-identical") {
  Rng rng(3);
  ParamStore ps;
  ps.add("w1", rand_t({3, 4}, rng));
  ps.add("w2", rand_t({2, 2}, rng));
  std::string s1 = "/tmp/gl_ck_a", s2 = "/tmp/gl_ck_b";
  save_checkpoint(s1, ps, 42, 7);
  save_checkpoint(s2, ps, 42, 7);
  for (const char* ext : {".json", ".bin"}) {
    std::ifstream f1(s1 + ext, std::ios::binary), f2(s2 + ext, std::ios::binary);
    std::string b1((std::istreambuf_iterator<char>(f1)), {});
    std::string b2((std::istreambuf_iterator<char>(f2)), {});
    CHECK(b1 == b2);
    CHECK(!b1.empty());
  }
  Checkpoint ck = load_checkpoint(s1);
  CHECK(ck.seed == 42);
  CHECK(ck.step == 7);
  REQUIRE(ck.params.count() == 2);
  CHECK(ck.params.names[0] == "w1");
  CHECK(ck.params[0].data == ps[0].data);
  CHECK(ck.params[1].data == ps[1].data);
}

TEST_CASE("rng substreams are deterministic and distinct") {
  Rng a = Rng::substream(9, "data");
  Rng b = Rng::substream(9, "data");
  Rng c = Rng::substream(9, "gates");
  CHECK(a.next_u64() == b.next_u64());
  CHECK(a.next_u64() != c.next_u64());
  Rng d(1);
  for (int i = 0; i < 1000; ++i) {
    double u = d.open01();
    CHECK(u > 0.0);
    CHECK(u < 1.0);
  }
}
