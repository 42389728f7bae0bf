#include "gatelab/graph.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "gatelab/kernels.hpp"
#include "json.hpp"

namespace gatelab {

NodeId Graph::push(Tensor val, bool rg_, std::function<void(Graph&)> back) {
  Node n;
  n.val = std::move(val);
  n.requires_grad = rg_;
  n.back = std::move(back);
  nodes_.push_back(std::move(n));
  return static_cast<NodeId>(nodes_.size()) - 1;
}

void Graph::ensure_grad(NodeId id) {
  Node& n = nodes_[id];
  if (n.grad.data.empty()) n.grad = Tensor::zeros(n.val.shape);
}

NodeId Graph::input(Tensor t, bool requires_grad) {
  NodeId id = push(std::move(t), requires_grad, {});
  if (requires_grad) ensure_grad(id);
  return id;
}

NodeId Graph::matmul(NodeId a, NodeId b) {
  const Tensor& A = value(a);
  const Tensor& B = value(b);
  if (A.cols() != B.rows()) throw std::runtime_error("matmul: inner dimensions differ");
  int n = A.rows(), k = A.cols(), m = B.cols();
  Tensor C = Tensor::zeros({n, m});
  kernels::matmul_omp(A.data.data(), B.data.data(), C.data.data(), n, k, m);
  bool g = rg(a) || rg(b);
  NodeId out = push(std::move(C), g, {});
  if (!g) return out;
  nodes_[out].back = [this, a, b, out, n, k, m](Graph&) {
    const Tensor& gc = nodes_[out].grad;
    const Tensor& A2 = value(a);
    const Tensor& B2 = value(b);
    if (rg(a)) {
      ensure_grad(a);
      // dA += gC * B^T
      Tensor bt = Tensor::zeros({m, k});
      for (int i = 0; i < k; ++i)
        for (int j = 0; j < m; ++j) bt.at(j, i) = B2.at(i, j);
      kernels::matmul_acc_omp(gc.data.data(), bt.data.data(), grad_ref(a).data.data(), n, m, k);
    }
    if (rg(b)) {
      ensure_grad(b);
      // dB += A^T * gC
      Tensor at_ = Tensor::zeros({k, n});
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < k; ++j) at_.at(j, i) = A2.at(i, j);
      kernels::matmul_acc_omp(at_.data.data(), gc.data.data(), grad_ref(b).data.data(), k, n, m);
    }
  };
  ensure_grad(out);
  return out;
}

NodeId Graph::transpose(NodeId a) {
  const Tensor& A = value(a);
  int n = A.rows(), m = A.cols();
  Tensor T = Tensor::zeros({m, n});
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < m; ++j) T.at(j, i) = A.at(i, j);
  bool g = rg(a);
  NodeId out = push(std::move(T), g, {});
  if (g) {
    nodes_[out].back = [this, a, out, n, m](Graph&) {
      ensure_grad(a);
      const Tensor& go = nodes_[out].grad;
      Tensor& ga = grad_ref(a);
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < m; ++j) ga.at(i, j) += go.at(j, i);
    };
    ensure_grad(out);
  }
  return out;
}

NodeId Graph::add(NodeId a, NodeId b) {
  const Tensor& A = value(a);
  const Tensor& B = value(b);
  bool broadcast = false;
  if (!A.same_shape(B)) {
    if (B.rows() == 1 && B.cols() == A.cols() && A.shape.size() == 2)
      broadcast = true;
    else
      throw std::runtime_error("add: shape mismatch");
  }
  Tensor C = A;
  if (broadcast) {
    for (int i = 0; i < A.rows(); ++i)
      for (int j = 0; j < A.cols(); ++j) C.at(i, j) += B.at(0, j);
  } else {
    for (std::size_t i = 0; i < C.data.size(); ++i) C.data[i] += B.data[i];
  }
  bool g = rg(a) || rg(b);
  NodeId out = push(std::move(C), g, {});
  if (g) {
    int rowsA = A.rows(), colsA = A.cols();
    nodes_[out].back = [this, a, b, out, broadcast, rowsA, colsA](Graph&) {
      const Tensor& go = nodes_[out].grad;
      if (rg(a)) {
        ensure_grad(a);
        Tensor& ga = grad_ref(a);
        for (std::size_t i = 0; i < go.data.size(); ++i) ga.data[i] += go.data[i];
      }
      if (rg(b)) {
        ensure_grad(b);
        Tensor& gb = grad_ref(b);
        if (broadcast) {
          for (int i = 0; i < rowsA; ++i)
            for (int j = 0; j < colsA; ++j) gb.at(0, j) += go.at(i, j);
        } else {
          for (std::size_t i = 0; i < go.data.size(); ++i) gb.data[i] += go.data[i];
        }
      }
    };
    ensure_grad(out);
  }
  return out;
}

NodeId Graph::sub(NodeId a, NodeId b) { return add(a, scale(b, -1.0)); }

NodeId Graph::mul(NodeId a, NodeId b) {
  const Tensor& A = value(a);
  const Tensor& B = value(b);
  if (!A.same_shape(B)) throw std::runtime_error("mul: shape mismatch");
  Tensor C = A;
  for (std::size_t i = 0; i < C.data.size(); ++i) C.data[i] *= B.data[i];
  bool g = rg(a) || rg(b);
  NodeId out = push(std::move(C), g, {});
  if (g) {
    nodes_[out].back = [this, a, b, out](Graph&) {
      const Tensor& go = nodes_[out].grad;
      if (rg(a)) {
        ensure_grad(a);
        Tensor& ga = grad_ref(a);
        const Tensor& B2 = value(b);
        for (std::size_t i = 0; i < go.data.size(); ++i) ga.data[i] += go.data[i] * B2.data[i];
      }
      if (rg(b)) {
        ensure_grad(b);
        Tensor& gb = grad_ref(b);
        const Tensor& A2 = value(a);
        for (std::size_t i = 0; i < go.data.size(); ++i) gb.data[i] += go.data[i] * A2.data[i];
      }
    };
    ensure_grad(out);
  }
  return out;
}

NodeId Graph::scale(NodeId a, double c) {
  Tensor C = value(a);
  for (double& x : C.data) x *= c;
  bool g = rg(a);
  NodeId out = push(std::move(C), g, {});
  if (g) {
    nodes_[out].back = [this, a, out, c](Graph&) {
      ensure_grad(a);
      const Tensor& go = nodes_[out].grad;
      Tensor& ga = grad_ref(a);
      for (std::size_t i = 0; i < go.data.size(); ++i) ga.data[i] += c * go.data[i];
    };
    ensure_grad(out);
  }
  return out;
}

NodeId Graph::add_const(NodeId a, double c) {
  Tensor C = value(a);
  for (double& x : C.data) x += c;
  bool g = rg(a);
  NodeId out = push(std::move(C), g, {});
  if (g) {
    nodes_[out].back = [this, a, out](Graph&) {
      ensure_grad(a);
      const Tensor& go = nodes_[out].grad;
      Tensor& ga = grad_ref(a);
      for (std::size_t i = 0; i < go.data.size(); ++i) ga.data[i] += go.data[i];
    };
    ensure_grad(out);
  }
  return out;
}

NodeId Graph::scale_by(NodeId a, NodeId s) {
  const Tensor& S = value(s);
  if (!S.is_scalar()) throw std::runtime_error("scale_by: scalar node expected");
  double sv = S.data[0];
  Tensor C = value(a);
  for (double& x : C.data) x *= sv;
  bool g = rg(a) || rg(s);
  NodeId out = push(std::move(C), g, {});
  if (g) {
    nodes_[out].back = [this, a, s, out, sv](Graph&) {
      const Tensor& go = nodes_[out].grad;
      if (rg(a)) {
        ensure_grad(a);
        Tensor& ga = grad_ref(a);
        for (std::size_t i = 0; i < go.data.size(); ++i) ga.data[i] += sv * go.data[i];
      }
      if (rg(s)) {
        ensure_grad(s);
        const Tensor& A2 = value(a);
        double acc = 0.0;
        for (std::size_t i = 0; i < go.data.size(); ++i) acc += go.data[i] * A2.data[i];
        grad_ref(s).data[0] += acc;
      }
    };
    ensure_grad(out);
  }
  return out;
}

NodeId Graph::concat_cols(NodeId a, NodeId b) {
  const Tensor& A = value(a);
  const Tensor& B = value(b);
  if (A.rows() != B.rows()) throw std::runtime_error("concat_cols: row counts differ");
  int n = A.rows(), ca = A.cols(), cb = B.cols();
  Tensor C = Tensor::zeros({n, ca + cb});
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < ca; ++j) C.at(i, j) = A.at(i, j);
    for (int j = 0; j < cb; ++j) C.at(i, ca + j) = B.at(i, j);
  }
  bool g = rg(a) || rg(b);
  NodeId out = push(std::move(C), g, {});
  if (g) {
    nodes_[out].back = [this, a, b, out, n, ca, cb](Graph&) {
      const Tensor& go = nodes_[out].grad;
      if (rg(a)) {
        ensure_grad(a);
        Tensor& ga = grad_ref(a);
        for (int i = 0; i < n; ++i)
          for (int j = 0; j < ca; ++j) ga.at(i, j) += go.at(i, j);
      }
      if (rg(b)) {
        ensure_grad(b);
        Tensor& gb = grad_ref(b);
        for (int i = 0; i < n; ++i)
          for (int j = 0; j < cb; ++j) gb.at(i, j) += go.at(i, ca + j);
      }
    };
    ensure_grad(out);
  }
  return out;
}

NodeId Graph::row(NodeId a, int i) { return rows(a, {i}); }

NodeId Graph::rows(NodeId a, std::vector<int> idx) {
  const Tensor& A = value(a);
  int m = A.cols();
  Tensor C = Tensor::zeros({static_cast<int>(idx.size()), m});
  for (std::size_t r = 0; r < idx.size(); ++r) {
    if (idx[r] < 0 || idx[r] >= A.rows()) throw std::runtime_error("rows: index out of range");
    for (int j = 0; j < m; ++j) C.at(static_cast<int>(r), j) = A.at(idx[r], j);
  }
  bool g = rg(a);
  NodeId out = push(std::move(C), g, {});
  if (g) {
    nodes_[out].back = [this, a, out, idx = std::move(idx), m](Graph&) {
      ensure_grad(a);
      const Tensor& go = nodes_[out].grad;
      Tensor& ga = grad_ref(a);
      for (std::size_t r = 0; r < idx.size(); ++r)
        for (int j = 0; j < m; ++j) ga.at(idx[r], j) += go.at(static_cast<int>(r), j);
    };
    ensure_grad(out);
  }
  return out;
}

NodeId Graph::slice_rows(NodeId a, int r0, int r1) {
  std::vector<int> idx;
  for (int i = r0; i < r1; ++i) idx.push_back(i);
  return rows(a, std::move(idx));
}

NodeId Graph::mean_rows(NodeId a, int r0, int r1) {
  if (r1 <= r0) throw std::runtime_error("mean_rows: empty range");
  NodeId sl = slice_rows(a, r0, r1);
  const Tensor& S = value(sl);
  int n = S.rows(), m = S.cols();
  Tensor C = Tensor::zeros({1, m});
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < m; ++j) C.at(0, j) += S.at(i, j) / n;
  bool g = rg(sl);
  NodeId out = push(std::move(C), g, {});
  if (g) {
    nodes_[out].back = [this, sl, out, n, m](Graph&) {
      ensure_grad(sl);
      const Tensor& go = nodes_[out].grad;
      Tensor& gs = grad_ref(sl);
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < m; ++j) gs.at(i, j) += go.at(0, j) / n;
    };
    ensure_grad(out);
  }
  return out;
}

NodeId Graph::stack_rows(const std::vector<NodeId>& rws) {
  if (rws.empty()) throw std::runtime_error("stack_rows: empty");
  int m = value(rws[0]).cols();
  Tensor C = Tensor::zeros({static_cast<int>(rws.size()), m});
  bool g = false;
  for (std::size_t r = 0; r < rws.size(); ++r) {
    const Tensor& R = value(rws[r]);
    if (R.rows() != 1 || R.cols() != m) throw std::runtime_error("stack_rows: row shape mismatch");
    for (int j = 0; j < m; ++j) C.at(static_cast<int>(r), j) = R.at(0, j);
    g = g || rg(rws[r]);
  }
  NodeId out = push(std::move(C), g, {});
  if (g) {
    nodes_[out].back = [this, rws, out, m](Graph&) {
      const Tensor& go = nodes_[out].grad;
      for (std::size_t r = 0; r < rws.size(); ++r) {
        if (!rg(rws[r])) continue;
        ensure_grad(rws[r]);
        Tensor& gr = grad_ref(rws[r]);
        for (int j = 0; j < m; ++j) gr.at(0, j) += go.at(static_cast<int>(r), j);
      }
    };
    ensure_grad(out);
  }
  return out;
}

NodeId Graph::sum(NodeId a) {
  const Tensor& A = value(a);
  double s = 0.0;
  for (double x : A.data) s += x;
  bool g = rg(a);
  NodeId out = push(Tensor::scalar(s), g, {});
  if (g) {
    nodes_[out].back = [this, a, out](Graph&) {
      ensure_grad(a);
      double go = nodes_[out].grad.data[0];
      for (double& x : grad_ref(a).data) x += go;
    };
    ensure_grad(out);
  }
  return out;
}

NodeId Graph::mean(NodeId a) {
  return scale(sum(a), 1.0 / static_cast<double>(value(a).size()));
}

NodeId Graph::at(NodeId a, int i, int j) {
  const Tensor& A = value(a);
  if (i >= A.rows() || j >= A.cols()) throw std::runtime_error("at: index out of range");
  bool g = rg(a);
  NodeId out = push(Tensor::scalar(A.at(i, j)), g, {});
  if (g) {
    nodes_[out].back = [this, a, out, i, j](Graph&) {
      ensure_grad(a);
      grad_ref(a).at(i, j) += nodes_[out].grad.data[0];
    };
    ensure_grad(out);
  }
  return out;
}

namespace {
inline double sigmoid_d(double x) { return 1.0 / (1.0 + std::exp(-x)); }
}  // namespace

NodeId Graph::sigmoid(NodeId a) {
  Tensor C = value(a);
  for (double& x : C.data) x = sigmoid_d(x);
  bool g = rg(a);
  Tensor saved = C;
  NodeId out = push(std::move(C), g, {});
  if (g) {
    nodes_[out].back = [this, a, out, saved = std::move(saved)](Graph&) {
      ensure_grad(a);
      const Tensor& go = nodes_[out].grad;
      Tensor& ga = grad_ref(a);
      for (std::size_t i = 0; i < go.data.size(); ++i) {
        double y = saved.data[i];
        ga.data[i] += go.data[i] * y * (1.0 - y);
      }
    };
    ensure_grad(out);
  }
  return out;
}

NodeId Graph::tanh_(NodeId a) {
  Tensor C = value(a);
  for (double& x : C.data) x = std::tanh(x);
  bool g = rg(a);
  Tensor saved = C;
  NodeId out = push(std::move(C), g, {});
  if (g) {
    nodes_[out].back = [this, a, out, saved = std::move(saved)](Graph&) {
      ensure_grad(a);
      const Tensor& go = nodes_[out].grad;
      Tensor& ga = grad_ref(a);
      for (std::size_t i = 0; i < go.data.size(); ++i)
        ga.data[i] += go.data[i] * (1.0 - saved.data[i] * saved.data[i]);
    };
    ensure_grad(out);
  }
  return out;
}

NodeId Graph::gelu(NodeId a) {
  // exact erf form
  const double inv_sqrt2 = 0.7071067811865475244;
  const double inv_sqrt2pi = 0.3989422804014326779;
  Tensor C = value(a);
  for (double& x : C.data) x = 0.5 * x * (1.0 + std::erf(x * inv_sqrt2));
  bool g = rg(a);
  NodeId out = push(std::move(C), g, {});
  if (g) {
    nodes_[out].back = [this, a, out, inv_sqrt2, inv_sqrt2pi](Graph&) {
      ensure_grad(a);
      const Tensor& go = nodes_[out].grad;
      const Tensor& A2 = value(a);
      Tensor& ga = grad_ref(a);
      for (std::size_t i = 0; i < go.data.size(); ++i) {
        double x = A2.data[i];
        double cdf = 0.5 * (1.0 + std::erf(x * inv_sqrt2));
        double pdf = inv_sqrt2pi * std::exp(-0.5 * x * x);
        ga.data[i] += go.data[i] * (cdf + x * pdf);
      }
    };
    ensure_grad(out);
  }
  return out;
}

NodeId Graph::log_(NodeId a) {
  Tensor C = value(a);
  for (double& x : C.data) {
    if (!(x > 0.0)) throw std::runtime_error("log: non-positive input");
    x = std::log(x);
  }
  bool g = rg(a);
  NodeId out = push(std::move(C), g, {});
  if (g) {
    nodes_[out].back = [this, a, out](Graph&) {
      ensure_grad(a);
      const Tensor& go = nodes_[out].grad;
      const Tensor& A2 = value(a);
      Tensor& ga = grad_ref(a);
      for (std::size_t i = 0; i < go.data.size(); ++i) ga.data[i] += go.data[i] / A2.data[i];
    };
    ensure_grad(out);
  }
  return out;
}

NodeId Graph::clamp(NodeId a, double lo, double hi) {
  Tensor C = value(a);
  for (double& x : C.data) x = std::min(hi, std::max(lo, x));
  bool g = rg(a);
  NodeId out = push(std::move(C), g, {});
  if (g) {
    nodes_[out].back = [this, a, out, lo, hi](Graph&) {
      ensure_grad(a);
      const Tensor& go = nodes_[out].grad;
      const Tensor& A2 = value(a);
      Tensor& ga = grad_ref(a);
      // subgradient 0 at the boundary points themselves
      for (std::size_t i = 0; i < go.data.size(); ++i)
        if (A2.data[i] > lo && A2.data[i] < hi) ga.data[i] += go.data[i];
    };
    ensure_grad(out);
  }
  return out;
}

Tensor softmax_rows_val(const Tensor& x) {
  Tensor y = x;
  int n = x.rows(), m = x.cols();
  for (int i = 0; i < n; ++i) {
    double mx = -1e300;
    for (int j = 0; j < m; ++j) {
      double v = x.at(i, j);
      if (std::isnan(v)) throw std::runtime_error("softmax_rows: NaN input");
      mx = std::max(mx, v);
    }
    double z = 0.0;
    for (int j = 0; j < m; ++j) {
      y.at(i, j) = std::exp(x.at(i, j) - mx);
      z += y.at(i, j);
    }
    for (int j = 0; j < m; ++j) y.at(i, j) /= z;
  }
  return y;
}

NodeId Graph::softmax_rows(NodeId a) {
  Tensor Y = softmax_rows_val(value(a));
  bool g = rg(a);
  Tensor saved = Y;
  NodeId out = push(std::move(Y), g, {});
  if (g) {
    nodes_[out].back = [this, a, out, saved = std::move(saved)](Graph&) {
      ensure_grad(a);
      const Tensor& go = nodes_[out].grad;
      Tensor& ga = grad_ref(a);
      int n = saved.rows(), m = saved.cols();
      for (int i = 0; i < n; ++i) {
        double dot = 0.0;
        for (int j = 0; j < m; ++j) dot += go.at(i, j) * saved.at(i, j);
        for (int j = 0; j < m; ++j) ga.at(i, j) += saved.at(i, j) * (go.at(i, j) - dot);
      }
    };
    ensure_grad(out);
  }
  return out;
}

NodeId Graph::layer_norm(NodeId x, NodeId gain, NodeId bias, double eps) {
  const Tensor& X = value(x);
  int n = X.rows(), m = X.cols();
  const Tensor& G = value(gain);
  const Tensor& B = value(bias);
  if (G.size() != m || B.size() != m) throw std::runtime_error("layer_norm: gain/bias size mismatch");
  Tensor xhat = Tensor::zeros({n, m});
  std::vector<double> inv_sigma(n);
  Tensor Y = Tensor::zeros({n, m});
  for (int i = 0; i < n; ++i) {
    double mu = 0.0;
    for (int j = 0; j < m; ++j) mu += X.at(i, j);
    mu /= m;
    double var = 0.0;
    for (int j = 0; j < m; ++j) {
      double d = X.at(i, j) - mu;
      var += d * d;
    }
    var /= m;
    double is = 1.0 / std::sqrt(var + eps);
    inv_sigma[i] = is;
    for (int j = 0; j < m; ++j) {
      xhat.at(i, j) = (X.at(i, j) - mu) * is;
      Y.at(i, j) = xhat.at(i, j) * G.data[j] + B.data[j];
    }
  }
  bool g = rg(x) || rg(gain) || rg(bias);
  NodeId out = push(std::move(Y), g, {});
  if (g) {
    nodes_[out].back = [this, x, gain, bias, out, xhat = std::move(xhat),
                        inv_sigma = std::move(inv_sigma), n, m](Graph&) {
      const Tensor& go = nodes_[out].grad;
      const Tensor& G2 = value(gain);
      if (rg(gain)) {
        ensure_grad(gain);
        Tensor& gg = grad_ref(gain);
        for (int i = 0; i < n; ++i)
          for (int j = 0; j < m; ++j) gg.data[j] += go.at(i, j) * xhat.at(i, j);
      }
      if (rg(bias)) {
        ensure_grad(bias);
        Tensor& gb = grad_ref(bias);
        for (int i = 0; i < n; ++i)
          for (int j = 0; j < m; ++j) gb.data[j] += go.at(i, j);
      }
      if (rg(x)) {
        ensure_grad(x);
        Tensor& gx = grad_ref(x);
        for (int i = 0; i < n; ++i) {
          double mean_dxhat = 0.0, mean_dxhat_xhat = 0.0;
          for (int j = 0; j < m; ++j) {
            double dxh = go.at(i, j) * G2.data[j];
            mean_dxhat += dxh;
            mean_dxhat_xhat += dxh * xhat.at(i, j);
          }
          mean_dxhat /= m;
          mean_dxhat_xhat /= m;
          for (int j = 0; j < m; ++j) {
            double dxh = go.at(i, j) * G2.data[j];
            gx.at(i, j) += (dxh - mean_dxhat - xhat.at(i, j) * mean_dxhat_xhat) * inv_sigma[i];
          }
        }
      }
    };
    ensure_grad(out);
  }
  return out;
}

NodeId Graph::embedding(NodeId table, const std::vector<int>& ids) {
  return rows(table, std::vector<int>(ids.begin(), ids.end()));
}

NodeId Graph::cross_entropy_mean(NodeId logits, const std::vector<int>& targets) {
  const Tensor& L = value(logits);
  int n = L.rows(), k = L.cols();
  if (static_cast<int>(targets.size()) != n)
    throw std::runtime_error("cross_entropy: target count mismatch");
  for (int t : targets)
    if (t < 0 || t >= k) throw std::runtime_error("cross_entropy: target out of range");
  Tensor P = softmax_rows_val(L);
  double loss = 0.0;
  for (int i = 0; i < n; ++i) loss -= std::log(std::max(P.at(i, targets[i]), 1e-300));
  loss /= n;
  bool g = rg(logits);
  NodeId out = push(Tensor::scalar(loss), g, {});
  if (g) {
    nodes_[out].back = [this, logits, out, P = std::move(P), targets, n, k](Graph&) {
      ensure_grad(logits);
      double go = nodes_[out].grad.data[0];
      Tensor& gl = grad_ref(logits);
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < k; ++j)
          gl.at(i, j) += go * (P.at(i, j) - (j == targets[i] ? 1.0 : 0.0)) / n;
    };
    ensure_grad(out);
  }
  return out;
}

NodeId Graph::bce_logits_mean(NodeId logits, const std::vector<double>& targets) {
  const Tensor& L = value(logits);
  int n = static_cast<int>(L.size());
  if (static_cast<int>(targets.size()) != n)
    throw std::runtime_error("bce: target count mismatch");
  double loss = 0.0;
  std::vector<double> p(n);
  for (int i = 0; i < n; ++i) {
    double x = L.data[i];
    p[i] = sigmoid_d(x);
    // numerically stable log-sum form
    loss += std::max(x, 0.0) - x * targets[i] + std::log1p(std::exp(-std::fabs(x)));
  }
  loss /= n;
  bool g = rg(logits);
  NodeId out = push(Tensor::scalar(loss), g, {});
  if (g) {
    nodes_[out].back = [this, logits, out, p = std::move(p), targets, n](Graph&) {
      ensure_grad(logits);
      double go = nodes_[out].grad.data[0];
      Tensor& gl = grad_ref(logits);
      for (int i = 0; i < n; ++i) gl.data[i] += go * (p[i] - targets[i]) / n;
    };
    ensure_grad(out);
  }
  return out;
}

void Graph::backward(NodeId loss) {
  if (!value(loss).is_scalar()) throw std::runtime_error("backward: loss must be scalar");
  if (!rg(loss)) return;  // loss does not depend on any parameter
  ensure_grad(loss);
  grad_ref(loss).data[0] = 1.0;
  for (NodeId id = loss; id >= 0; --id) {
    if (nodes_[id].back && nodes_[id].requires_grad) nodes_[id].back(*this);
  }
}

// --- ParamStore / Adam / checkpoint ---------------------------------------

int ParamStore::add(const std::string& name, Tensor t) {
  names.push_back(name);
  tensors.push_back(std::move(t));
  return static_cast<int>(tensors.size()) - 1;
}

int ParamStore::index(const std::string& name) const {
  for (std::size_t i = 0; i < names.size(); ++i)
    if (names[i] == name) return static_cast<int>(i);
  return -1;
}

void Adam::init(const ParamStore& params) {
  t = 0;
  m.clear();
  v.clear();
  for (const Tensor& p : params.tensors) {
    m.push_back(Tensor::zeros(p.shape));
    v.push_back(Tensor::zeros(p.shape));
  }
}

void Adam::step(ParamStore& params, const std::vector<Tensor>& grads,
                const std::vector<double>& lrs, double lr_scale) {
  if (grads.size() != params.tensors.size() || lrs.size() != params.tensors.size())
    throw std::runtime_error("adam: grads/lrs size mismatch");
  ++t;
  double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
  double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
  for (std::size_t i = 0; i < params.tensors.size(); ++i) {
    if (lrs[i] < 0.0) continue;  // frozen group, moments untouched too
    Tensor& p = params.tensors[i];
    const bool empty = grads[i].data.empty();
    if (!empty && !grads[i].same_shape(p)) throw std::runtime_error("adam: gradient shape mismatch");
    double lr = lrs[i] * lr_scale;
    for (std::size_t j = 0; j < p.data.size(); ++j) {
      double g = empty ? 0.0 : grads[i].data[j];
      m[i].data[j] = beta1 * m[i].data[j] + (1.0 - beta1) * g;
      v[i].data[j] = beta2 * v[i].data[j] + (1.0 - beta2) * g * g;
      double mhat = m[i].data[j] / bc1;
      double vhat = v[i].data[j] / bc2;
      p.data[j] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
  }
}

void save_checkpoint(const std::string& stem, const ParamStore& params,
                     std::uint64_t seed, std::int64_t step) {
  nlohmann::json manifest;
  manifest["seed"] = seed;
  manifest["step"] = step;
  manifest["params"] = nlohmann::json::array();
  for (std::size_t i = 0; i < params.tensors.size(); ++i) {
    manifest["params"].push_back({{"name", params.names[i]}, {"shape", params.tensors[i].shape}});
  }
  std::ofstream jf(stem + ".json");
  if (!jf) throw std::runtime_error("checkpoint: cannot write " + stem + ".json");
  jf << manifest.dump(2) << "\n";
  std::ofstream bf(stem + ".bin", std::ios::binary);
  if (!bf) throw std::runtime_error("checkpoint: cannot write " + stem + ".bin");
  for (const Tensor& p : params.tensors) {
    // little-endian f64; x86-64 native layout
    bf.write(reinterpret_cast<const char*>(p.data.data()),
             static_cast<std::streamsize>(p.data.size() * sizeof(double)));
  }
}

Checkpoint load_checkpoint(const std::string& stem) {
  std::ifstream jf(stem + ".json");
  if (!jf) throw std::runtime_error("checkpoint: cannot read " + stem + ".json");
  nlohmann::json manifest = nlohmann::json::parse(jf);
  Checkpoint ck;
  ck.seed = manifest.at("seed").get<std::uint64_t>();
  ck.step = manifest.at("step").get<std::int64_t>();
  std::ifstream bf(stem + ".bin", std::ios::binary);
  if (!bf) throw std::runtime_error("checkpoint: cannot read " + stem + ".bin");
  for (const auto& entry : manifest.at("params")) {
    std::vector<int> shape = entry.at("shape").get<std::vector<int>>();
    Tensor t = Tensor::zeros(shape);
    bf.read(reinterpret_cast<char*>(t.data.data()),
            static_cast<std::streamsize>(t.data.size() * sizeof(double)));
    if (!bf) throw std::runtime_error("checkpoint: blob shorter than manifest");
    ck.params.add(entry.at("name").get<std::string>(), std::move(t));
  }
  return ck;
}

double central_diff(const std::function<double(double)>& f, double x, double h) {
  return (f(x + h) - f(x - h)) / (2.0 * h);
}

}  // namespace gatelab
