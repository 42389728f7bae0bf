#pragma once

#include <deque>
#include <functional>
#include <string>
#include <vector>

#include "gatelab/tensor.hpp"

namespace gatelab {

using NodeId = int;

// Reverse-mode tape. One Graph is built per forward pass (per sentence);
// backward() walks the tape once in reverse. Values are immutable after
// creation; gradients accumulate.
class Graph {
 public:
  // Leaf tensors. requires_grad leaves get a gradient slot.
  NodeId input(Tensor t, bool requires_grad = false);
  NodeId constant(double v) { return input(Tensor::scalar(v), false); }

  const Tensor& value(NodeId id) const { return nodes_[id].val; }
  const Tensor& gradient(NodeId id) const { return nodes_[id].grad; }

  // --- primitives -------------------------------------------------------
  NodeId matmul(NodeId a, NodeId b);
  NodeId transpose(NodeId a);
  NodeId add(NodeId a, NodeId b);         // same shape, or b a row vector broadcast over a's rows
  NodeId sub(NodeId a, NodeId b);
  NodeId mul(NodeId a, NodeId b);         // elementwise, same shape
  NodeId scale(NodeId a, double c);
  NodeId add_const(NodeId a, double c);
  NodeId scale_by(NodeId a, NodeId s);    // s scalar node
  NodeId concat_cols(NodeId a, NodeId b); // same row count
  NodeId row(NodeId a, int i);            // 1 x cols
  NodeId rows(NodeId a, std::vector<int> idx);        // gather
  NodeId slice_rows(NodeId a, int r0, int r1);        // [r0, r1)
  NodeId mean_rows(NodeId a, int r0, int r1);         // 1 x cols mean of rows [r0, r1)
  NodeId stack_rows(const std::vector<NodeId>& rws);  // each 1 x d
  NodeId sum(NodeId a);                   // scalar
  NodeId mean(NodeId a);                  // scalar
  NodeId at(NodeId a, int i, int j);      // scalar
  NodeId sigmoid(NodeId a);
  NodeId tanh_(NodeId a);
  NodeId gelu(NodeId a);
  NodeId log_(NodeId a);                  // error on non-positive entries
  NodeId clamp(NodeId a, double lo, double hi);  // subgradient 0 outside and at the boundary
  NodeId softmax_rows(NodeId a);
  NodeId layer_norm(NodeId x, NodeId gain, NodeId bias, double eps = 1e-5);
  NodeId embedding(NodeId table, const std::vector<int>& ids);
  // mean over rows of -log softmax(logits)[target]; targets.size() == logits rows
  NodeId cross_entropy_mean(NodeId logits, const std::vector<int>& targets);
  // mean over entries of BCE-with-logits against {0,1} targets
  NodeId bce_logits_mean(NodeId logits, const std::vector<double>& targets);

  // Seeds d(loss)/d(loss)=1 and propagates. loss must be scalar.
  void backward(NodeId loss);

  std::size_t node_count() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor val;
    Tensor grad;  // allocated lazily for grad-requiring nodes
    bool requires_grad = false;
    std::function<void(Graph&)> back;  // empty for leaves
  };
  // deque: element references stay valid while ops append nodes mid-construction
  std::deque<Node> nodes_;

  NodeId push(Tensor val, bool rg, std::function<void(Graph&)> back);
  Tensor& grad_ref(NodeId id) { return nodes_[id].grad; }
  bool rg(NodeId id) const { return nodes_[id].requires_grad; }
  void ensure_grad(NodeId id);
};

// Free-function softmax over a plain matrix (used outside graphs).
Tensor softmax_rows_val(const Tensor& x);

// --- parameters & optimizer ---------------------------------------------

struct ParamStore {
  std::vector<std::string> names;
  std::vector<Tensor> tensors;

  int add(const std::string& name, Tensor t);
  int index(const std::string& name) const;        // -1 if absent
  Tensor& operator[](int i) { return tensors[i]; }
  const Tensor& operator[](int i) const { return tensors[i]; }
  int count() const { return static_cast<int>(tensors.size()); }
};

// Standard Adam with bias correction. Per-parameter learning rates let the
// trainer run encoder/decoder/gate groups at different rates and freeze
// groups entirely (lr entry < 0 means "do not touch at all").
struct Adam {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::int64_t t = 0;
  std::vector<Tensor> m, v;

  void init(const ParamStore& params);
  // grads[i] empty => treated as zero. lr_scale multiplies every rate
  // (warm-up hook).
  void step(ParamStore& params, const std::vector<Tensor>& grads,
            const std::vector<double>& lrs, double lr_scale = 1.0);
};

// Checkpoint = <stem>.json manifest + <stem>.bin little-endian f64 blob in
// manifest order.
void save_checkpoint(const std::string& stem, const ParamStore& params,
                     std::uint64_t seed, std::int64_t step);
struct Checkpoint {
  ParamStore params;
  std::uint64_t seed = 0;
  std::int64_t step = 0;
};
Checkpoint load_checkpoint(const std::string& stem);

// Finite-difference helper shared by tests and the acceptance suite:
// central differences of f at x[i], h=1e-5.
double central_diff(const std::function<double(double)>& f, double x, double h = 1e-5);

}  // namespace gatelab
