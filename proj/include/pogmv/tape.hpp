#pragma once

#include <functional>
#include <vector>

#include "pogmv/tensor.hpp"

namespace pogmv {

struct Stride3 {
  int t = 1, h = 1, w = 1;
};

struct Pad3 {
  int t = 0, h = 0, w = 0;
};

class Tape;

// Lightweight handle to a node on a Tape.
struct Var {
  Tape* tape = nullptr;
  int id = -1;

  bool valid() const { return tape != nullptr && id >= 0; }
  const Tensor& val() const;
  const std::vector<int>& shape() const;
};

// Reverse-mode autodiff tape. Nodes are created in topological order; each
// non-leaf node carries a forward closure (recompute value from parents) and
// a backward closure (scatter output grad to parents).
//
// detach() nodes are "frozen": forward_all() does not refresh their value, so
// finite-difference probes through the tape see exactly the function whose
// gradient backward() computes (stop-gradient branches held at build-time
// values).
class Tape {
 public:
  struct Node {
    Tensor value;
    Tensor grad;
    std::function<void(Tape&)> forward;   // empty for leaves
    std::function<void(Tape&)> backward;  // empty for leaves
    bool frozen = false;
  };

  std::vector<Node> nodes;

  Var leaf(Tensor v);

  // Elementwise, all same-shape unless noted.
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  Var div(Var a, Var b);
  Var scale(Var a, double c);
  Var add_const(Var a, double c);
  Var mul_const(Var a, Tensor mask);  // elementwise by a fixed tensor
  Var sigmoid(Var a);
  Var relu(Var a);
  Var rsqrt(Var a, double eps);  // (x + eps)^(-1/2)
  Var sqrt_op(Var a);            // sqrt(max(x,0)); grad 0 at x == 0

  // Shape / gather ops.
  Var reshape(Var a, std::vector<int> new_shape);
  Var concat_ch(Var a, Var b);  // concat along axis 1
  Var select_rows(Var a, std::vector<int> rows);
  Var detach(Var a);

  // Reductions and broadcasts.
  Var sum_all(Var a);            // -> {1}
  Var mean_axis0(Var a);         // [N, rest] -> [rest]
  Var mean_inner_bcast(Var a);   // mean over dims 2.. per (n, c), broadcast back
  Var gap(Var a);                // [N,C,T,H,W] -> [N,C]
  Var elem(Var a, int i, int j); // matrix element -> {1}
  Var scale_by_scalar(Var a, Var s);  // s: {1}

  // Dense / conv layers.
  Var channel_affine(Var x, Var gamma, Var beta);  // x*[C] + [C] per channel
  Var linear(Var x, Var w, Var b);  // [N,I] x [O,I] + [O] -> [N,O]
  Var conv3d(Var x, Var w, Var b, Stride3 s, Pad3 p);
  // w layout [Ci,Co,kt,kh,kw]; out = (in-1)*s - 2p + k + out_pad
  Var conv3d_transpose(Var x, Var w, Var b, Stride3 s, Pad3 p, Pad3 out_pad);

  Var row_softmax(Var x);  // [R,C], softmax per row
  Var softmax_xent(Var logits, std::vector<int> labels);  // mean NLL -> {1}

  // Recompute every non-leaf, non-frozen node in creation order.
  void forward_all();
  // Zero all grads, seed d(loss)=1, run backward closures in reverse order.
  void backward(Var loss);

  Tensor& value(Var v) { return nodes[static_cast<std::size_t>(v.id)].value; }
  const Tensor& value(Var v) const {
    return nodes[static_cast<std::size_t>(v.id)].value;
  }
  Tensor& grad(Var v) { return nodes[static_cast<std::size_t>(v.id)].grad; }
  double scalar(Var v) const { return value(v).data[0]; }

  // Perturb one element of a leaf, recompute, read the loss, restore.
  double loss_under_perturbation(Var loss, Var leaf_var, std::size_t idx,
                                 double delta);

 private:
  Var push(Tensor value, std::function<void(Tape&)> fwd,
           std::function<void(Tape&)> bwd);
};

}  // namespace pogmv
