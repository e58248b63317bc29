#include "pogmv/tape.hpp"

#include <algorithm>
#include <cmath>
#include <memory>

namespace pogmv {

const Tensor& Var::val() const { return tape->value(*this); }
const std::vector<int>& Var::shape() const { return tape->value(*this).shape; }

Var Tape::push(Tensor value, std::function<void(Tape&)> fwd,
               std::function<void(Tape&)> bwd) {
  Node n;
  n.grad = Tensor(value.shape);
  n.value = std::move(value);
  n.forward = std::move(fwd);
  n.backward = std::move(bwd);
  nodes.push_back(std::move(n));
  Var v;
  v.tape = this;
  v.id = static_cast<int>(nodes.size()) - 1;
  return v;
}

Var Tape::leaf(Tensor v) { return push(std::move(v), nullptr, nullptr); }

// Shared builder for elementwise binary ops.
static void check_same(const Tensor& a, const Tensor& b, const char* where) {
  require_same_shape(a, b, where);
}

Var Tape::add(Var a, Var b) {
  check_same(value(a), value(b), "add");
  int ai = a.id, bi = b.id;
  Var o = push(Tensor(value(a).shape), nullptr, nullptr);
  int oi = o.id;
  nodes[oi].forward = [ai, bi, oi](Tape& t) {
    auto& o_ = t.nodes[oi].value.data;
    const auto& a_ = t.nodes[ai].value.data;
    const auto& b_ = t.nodes[bi].value.data;
    for (std::size_t k = 0; k < o_.size(); ++k) o_[k] = a_[k] + b_[k];
  };
  nodes[oi].backward = [ai, bi, oi](Tape& t) {
    const auto& g = t.nodes[oi].grad.data;
    auto& ga = t.nodes[ai].grad.data;
    auto& gb = t.nodes[bi].grad.data;
    for (std::size_t k = 0; k < g.size(); ++k) {
      ga[k] += g[k];
      gb[k] += g[k];
    }
  };
  nodes[oi].forward(*this);
  return o;
}

Var Tape::sub(Var a, Var b) {
  check_same(value(a), value(b), "sub");
  int ai = a.id, bi = b.id;
  Var o = push(Tensor(value(a).shape), nullptr, nullptr);
  int oi = o.id;
  nodes[oi].forward = [ai, bi, oi](Tape& t) {
    auto& o_ = t.nodes[oi].value.data;
    const auto& a_ = t.nodes[ai].value.data;
    const auto& b_ = t.nodes[bi].value.data;
    for (std::size_t k = 0; k < o_.size(); ++k) o_[k] = a_[k] - b_[k];
  };
  nodes[oi].backward = [ai, bi, oi](Tape& t) {
    const auto& g = t.nodes[oi].grad.data;
    auto& ga = t.nodes[ai].grad.data;
    auto& gb = t.nodes[bi].grad.data;
    for (std::size_t k = 0; k < g.size(); ++k) {
      ga[k] += g[k];
      gb[k] -= g[k];
    }
  };
  nodes[oi].forward(*this);
  return o;
}

Var Tape::mul(Var a, Var b) {
  check_same(value(a), value(b), "mul");
  int ai = a.id, bi = b.id;
  Var o = push(Tensor(value(a).shape), nullptr, nullptr);
  int oi = o.id;
  nodes[oi].forward = [ai, bi, oi](Tape& t) {
    auto& o_ = t.nodes[oi].value.data;
    const auto& a_ = t.nodes[ai].value.data;
    const auto& b_ = t.nodes[bi].value.data;
    for (std::size_t k = 0; k < o_.size(); ++k) o_[k] = a_[k] * b_[k];
  };
  nodes[oi].backward = [ai, bi, oi](Tape& t) {
    const auto& g = t.nodes[oi].grad.data;
    const auto& a_ = t.nodes[ai].value.data;
    const auto& b_ = t.nodes[bi].value.data;
    auto& ga = t.nodes[ai].grad.data;
    auto& gb = t.nodes[bi].grad.data;
    for (std::size_t k = 0; k < g.size(); ++k) {
      ga[k] += g[k] * b_[k];
      gb[k] += g[k] * a_[k];
    }
  };
  nodes[oi].forward(*this);
  return o;
}

Var Tape::div(Var a, Var b) {
  check_same(value(a), value(b), "div");
  int ai = a.id, bi = b.id;
  Var o = push(Tensor(value(a).shape), nullptr, nullptr);
  int oi = o.id;
  nodes[oi].forward = [ai, bi, oi](Tape& t) {
    auto& o_ = t.nodes[oi].value.data;
    const auto& a_ = t.nodes[ai].value.data;
    const auto& b_ = t.nodes[bi].value.data;
    for (std::size_t k = 0; k < o_.size(); ++k) o_[k] = a_[k] / b_[k];
  };
  nodes[oi].backward = [ai, bi, oi](Tape& t) {
    const auto& g = t.nodes[oi].grad.data;
    const auto& a_ = t.nodes[ai].value.data;
    const auto& b_ = t.nodes[bi].value.data;
    auto& ga = t.nodes[ai].grad.data;
    auto& gb = t.nodes[bi].grad.data;
    for (std::size_t k = 0; k < g.size(); ++k) {
      ga[k] += g[k] / b_[k];
      gb[k] -= g[k] * a_[k] / (b_[k] * b_[k]);
    }
  };
  nodes[oi].forward(*this);
  return o;
}

Var Tape::scale(Var a, double c) {
  int ai = a.id;
  Var o = push(Tensor(value(a).shape), nullptr, nullptr);
  int oi = o.id;
  nodes[oi].forward = [ai, oi, c](Tape& t) {
    auto& o_ = t.nodes[oi].value.data;
    const auto& a_ = t.nodes[ai].value.data;
    for (std::size_t k = 0; k < o_.size(); ++k) o_[k] = a_[k] * c;
  };
  nodes[oi].backward = [ai, oi, c](Tape& t) {
    const auto& g = t.nodes[oi].grad.data;
    auto& ga = t.nodes[ai].grad.data;
    for (std::size_t k = 0; k < g.size(); ++k) ga[k] += g[k] * c;
  };
  nodes[oi].forward(*this);
  return o;
}

Var Tape::add_const(Var a, double c) {
  int ai = a.id;
  Var o = push(Tensor(value(a).shape), nullptr, nullptr);
  int oi = o.id;
  nodes[oi].forward = [ai, oi, c](Tape& t) {
    auto& o_ = t.nodes[oi].value.data;
    const auto& a_ = t.nodes[ai].value.data;
    for (std::size_t k = 0; k < o_.size(); ++k) o_[k] = a_[k] + c;
  };
  nodes[oi].backward = [ai, oi](Tape& t) {
    const auto& g = t.nodes[oi].grad.data;
    auto& ga = t.nodes[ai].grad.data;
    for (std::size_t k = 0; k < g.size(); ++k) ga[k] += g[k];
  };
  nodes[oi].forward(*this);
  return o;
}

Var Tape::mul_const(Var a, Tensor mask) {
  check_same(value(a), mask, "mul_const");
  int ai = a.id;
  Var o = push(Tensor(value(a).shape), nullptr, nullptr);
  int oi = o.id;
  auto m = std::make_shared<Tensor>(std::move(mask));
  nodes[oi].forward = [ai, oi, m](Tape& t) {
    auto& o_ = t.nodes[oi].value.data;
    const auto& a_ = t.nodes[ai].value.data;
    for (std::size_t k = 0; k < o_.size(); ++k) o_[k] = a_[k] * m->data[k];
  };
  nodes[oi].backward = [ai, oi, m](Tape& t) {
    const auto& g = t.nodes[oi].grad.data;
    auto& ga = t.nodes[ai].grad.data;
    for (std::size_t k = 0; k < g.size(); ++k) ga[k] += g[k] * m->data[k];
  };
  nodes[oi].forward(*this);
  return o;
}

Var Tape::sigmoid(Var a) {
  int ai = a.id;
  Var o = push(Tensor(value(a).shape), nullptr, nullptr);
  int oi = o.id;
  nodes[oi].forward = [ai, oi](Tape& t) {
    auto& o_ = t.nodes[oi].value.data;
    const auto& a_ = t.nodes[ai].value.data;
    for (std::size_t k = 0; k < o_.size(); ++k)
      o_[k] = 1.0 / (1.0 + std::exp(-a_[k]));
  };
  nodes[oi].backward = [ai, oi](Tape& t) {
    const auto& g = t.nodes[oi].grad.data;
    const auto& y = t.nodes[oi].value.data;
    auto& ga = t.nodes[ai].grad.data;
    for (std::size_t k = 0; k < g.size(); ++k)
      ga[k] += g[k] * y[k] * (1.0 - y[k]);
  };
  nodes[oi].forward(*this);
  return o;
}

Var Tape::relu(Var a) {
  int ai = a.id;
  Var o = push(Tensor(value(a).shape), nullptr, nullptr);
  int oi = o.id;
  nodes[oi].forward = [ai, oi](Tape& t) {
    auto& o_ = t.nodes[oi].value.data;
    const auto& a_ = t.nodes[ai].value.data;
    for (std::size_t k = 0; k < o_.size(); ++k) o_[k] = a_[k] > 0 ? a_[k] : 0.0;
  };
  nodes[oi].backward = [ai, oi](Tape& t) {
    const auto& g = t.nodes[oi].grad.data;
    const auto& a_ = t.nodes[ai].value.data;
    auto& ga = t.nodes[ai].grad.data;
    for (std::size_t k = 0; k < g.size(); ++k)
      if (a_[k] > 0) ga[k] += g[k];
  };
  nodes[oi].forward(*this);
  return o;
}

Var Tape::rsqrt(Var a, double eps) {
  int ai = a.id;
  Var o = push(Tensor(value(a).shape), nullptr, nullptr);
  int oi = o.id;
  nodes[oi].forward = [ai, oi, eps](Tape& t) {
    auto& o_ = t.nodes[oi].value.data;
    const auto& a_ = t.nodes[ai].value.data;
    for (std::size_t k = 0; k < o_.size(); ++k)
      o_[k] = 1.0 / std::sqrt(a_[k] + eps);
  };
  nodes[oi].backward = [ai, oi](Tape& t) {
    const auto& g = t.nodes[oi].grad.data;
    const auto& y = t.nodes[oi].value.data;
    auto& ga = t.nodes[ai].grad.data;
    for (std::size_t k = 0; k < g.size(); ++k)
      ga[k] += -0.5 * g[k] * y[k] * y[k] * y[k];
  };
  nodes[oi].forward(*this);
  return o;
}

Var Tape::sqrt_op(Var a) {
  int ai = a.id;
  Var o = push(Tensor(value(a).shape), nullptr, nullptr);
  int oi = o.id;
  nodes[oi].forward = [ai, oi](Tape& t) {
    auto& o_ = t.nodes[oi].value.data;
    const auto& a_ = t.nodes[ai].value.data;
    for (std::size_t k = 0; k < o_.size(); ++k)
      o_[k] = std::sqrt(std::max(a_[k], 0.0));
  };
  nodes[oi].backward = [ai, oi](Tape& t) {
    const auto& g = t.nodes[oi].grad.data;
    const auto& y = t.nodes[oi].value.data;
    auto& ga = t.nodes[ai].grad.data;
    for (std::size_t k = 0; k < g.size(); ++k)
      if (y[k] > 0) ga[k] += 0.5 * g[k] / y[k];
  };
  nodes[oi].forward(*this);
  return o;
}

Var Tape::reshape(Var a, std::vector<int> new_shape) {
  if (Tensor::numel_of(new_shape) != value(a).numel()) {
    throw Error("ShapeMismatch", "reshape: element counts differ");
  }
  int ai = a.id;
  Var o = push(Tensor(new_shape), nullptr, nullptr);
  int oi = o.id;
  nodes[oi].forward = [ai, oi](Tape& t) {
    t.nodes[oi].value.data = t.nodes[ai].value.data;
  };
  nodes[oi].backward = [ai, oi](Tape& t) {
    const auto& g = t.nodes[oi].grad.data;
    auto& ga = t.nodes[ai].grad.data;
    for (std::size_t k = 0; k < g.size(); ++k) ga[k] += g[k];
  };
  nodes[oi].forward(*this);
  return o;
}

Var Tape::concat_ch(Var a, Var b) {
  const Tensor& ta = value(a);
  const Tensor& tb = value(b);
  if (ta.rank() < 2 || tb.rank() != ta.rank()) {
    throw Error("ShapeMismatch", "concat_ch: rank");
  }
  for (int i = 0; i < ta.rank(); ++i) {
    if (i != 1 && ta.shape[i] != tb.shape[i]) {
      throw Error("ShapeMismatch", "concat_ch: " + shape_str(ta.shape) + " vs " +
                                       shape_str(tb.shape));
    }
  }
  std::vector<int> os = ta.shape;
  os[1] = ta.shape[1] + tb.shape[1];
  int N = ta.shape[0];
  std::size_t inner = 1;
  for (int i = 2; i < ta.rank(); ++i) inner *= static_cast<std::size_t>(ta.shape[i]);
  std::size_t arow = static_cast<std::size_t>(ta.shape[1]) * inner;
  std::size_t brow = static_cast<std::size_t>(tb.shape[1]) * inner;
  int ai = a.id, bi = b.id;
  Var o = push(Tensor(os), nullptr, nullptr);
  int oi = o.id;
  nodes[oi].forward = [ai, bi, oi, N, arow, brow](Tape& t) {
    auto& o_ = t.nodes[oi].value.data;
    const auto& a_ = t.nodes[ai].value.data;
    const auto& b_ = t.nodes[bi].value.data;
    for (int n = 0; n < N; ++n) {
      std::copy(a_.begin() + n * arow, a_.begin() + (n + 1) * arow,
                o_.begin() + n * (arow + brow));
      std::copy(b_.begin() + n * brow, b_.begin() + (n + 1) * brow,
                o_.begin() + n * (arow + brow) + arow);
    }
  };
  nodes[oi].backward = [ai, bi, oi, N, arow, brow](Tape& t) {
    const auto& g = t.nodes[oi].grad.data;
    auto& ga = t.nodes[ai].grad.data;
    auto& gb = t.nodes[bi].grad.data;
    for (int n = 0; n < N; ++n) {
      for (std::size_t k = 0; k < arow; ++k)
        ga[n * arow + k] += g[n * (arow + brow) + k];
      for (std::size_t k = 0; k < brow; ++k)
        gb[n * brow + k] += g[n * (arow + brow) + arow + k];
    }
  };
  nodes[oi].forward(*this);
  return o;
}

Var Tape::select_rows(Var a, std::vector<int> rows) {
  const Tensor& ta = value(a);
  if (ta.rank() < 1) throw Error("ShapeMismatch", "select_rows: rank 0");
  int N = ta.shape[0];
  for (int r : rows) {
    if (r < 0 || r >= N) throw Error("IndexOutOfRange", "select_rows");
  }
  std::size_t inner = ta.numel() / static_cast<std::size_t>(N);
  std::vector<int> os = ta.shape;
  os[0] = static_cast<int>(rows.size());
  int ai = a.id;
  Var o = push(Tensor(os), nullptr, nullptr);
  int oi = o.id;
  auto rs = std::make_shared<std::vector<int>>(std::move(rows));
  nodes[oi].forward = [ai, oi, rs, inner](Tape& t) {
    auto& o_ = t.nodes[oi].value.data;
    const auto& a_ = t.nodes[ai].value.data;
    for (std::size_t m = 0; m < rs->size(); ++m) {
      std::copy(a_.begin() + (*rs)[m] * inner, a_.begin() + ((*rs)[m] + 1) * inner,
                o_.begin() + m * inner);
    }
  };
  nodes[oi].backward = [ai, oi, rs, inner](Tape& t) {
    const auto& g = t.nodes[oi].grad.data;
    auto& ga = t.nodes[ai].grad.data;
    for (std::size_t m = 0; m < rs->size(); ++m) {
      for (std::size_t k = 0; k < inner; ++k)
        ga[(*rs)[m] * inner + k] += g[m * inner + k];
    }
  };
  nodes[oi].forward(*this);
  return o;
}

Var Tape::detach(Var a) {
  Var o = push(value(a), nullptr, nullptr);
  nodes[o.id].frozen = true;
  return o;
}

Var Tape::sum_all(Var a) {
  int ai = a.id;
  Var o = push(Tensor({1}), nullptr, nullptr);
  int oi = o.id;
  nodes[oi].forward = [ai, oi](Tape& t) {
    const auto& a_ = t.nodes[ai].value.data;
    double s = 0.0;
    for (double x : a_) s += x;
    t.nodes[oi].value.data[0] = s;
  };
  nodes[oi].backward = [ai, oi](Tape& t) {
    double g = t.nodes[oi].grad.data[0];
    auto& ga = t.nodes[ai].grad.data;
    for (double& x : ga) x += g;
  };
  nodes[oi].forward(*this);
  return o;
}

Var Tape::mean_axis0(Var a) {
  const Tensor& ta = value(a);
  if (ta.rank() < 2) throw Error("ShapeMismatch", "mean_axis0: rank < 2");
  int N = ta.shape[0];
  std::size_t inner = ta.numel() / static_cast<std::size_t>(N);
  std::vector<int> os(ta.shape.begin() + 1, ta.shape.end());
  int ai = a.id;
  Var o = push(Tensor(os), nullptr, nullptr);
  int oi = o.id;
  nodes[oi].forward = [ai, oi, N, inner](Tape& t) {
    auto& o_ = t.nodes[oi].value.data;
    const auto& a_ = t.nodes[ai].value.data;
    std::fill(o_.begin(), o_.end(), 0.0);
    for (int n = 0; n < N; ++n)
      for (std::size_t k = 0; k < inner; ++k) o_[k] += a_[n * inner + k];
    for (std::size_t k = 0; k < inner; ++k) o_[k] /= N;
  };
  nodes[oi].backward = [ai, oi, N, inner](Tape& t) {
    const auto& g = t.nodes[oi].grad.data;
    auto& ga = t.nodes[ai].grad.data;
    for (int n = 0; n < N; ++n)
      for (std::size_t k = 0; k < inner; ++k) ga[n * inner + k] += g[k] / N;
  };
  nodes[oi].forward(*this);
  return o;
}

Var Tape::mean_inner_bcast(Var a) {
  const Tensor& ta = value(a);
  if (ta.rank() < 3) throw Error("ShapeMismatch", "mean_inner_bcast: rank < 3");
  std::size_t groups =
      static_cast<std::size_t>(ta.shape[0]) * static_cast<std::size_t>(ta.shape[1]);
  std::size_t inner = ta.numel() / groups;
  int ai = a.id;
  Var o = push(Tensor(ta.shape), nullptr, nullptr);
  int oi = o.id;
  nodes[oi].forward = [ai, oi, groups, inner](Tape& t) {
    auto& o_ = t.nodes[oi].value.data;
    const auto& a_ = t.nodes[ai].value.data;
    for (std::size_t gi = 0; gi < groups; ++gi) {
      double s = 0.0;
      for (std::size_t k = 0; k < inner; ++k) s += a_[gi * inner + k];
      s /= static_cast<double>(inner);
      for (std::size_t k = 0; k < inner; ++k) o_[gi * inner + k] = s;
    }
  };
  nodes[oi].backward = [ai, oi, groups, inner](Tape& t) {
    const auto& g = t.nodes[oi].grad.data;
    auto& ga = t.nodes[ai].grad.data;
    for (std::size_t gi = 0; gi < groups; ++gi) {
      double s = 0.0;
      for (std::size_t k = 0; k < inner; ++k) s += g[gi * inner + k];
      s /= static_cast<double>(inner);
      for (std::size_t k = 0; k < inner; ++k) ga[gi * inner + k] += s;
    }
  };
  nodes[oi].forward(*this);
  return o;
}

Var Tape::gap(Var a) {
  const Tensor& ta = value(a);
  if (ta.rank() < 3) throw Error("ShapeMismatch", "gap: rank < 3");
  int N = ta.shape[0];
  int C = ta.shape[1];
  std::size_t inner = ta.numel() / (static_cast<std::size_t>(N) * C);
  int ai = a.id;
  Var o = push(Tensor({N, C}), nullptr, nullptr);
  int oi = o.id;
  nodes[oi].forward = [ai, oi, N, C, inner](Tape& t) {
    auto& o_ = t.nodes[oi].value.data;
    const auto& a_ = t.nodes[ai].value.data;
    for (int n = 0; n < N; ++n)
      for (int c = 0; c < C; ++c) {
        double s = 0.0;
        std::size_t base = (static_cast<std::size_t>(n) * C + c) * inner;
        for (std::size_t k = 0; k < inner; ++k) s += a_[base + k];
        o_[n * C + c] = s / static_cast<double>(inner);
      }
  };
  nodes[oi].backward = [ai, oi, N, C, inner](Tape& t) {
    const auto& g = t.nodes[oi].grad.data;
    auto& ga = t.nodes[ai].grad.data;
    for (int n = 0; n < N; ++n)
      for (int c = 0; c < C; ++c) {
        double gv = g[n * C + c] / static_cast<double>(inner);
        std::size_t base = (static_cast<std::size_t>(n) * C + c) * inner;
        for (std::size_t k = 0; k < inner; ++k) ga[base + k] += gv;
      }
  };
  nodes[oi].forward(*this);
  return o;
}

Var Tape::elem(Var a, int i, int j) {
  const Tensor& ta = value(a);
  if (ta.rank() != 2) throw Error("ShapeMismatch", "elem: rank != 2");
  if (i < 0 || i >= ta.shape[0] || j < 0 || j >= ta.shape[1]) {
    throw Error("IndexOutOfRange", "elem");
  }
  std::size_t idx = static_cast<std::size_t>(i) * ta.shape[1] + j;
  int ai = a.id;
  Var o = push(Tensor({1}), nullptr, nullptr);
  int oi = o.id;
  nodes[oi].forward = [ai, oi, idx](Tape& t) {
    t.nodes[oi].value.data[0] = t.nodes[ai].value.data[idx];
  };
  nodes[oi].backward = [ai, oi, idx](Tape& t) {
    t.nodes[ai].grad.data[idx] += t.nodes[oi].grad.data[0];
  };
  nodes[oi].forward(*this);
  return o;
}

Var Tape::scale_by_scalar(Var a, Var s) {
  if (value(s).numel() != 1) throw Error("ShapeMismatch", "scale_by_scalar");
  int ai = a.id, si = s.id;
  Var o = push(Tensor(value(a).shape), nullptr, nullptr);
  int oi = o.id;
  nodes[oi].forward = [ai, si, oi](Tape& t) {
    auto& o_ = t.nodes[oi].value.data;
    const auto& a_ = t.nodes[ai].value.data;
    double sv = t.nodes[si].value.data[0];
    for (std::size_t k = 0; k < o_.size(); ++k) o_[k] = a_[k] * sv;
  };
  nodes[oi].backward = [ai, si, oi](Tape& t) {
    const auto& g = t.nodes[oi].grad.data;
    const auto& a_ = t.nodes[ai].value.data;
    double sv = t.nodes[si].value.data[0];
    auto& ga = t.nodes[ai].grad.data;
    double gs = 0.0;
    for (std::size_t k = 0; k < g.size(); ++k) {
      ga[k] += g[k] * sv;
      gs += g[k] * a_[k];
    }
    t.nodes[si].grad.data[0] += gs;
  };
  nodes[oi].forward(*this);
  return o;
}

Var Tape::channel_affine(Var x, Var gamma, Var beta) {
  const Tensor& tx = value(x);
  if (tx.rank() < 2) throw Error("ShapeMismatch", "channel_affine: rank < 2");
  int C = tx.shape[1];
  if (value(gamma).shape != std::vector<int>{C} ||
      value(beta).shape != std::vector<int>{C}) {
    throw Error("ShapeMismatch", "channel_affine: params");
  }
  int N = tx.shape[0];
  std::size_t inner = tx.numel() / (static_cast<std::size_t>(N) * C);
  int xi = x.id, gi_ = gamma.id, bi = beta.id;
  Var o = push(Tensor(tx.shape), nullptr, nullptr);
  int oi = o.id;
  nodes[oi].forward = [xi, gi_, bi, oi, N, C, inner](Tape& t) {
    auto& o_ = t.nodes[oi].value.data;
    const auto& x_ = t.nodes[xi].value.data;
    const auto& g_ = t.nodes[gi_].value.data;
    const auto& b_ = t.nodes[bi].value.data;
    for (int n = 0; n < N; ++n)
      for (int c = 0; c < C; ++c) {
        std::size_t base = (static_cast<std::size_t>(n) * C + c) * inner;
        for (std::size_t k = 0; k < inner; ++k)
          o_[base + k] = x_[base + k] * g_[c] + b_[c];
      }
  };
  nodes[oi].backward = [xi, gi_, bi, oi, N, C, inner](Tape& t) {
    const auto& g = t.nodes[oi].grad.data;
    const auto& x_ = t.nodes[xi].value.data;
    const auto& gam = t.nodes[gi_].value.data;
    auto& gx = t.nodes[xi].grad.data;
    auto& gg = t.nodes[gi_].grad.data;
    auto& gb = t.nodes[bi].grad.data;
    for (int n = 0; n < N; ++n)
      for (int c = 0; c < C; ++c) {
        std::size_t base = (static_cast<std::size_t>(n) * C + c) * inner;
        for (std::size_t k = 0; k < inner; ++k) {
          gx[base + k] += g[base + k] * gam[c];
          gg[c] += g[base + k] * x_[base + k];
          gb[c] += g[base + k];
        }
      }
  };
  nodes[oi].forward(*this);
  return o;
}

Var Tape::linear(Var x, Var w, Var b) {
  const Tensor& tx = value(x);
  const Tensor& tw = value(w);
  if (tx.rank() != 2 || tw.rank() != 2 || tx.shape[1] != tw.shape[1] ||
      value(b).shape != std::vector<int>{tw.shape[0]}) {
    throw Error("ShapeMismatch", "linear: " + shape_str(tx.shape) + " x " +
                                     shape_str(tw.shape));
  }
  int N = tx.shape[0], I = tx.shape[1], O = tw.shape[0];
  int xi = x.id, wi = w.id, bi = b.id;
  Var o = push(Tensor({N, O}), nullptr, nullptr);
  int oi = o.id;
  nodes[oi].forward = [xi, wi, bi, oi, N, I, O](Tape& t) {
    auto& o_ = t.nodes[oi].value.data;
    const auto& x_ = t.nodes[xi].value.data;
    const auto& w_ = t.nodes[wi].value.data;
    const auto& b_ = t.nodes[bi].value.data;
    for (int n = 0; n < N; ++n)
      for (int q = 0; q < O; ++q) {
        double s = b_[q];
        for (int i = 0; i < I; ++i) s += x_[n * I + i] * w_[q * I + i];
        o_[n * O + q] = s;
      }
  };
  nodes[oi].backward = [xi, wi, bi, oi, N, I, O](Tape& t) {
    const auto& g = t.nodes[oi].grad.data;
    const auto& x_ = t.nodes[xi].value.data;
    const auto& w_ = t.nodes[wi].value.data;
    auto& gx = t.nodes[xi].grad.data;
    auto& gw = t.nodes[wi].grad.data;
    auto& gb = t.nodes[bi].grad.data;
    for (int n = 0; n < N; ++n)
      for (int q = 0; q < O; ++q) {
        double gv = g[n * O + q];
        gb[q] += gv;
        for (int i = 0; i < I; ++i) {
          gx[n * I + i] += gv * w_[q * I + i];
          gw[q * I + i] += gv * x_[n * I + i];
        }
      }
  };
  nodes[oi].forward(*this);
  return o;
}

namespace {

struct ConvDims {
  int N, Ci, Ti, Hi, Wi, Co, Kt, Kh, Kw, To, Ho, Wo;
  Stride3 s;
  Pad3 p;
};

}  // namespace

Var Tape::conv3d(Var x, Var w, Var b, Stride3 s, Pad3 p) {
  const Tensor& tx = value(x);
  const Tensor& tw = value(w);
  if (tx.rank() != 5 || tw.rank() != 5 || tw.shape[1] != tx.shape[1]) {
    throw Error("ShapeMismatch", "conv3d: x " + shape_str(tx.shape) + " w " +
                                     shape_str(tw.shape));
  }
  ConvDims d;
  d.N = tx.shape[0];
  d.Ci = tx.shape[1];
  d.Ti = tx.shape[2];
  d.Hi = tx.shape[3];
  d.Wi = tx.shape[4];
  d.Co = tw.shape[0];
  d.Kt = tw.shape[2];
  d.Kh = tw.shape[3];
  d.Kw = tw.shape[4];
  d.s = s;
  d.p = p;
  d.To = (d.Ti + 2 * p.t - d.Kt) / s.t + 1;
  d.Ho = (d.Hi + 2 * p.h - d.Kh) / s.h + 1;
  d.Wo = (d.Wi + 2 * p.w - d.Kw) / s.w + 1;
  if (d.To <= 0 || d.Ho <= 0 || d.Wo <= 0) {
    throw Error("ShapeMismatch", "conv3d: empty output");
  }
  if (value(b).shape != std::vector<int>{d.Co}) {
    throw Error("ShapeMismatch", "conv3d: bias");
  }
  int xi = x.id, wi = w.id, bi = b.id;
  Var o = push(Tensor({d.N, d.Co, d.To, d.Ho, d.Wo}), nullptr, nullptr);
  int oi = o.id;
  nodes[oi].forward = [xi, wi, bi, oi, d](Tape& t) {
    auto& o_ = t.nodes[oi].value.data;
    const auto& x_ = t.nodes[xi].value.data;
    const auto& w_ = t.nodes[wi].value.data;
    const auto& b_ = t.nodes[bi].value.data;
    std::size_t oidx = 0;
    for (int n = 0; n < d.N; ++n)
      for (int co = 0; co < d.Co; ++co)
        for (int to = 0; to < d.To; ++to)
          for (int ho = 0; ho < d.Ho; ++ho)
            for (int wo = 0; wo < d.Wo; ++wo, ++oidx) {
              double acc = b_[co];
              for (int ci = 0; ci < d.Ci; ++ci)
                for (int kt = 0; kt < d.Kt; ++kt) {
                  int ti = to * d.s.t - d.p.t + kt;
                  if (ti < 0 || ti >= d.Ti) continue;
                  for (int kh = 0; kh < d.Kh; ++kh) {
                    int hi = ho * d.s.h - d.p.h + kh;
                    if (hi < 0 || hi >= d.Hi) continue;
                    for (int kw = 0; kw < d.Kw; ++kw) {
                      int wi2 = wo * d.s.w - d.p.w + kw;
                      if (wi2 < 0 || wi2 >= d.Wi) continue;
                      acc += x_[(((static_cast<std::size_t>(n) * d.Ci + ci) * d.Ti +
                                  ti) * d.Hi + hi) * d.Wi + wi2] *
                             w_[(((static_cast<std::size_t>(co) * d.Ci + ci) * d.Kt +
                                  kt) * d.Kh + kh) * d.Kw + kw];
                    }
                  }
                }
              o_[oidx] = acc;
            }
  };
  nodes[oi].backward = [xi, wi, bi, oi, d](Tape& t) {
    const auto& g = t.nodes[oi].grad.data;
    const auto& x_ = t.nodes[xi].value.data;
    const auto& w_ = t.nodes[wi].value.data;
    auto& gx = t.nodes[xi].grad.data;
    auto& gw = t.nodes[wi].grad.data;
    auto& gb = t.nodes[bi].grad.data;
    std::size_t oidx = 0;
    for (int n = 0; n < d.N; ++n)
      for (int co = 0; co < d.Co; ++co)
        for (int to = 0; to < d.To; ++to)
          for (int ho = 0; ho < d.Ho; ++ho)
            for (int wo = 0; wo < d.Wo; ++wo, ++oidx) {
              double gv = g[oidx];
              if (gv == 0.0) continue;
              gb[co] += gv;
              for (int ci = 0; ci < d.Ci; ++ci)
                for (int kt = 0; kt < d.Kt; ++kt) {
                  int ti = to * d.s.t - d.p.t + kt;
                  if (ti < 0 || ti >= d.Ti) continue;
                  for (int kh = 0; kh < d.Kh; ++kh) {
                    int hi = ho * d.s.h - d.p.h + kh;
                    if (hi < 0 || hi >= d.Hi) continue;
                    for (int kw = 0; kw < d.Kw; ++kw) {
                      int wi2 = wo * d.s.w - d.p.w + kw;
                      if (wi2 < 0 || wi2 >= d.Wi) continue;
                      std::size_t xoff =
                          (((static_cast<std::size_t>(n) * d.Ci + ci) * d.Ti + ti) *
                               d.Hi + hi) * d.Wi + wi2;
                      std::size_t woff =
                          (((static_cast<std::size_t>(co) * d.Ci + ci) * d.Kt + kt) *
                               d.Kh + kh) * d.Kw + kw;
                      gx[xoff] += gv * w_[woff];
                      gw[woff] += gv * x_[xoff];
                    }
                  }
                }
            }
  };
  nodes[oi].forward(*this);
  return o;
}

Var Tape::conv3d_transpose(Var x, Var w, Var b, Stride3 s, Pad3 p, Pad3 op) {
  const Tensor& tx = value(x);
  const Tensor& tw = value(w);
  if (tx.rank() != 5 || tw.rank() != 5 || tw.shape[0] != tx.shape[1]) {
    throw Error("ShapeMismatch", "conv3d_transpose: x " + shape_str(tx.shape) +
                                     " w " + shape_str(tw.shape));
  }
  ConvDims d;
  d.N = tx.shape[0];
  d.Ci = tx.shape[1];
  d.Ti = tx.shape[2];
  d.Hi = tx.shape[3];
  d.Wi = tx.shape[4];
  d.Co = tw.shape[1];
  d.Kt = tw.shape[2];
  d.Kh = tw.shape[3];
  d.Kw = tw.shape[4];
  d.s = s;
  d.p = p;
  d.To = (d.Ti - 1) * s.t - 2 * p.t + d.Kt + op.t;
  d.Ho = (d.Hi - 1) * s.h - 2 * p.h + d.Kh + op.h;
  d.Wo = (d.Wi - 1) * s.w - 2 * p.w + d.Kw + op.w;
  if (d.To <= 0 || d.Ho <= 0 || d.Wo <= 0) {
    throw Error("ShapeMismatch", "conv3d_transpose: empty output");
  }
  if (value(b).shape != std::vector<int>{d.Co}) {
    throw Error("ShapeMismatch", "conv3d_transpose: bias");
  }
  int xi = x.id, wi = w.id, bi = b.id;
  Var o = push(Tensor({d.N, d.Co, d.To, d.Ho, d.Wo}), nullptr, nullptr);
  int oi = o.id;
  nodes[oi].forward = [xi, wi, bi, oi, d](Tape& t) {
    auto& o_ = t.nodes[oi].value.data;
    const auto& x_ = t.nodes[xi].value.data;
    const auto& w_ = t.nodes[wi].value.data;
    const auto& b_ = t.nodes[bi].value.data;
    std::fill(o_.begin(), o_.end(), 0.0);
    for (int n = 0; n < d.N; ++n)
      for (int co = 0; co < d.Co; ++co) {
        std::size_t obase =
            (static_cast<std::size_t>(n) * d.Co + co) * d.To * d.Ho * d.Wo;
        for (std::size_t k = 0; k < static_cast<std::size_t>(d.To) * d.Ho * d.Wo;
             ++k)
          o_[obase + k] = b_[co];
      }
    std::size_t xidx = 0;
    for (int n = 0; n < d.N; ++n)
      for (int ci = 0; ci < d.Ci; ++ci)
        for (int ti = 0; ti < d.Ti; ++ti)
          for (int hi = 0; hi < d.Hi; ++hi)
            for (int wi2 = 0; wi2 < d.Wi; ++wi2, ++xidx) {
              double xv = x_[xidx];
              if (xv == 0.0) continue;
              for (int co = 0; co < d.Co; ++co)
                for (int kt = 0; kt < d.Kt; ++kt) {
                  int to = ti * d.s.t - d.p.t + kt;
                  if (to < 0 || to >= d.To) continue;
                  for (int kh = 0; kh < d.Kh; ++kh) {
                    int ho = hi * d.s.h - d.p.h + kh;
                    if (ho < 0 || ho >= d.Ho) continue;
                    for (int kw = 0; kw < d.Kw; ++kw) {
                      int wo = wi2 * d.s.w - d.p.w + kw;
                      if (wo < 0 || wo >= d.Wo) continue;
                      o_[(((static_cast<std::size_t>(n) * d.Co + co) * d.To + to) *
                              d.Ho + ho) * d.Wo + wo] +=
                          xv *
                          w_[(((static_cast<std::size_t>(ci) * d.Co + co) * d.Kt +
                               kt) * d.Kh + kh) * d.Kw + kw];
                    }
                  }
                }
            }
  };
  nodes[oi].backward = [xi, wi, bi, oi, d](Tape& t) {
    const auto& g = t.nodes[oi].grad.data;
    const auto& x_ = t.nodes[xi].value.data;
    const auto& w_ = t.nodes[wi].value.data;
    auto& gx = t.nodes[xi].grad.data;
    auto& gw = t.nodes[wi].grad.data;
    auto& gb = t.nodes[bi].grad.data;
    for (int n = 0; n < d.N; ++n)
      for (int co = 0; co < d.Co; ++co) {
        std::size_t obase =
            (static_cast<std::size_t>(n) * d.Co + co) * d.To * d.Ho * d.Wo;
        for (std::size_t k = 0; k < static_cast<std::size_t>(d.To) * d.Ho * d.Wo;
             ++k)
          gb[co] += g[obase + k];
      }
    std::size_t xidx = 0;
    for (int n = 0; n < d.N; ++n)
      for (int ci = 0; ci < d.Ci; ++ci)
        for (int ti = 0; ti < d.Ti; ++ti)
          for (int hi = 0; hi < d.Hi; ++hi)
            for (int wi2 = 0; wi2 < d.Wi; ++wi2, ++xidx) {
              double xv = x_[xidx];
              double gxacc = 0.0;
              for (int co = 0; co < d.Co; ++co)
                for (int kt = 0; kt < d.Kt; ++kt) {
                  int to = ti * d.s.t - d.p.t + kt;
                  if (to < 0 || to >= d.To) continue;
                  for (int kh = 0; kh < d.Kh; ++kh) {
                    int ho = hi * d.s.h - d.p.h + kh;
                    if (ho < 0 || ho >= d.Ho) continue;
                    for (int kw = 0; kw < d.Kw; ++kw) {
                      int wo = wi2 * d.s.w - d.p.w + kw;
                      if (wo < 0 || wo >= d.Wo) continue;
                      double gv =
                          g[(((static_cast<std::size_t>(n) * d.Co + co) * d.To +
                              to) * d.Ho + ho) * d.Wo + wo];
                      std::size_t woff =
                          (((static_cast<std::size_t>(ci) * d.Co + co) * d.Kt + kt) *
                               d.Kh + kh) * d.Kw + kw;
                      gxacc += gv * w_[woff];
                      gw[woff] += gv * xv;
                    }
                  }
                }
              gx[xidx] += gxacc;
            }
  };
  nodes[oi].forward(*this);
  return o;
}

Var Tape::row_softmax(Var x) {
  const Tensor& tx = value(x);
  if (tx.rank() != 2) throw Error("ShapeMismatch", "row_softmax: rank != 2");
  int R = tx.shape[0], C = tx.shape[1];
  int xi = x.id;
  Var o = push(Tensor(tx.shape), nullptr, nullptr);
  int oi = o.id;
  nodes[oi].forward = [xi, oi, R, C](Tape& t) {
    auto& o_ = t.nodes[oi].value.data;
    const auto& x_ = t.nodes[xi].value.data;
    for (int r = 0; r < R; ++r) {
      double mx = x_[r * C];
      for (int c = 1; c < C; ++c) mx = std::max(mx, x_[r * C + c]);
      double z = 0.0;
      for (int c = 0; c < C; ++c) {
        o_[r * C + c] = std::exp(x_[r * C + c] - mx);
        z += o_[r * C + c];
      }
      for (int c = 0; c < C; ++c) o_[r * C + c] /= z;
    }
  };
  nodes[oi].backward = [xi, oi, R, C](Tape& t) {
    const auto& g = t.nodes[oi].grad.data;
    const auto& y = t.nodes[oi].value.data;
    auto& gx = t.nodes[xi].grad.data;
    for (int r = 0; r < R; ++r) {
      double dot = 0.0;
      for (int c = 0; c < C; ++c) dot += g[r * C + c] * y[r * C + c];
      for (int c = 0; c < C; ++c)
        gx[r * C + c] += (g[r * C + c] - dot) * y[r * C + c];
    }
  };
  nodes[oi].forward(*this);
  return o;
}

Var Tape::softmax_xent(Var logits, std::vector<int> labels) {
  const Tensor& tl = value(logits);
  if (tl.rank() != 2 || static_cast<std::size_t>(tl.shape[0]) != labels.size()) {
    throw Error("ShapeMismatch", "softmax_xent");
  }
  int N = tl.shape[0], K = tl.shape[1];
  for (int y : labels) {
    if (y < 0 || y >= K) throw Error("LabelOutOfRange", std::to_string(y));
  }
  int li = logits.id;
  Var o = push(Tensor({1}), nullptr, nullptr);
  int oi = o.id;
  auto ys = std::make_shared<std::vector<int>>(std::move(labels));
  nodes[oi].forward = [li, oi, N, K, ys](Tape& t) {
    const auto& z = t.nodes[li].value.data;
    double total = 0.0;
    for (int n = 0; n < N; ++n) {
      double mx = z[n * K];
      for (int k = 1; k < K; ++k) mx = std::max(mx, z[n * K + k]);
      double lse = 0.0;
      for (int k = 0; k < K; ++k) lse += std::exp(z[n * K + k] - mx);
      lse = std::log(lse) + mx;
      total += lse - z[n * K + (*ys)[n]];
    }
    t.nodes[oi].value.data[0] = total / N;
  };
  nodes[oi].backward = [li, oi, N, K, ys](Tape& t) {
    double g = t.nodes[oi].grad.data[0];
    const auto& z = t.nodes[li].value.data;
    auto& gz = t.nodes[li].grad.data;
    for (int n = 0; n < N; ++n) {
      double mx = z[n * K];
      for (int k = 1; k < K; ++k) mx = std::max(mx, z[n * K + k]);
      double sum = 0.0;
      for (int k = 0; k < K; ++k) sum += std::exp(z[n * K + k] - mx);
      for (int k = 0; k < K; ++k) {
        double p = std::exp(z[n * K + k] - mx) / sum;
        gz[n * K + k] += g * (p - (k == (*ys)[n] ? 1.0 : 0.0)) / N;
      }
    }
  };
  nodes[oi].forward(*this);
  return o;
}

void Tape::forward_all() {
  for (auto& n : nodes) {
    if (n.forward && !n.frozen) n.forward(*this);
  }
}

void Tape::backward(Var loss) {
  if (value(loss).numel() != 1) {
    throw Error("ShapeMismatch", "backward: loss must be scalar");
  }
  for (auto& n : nodes) std::fill(n.grad.data.begin(), n.grad.data.end(), 0.0);
  nodes[loss.id].grad.data[0] = 1.0;
  for (int i = loss.id; i >= 0; --i) {
    if (nodes[i].backward) nodes[i].backward(*this);
  }
}

double Tape::loss_under_perturbation(Var loss, Var leaf_var, std::size_t idx,
                                     double delta) {
  double& slot = nodes[leaf_var.id].value.data[idx];
  double saved = slot;
  slot = saved + delta;
  forward_all();
  double out = nodes[loss.id].value.data[0];
  slot = saved;
  forward_all();
  return out;
}

}  // namespace pogmv
