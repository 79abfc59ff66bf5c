#include "teaf/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <unordered_set>

namespace teaf::ag {

namespace {

using NodePtr = std::shared_ptr<Node>;

Var make_node(Tensor val, std::vector<NodePtr> parents, std::function<void(Node&)> back) {
  Var v = Var::leaf(std::move(val));
  v.node()->parents = std::move(parents);
  v.node()->backward = std::move(back);
  return v;
}

Tensor& grad_of(Node& n) {
  if (!n.has_grad) {
    n.grad = Tensor::zeros(n.val.shape());
    n.has_grad = true;
  }
  return n.grad;
}

void require(bool ok, const char* msg) {
  if (!ok) throw std::invalid_argument(msg);
}

}  // namespace

Var add(const Var& a, const Var& b) {
  Tensor out = teaf::add(a.value(), b.value());
  NodePtr pa = a.node(), pb = b.node();
  return make_node(std::move(out), {pa, pb}, [pa, pb](Node& self) {
    Tensor& ga = grad_of(*pa);
    Tensor& gb = grad_of(*pb);
    for (std::int64_t i = 0; i < self.grad.size(); ++i) {
      ga[i] += self.grad[i];
      gb[i] += self.grad[i];
    }
  });
}

Var sub(const Var& a, const Var& b) {
  Tensor out = teaf::sub(a.value(), b.value());
  NodePtr pa = a.node(), pb = b.node();
  return make_node(std::move(out), {pa, pb}, [pa, pb](Node& self) {
    Tensor& ga = grad_of(*pa);
    Tensor& gb = grad_of(*pb);
    for (std::int64_t i = 0; i < self.grad.size(); ++i) {
      ga[i] += self.grad[i];
      gb[i] -= self.grad[i];
    }
  });
}

Var mul(const Var& a, const Var& b) {
  Tensor out = teaf::mul(a.value(), b.value());
  NodePtr pa = a.node(), pb = b.node();
  return make_node(std::move(out), {pa, pb}, [pa, pb](Node& self) {
    Tensor& ga = grad_of(*pa);
    Tensor& gb = grad_of(*pb);
    for (std::int64_t i = 0; i < self.grad.size(); ++i) {
      ga[i] += self.grad[i] * pb->val[i];
      gb[i] += self.grad[i] * pa->val[i];
    }
  });
}

Var relu(const Var& a) {
  Tensor out = teaf::relu(a.value());
  NodePtr pa = a.node();
  return make_node(std::move(out), {pa}, [pa](Node& self) {
    Tensor& ga = grad_of(*pa);
    for (std::int64_t i = 0; i < self.grad.size(); ++i)
      if (pa->val[i] > 0.0) ga[i] += self.grad[i];
  });
}

Var reshape(const Var& a, std::vector<int> shape) {
  Tensor out = a.value().reshaped(std::move(shape));
  NodePtr pa = a.node();
  return make_node(std::move(out), {pa}, [pa](Node& self) {
    Tensor& ga = grad_of(*pa);
    for (std::int64_t i = 0; i < self.grad.size(); ++i) ga[i] += self.grad[i];
  });
}

Var scale_by(const Var& x, const Var& alpha) {
  require(alpha.value().size() == 1, "scale_by: alpha must be a 1-element tensor");
  const double a = alpha.value()[0];
  Tensor out = teaf::scale(x.value(), a);
  NodePtr px = x.node(), pa = alpha.node();
  return make_node(std::move(out), {px, pa}, [px, pa](Node& self) {
    Tensor& gx = grad_of(*px);
    Tensor& ga = grad_of(*pa);
    const double av = pa->val[0];
    double acc = 0.0;
    for (std::int64_t i = 0; i < self.grad.size(); ++i) {
      gx[i] += av * self.grad[i];
      acc += self.grad[i] * px->val[i];
    }
    ga[0] += acc;
  });
}

Var matmul(const Var& x, const Var& w) {
  Tensor out = linear_project(x.value(), w.value());
  NodePtr px = x.node(), pw = w.node();
  return make_node(std::move(out), {px, pw}, [px, pw](Node& self) {
    const int n = px->val.dim(0), din = px->val.dim(1), dout = pw->val.dim(1);
    Tensor& gx = grad_of(*px);
    Tensor& gw = grad_of(*pw);
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < dout; ++j) {
        const double g = self.grad.at(i, j);
        if (g == 0.0) continue;
        for (int d = 0; d < din; ++d) {
          gx.at(i, d) += g * pw->val.at(d, j);
          gw.at(d, j) += g * px->val.at(i, d);
        }
      }
    }
  });
}

Var softmax_rows(const Var& x) {
  Tensor out = teaf::softmax_rows(x.value());
  NodePtr px = x.node();
  return make_node(out, {px}, [px, out](Node& self) {
    const int n = out.dim(0), m = out.dim(1);
    Tensor& gx = grad_of(*px);
    for (int i = 0; i < n; ++i) {
      double dot = 0.0;
      for (int j = 0; j < m; ++j) dot += self.grad.at(i, j) * out.at(i, j);
      for (int j = 0; j < m; ++j) gx.at(i, j) += out.at(i, j) * (self.grad.at(i, j) - dot);
    }
  });
}

Var conv2d_depthwise(const Var& x, const Var& kernel, PadMode pad) {
  Tensor out = teaf::conv2d_depthwise(x.value(), kernel.value(), pad);
  NodePtr px = x.node(), pk = kernel.node();
  return make_node(std::move(out), {px, pk}, [px, pk, pad](Node& self) {
    const Tensor& xv = px->val;
    const Tensor& kv = pk->val;
    const int h = xv.dim(0), w = xv.dim(1), c = xv.dim(2), k = kv.dim(0);
    const int r = k / 2;
    Tensor& gx = grad_of(*px);
    Tensor& gk = grad_of(*pk);
    for (int i = 0; i < h; ++i) {
      for (int j = 0; j < w; ++j) {
        for (int ch = 0; ch < c; ++ch) {
          const double g = self.grad.at(i, j, ch);
          if (g == 0.0) continue;
          for (int ky = 0; ky < k; ++ky) {
            for (int kx = 0; kx < k; ++kx) {
              const int sy = i + ky - r, sx = j + kx - r;
              if (sy < 0 || sy >= h || sx < 0 || sx >= w) {
                if (pad == PadMode::Zero) continue;
                const int cy = std::clamp(sy, 0, h - 1), cx = std::clamp(sx, 0, w - 1);
                gx.at(cy, cx, ch) += g * kv.at(ky, kx, ch);
                gk.at(ky, kx, ch) += g * xv.at(cy, cx, ch);
              } else {
                gx.at(sy, sx, ch) += g * kv.at(ky, kx, ch);
                gk.at(ky, kx, ch) += g * xv.at(sy, sx, ch);
              }
            }
          }
        }
      }
    }
  });
}

Var avg_pool_adaptive(const Var& x, int oh, int ow) {
  Tensor out = teaf::avg_pool_adaptive(x.value(), oh, ow);
  NodePtr px = x.node();
  return make_node(std::move(out), {px}, [px, oh, ow](Node& self) {
    const int h = px->val.dim(0), w = px->val.dim(1), c = px->val.dim(2);
    Tensor& gx = grad_of(*px);
    for (int i = 0; i < oh; ++i) {
      const int y0 = static_cast<int>(static_cast<std::int64_t>(i) * h / oh);
      const int y1 = static_cast<int>(static_cast<std::int64_t>(i + 1) * h / oh);
      for (int j = 0; j < ow; ++j) {
        const int x0 = static_cast<int>(static_cast<std::int64_t>(j) * w / ow);
        const int x1 = static_cast<int>(static_cast<std::int64_t>(j + 1) * w / ow);
        const double inv = 1.0 / (static_cast<double>(y1 - y0) * (x1 - x0));
        for (int ch = 0; ch < c; ++ch) {
          const double g = self.grad.at(i, j, ch) * inv;
          for (int y = y0; y < y1; ++y)
            for (int xx = x0; xx < x1; ++xx) gx.at(y, xx, ch) += g;
        }
      }
    }
  });
}

Var max_pool_adaptive(const Var& x, int oh, int ow) {
  Tensor out = teaf::max_pool_adaptive(x.value(), oh, ow);
  NodePtr px = x.node();
  return make_node(std::move(out), {px}, [px, oh, ow](Node& self) {
    const int h = px->val.dim(0), w = px->val.dim(1), c = px->val.dim(2);
    Tensor& gx = grad_of(*px);
    for (int i = 0; i < oh; ++i) {
      const int y0 = static_cast<int>(static_cast<std::int64_t>(i) * h / oh);
      const int y1 = static_cast<int>(static_cast<std::int64_t>(i + 1) * h / oh);
      for (int j = 0; j < ow; ++j) {
        const int x0 = static_cast<int>(static_cast<std::int64_t>(j) * w / ow);
        const int x1 = static_cast<int>(static_cast<std::int64_t>(j + 1) * w / ow);
        for (int ch = 0; ch < c; ++ch) {
          /* first maximum in scan order, matching the forward pass */
          int by = y0, bx = x0;
          double best = px->val.at(y0, x0, ch);
          for (int y = y0; y < y1; ++y)
            for (int xx = x0; xx < x1; ++xx)
              if (px->val.at(y, xx, ch) > best) {
                best = px->val.at(y, xx, ch);
                by = y;
                bx = xx;
              }
          gx.at(by, bx, ch) += self.grad.at(i, j, ch);
        }
      }
    }
  });
}

Var gather_hw(const Var& x, const Tensor& coords) {
  Tensor out = teaf::gather_hw(x.value(), coords);
  NodePtr px = x.node();
  return make_node(std::move(out), {px}, [px, coords](Node& self) {
    const int h = px->val.dim(0), w = px->val.dim(1), c = px->val.dim(2);
    Tensor& gx = grad_of(*px);
    for (int i = 0; i < h; ++i) {
      for (int j = 0; j < w; ++j) {
        const int sy = round_clamp(coords.at(i, j, 0), 0, h - 1);
        const int sx = round_clamp(coords.at(i, j, 1), 0, w - 1);
        for (int ch = 0; ch < c; ++ch) gx.at(sy, sx, ch) += self.grad.at(i, j, ch);
      }
    }
  });
}

Var pixel_shuffle(const Var& x, int r) {
  Tensor out = teaf::pixel_shuffle(x.value(), r);
  NodePtr px = x.node();
  return make_node(std::move(out), {px}, [px, r](Node& self) {
    const int h = px->val.dim(0), w = px->val.dim(1), c = px->val.dim(2);
    const int co = c / (r * r);
    Tensor& gx = grad_of(*px);
    for (int i = 0; i < h; ++i)
      for (int j = 0; j < w; ++j)
        for (int ch = 0; ch < co; ++ch)
          for (int dy = 0; dy < r; ++dy)
            for (int dx = 0; dx < r; ++dx)
              gx.at(i, j, ch * r * r + dy * r + dx) += self.grad.at(i * r + dy, j * r + dx, ch);
  });
}

namespace {

/* Shared attention backward for one query over an explicit key set:
 *   a = softmax(q.K^T / sqrt(d));  out = a.V
 *   dV[j] += a_j g;  ds_j = a_j (g.v_j - sum_l a_l g.v_l)
 *   dq += sum_j ds_j k_j / sqrt(d);  dK[j] += ds_j q / sqrt(d) */
void attention_backward_one(const double* q, const Tensor& kf, const Tensor& vf, const int* taps,
                            int ntaps, int d, double inv_sqrt_d, const double* g, double* gq,
                            Tensor& gk, Tensor& gv, std::vector<double>& weights,
                            std::vector<double>& gdotv) {
  weights.resize(static_cast<std::size_t>(ntaps));
  gdotv.resize(static_cast<std::size_t>(ntaps));
  double mx = -1e300;
  for (int t = 0; t < ntaps; ++t) {
    const double* k = kf.data() + static_cast<std::int64_t>(taps[t]) * d;
    double acc = 0.0;
    for (int j = 0; j < d; ++j) acc += q[j] * k[j];
    weights[static_cast<std::size_t>(t)] = acc * inv_sqrt_d;
    mx = std::max(mx, weights[static_cast<std::size_t>(t)]);
  }
  double denom = 0.0;
  for (int t = 0; t < ntaps; ++t) {
    double e = std::exp(weights[static_cast<std::size_t>(t)] - mx);
    weights[static_cast<std::size_t>(t)] = e;
    denom += e;
  }
  double mix = 0.0;
  for (int t = 0; t < ntaps; ++t) {
    weights[static_cast<std::size_t>(t)] /= denom;
    const double* v = vf.data() + static_cast<std::int64_t>(taps[t]) * d;
    double acc = 0.0;
    for (int j = 0; j < d; ++j) acc += g[j] * v[j];
    gdotv[static_cast<std::size_t>(t)] = acc;
    mix += weights[static_cast<std::size_t>(t)] * acc;
  }
  for (int t = 0; t < ntaps; ++t) {
    const double a = weights[static_cast<std::size_t>(t)];
    const double ds = a * (gdotv[static_cast<std::size_t>(t)] - mix);
    const double* k = kf.data() + static_cast<std::int64_t>(taps[t]) * d;
    double* gkr = gk.data() + static_cast<std::int64_t>(taps[t]) * d;
    double* gvr = gv.data() + static_cast<std::int64_t>(taps[t]) * d;
    for (int j = 0; j < d; ++j) {
      gq[j] += ds * k[j] * inv_sqrt_d;
      gkr[j] += ds * q[j] * inv_sqrt_d;
      gvr[j] += a * g[j];
    }
  }
}

}  // namespace

Var windowed_attention(const Var& q, const Var& k, const Var& v,
                       std::shared_ptr<const WindowTable> table) {
  Tensor out = windowed_attention_core(q.value(), k.value(), v.value(), *table, nullptr);
  NodePtr pq = q.node(), pk = k.node(), pv = v.node();
  return make_node(std::move(out), {pq, pk, pv}, [pq, pk, pv, table](Node& self) {
    const int n = pq->val.dim(0), d = pq->val.dim(1);
    const int tpq = table->taps_per_query;
    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
    Tensor& gq = grad_of(*pq);
    Tensor& gk = grad_of(*pk);
    Tensor& gv = grad_of(*pv);
    std::vector<double> weights, gdotv;
    for (int i = 0; i < n; ++i) {
      attention_backward_one(pq->val.data() + static_cast<std::int64_t>(i) * d, pk->val, pv->val,
                             table->taps.data() + static_cast<std::int64_t>(i) * tpq, tpq, d,
                             inv_sqrt_d, self.grad.data() + static_cast<std::int64_t>(i) * d,
                             gq.data() + static_cast<std::int64_t>(i) * d, gk, gv, weights, gdotv);
    }
  });
}

Var global_attention(const Var& q, const Var& ktok, const Var& vtok, bool dsa_phase) {
  Tensor out = global_attention_core(q.value(), ktok.value(), vtok.value(), dsa_phase, nullptr);
  NodePtr pq = q.node(), pk = ktok.node(), pv = vtok.node();
  return make_node(std::move(out), {pq, pk, pv}, [pq, pk, pv](Node& self) {
    const int n = pq->val.dim(0), d = pq->val.dim(1), m = pk->val.dim(0);
    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
    Tensor& gq = grad_of(*pq);
    Tensor& gk = grad_of(*pk);
    Tensor& gv = grad_of(*pv);
    std::vector<int> taps(static_cast<std::size_t>(m));
    for (int j = 0; j < m; ++j) taps[static_cast<std::size_t>(j)] = j;
    std::vector<double> weights, gdotv;
    for (int i = 0; i < n; ++i) {
      attention_backward_one(pq->val.data() + static_cast<std::int64_t>(i) * d, pk->val, pv->val,
                             taps.data(), m, d, inv_sqrt_d,
                             self.grad.data() + static_cast<std::int64_t>(i) * d,
                             gq.data() + static_cast<std::int64_t>(i) * d, gk, gv, weights, gdotv);
    }
  });
}

Var sum(const Var& x) {
  double acc = 0.0;
  for (std::int64_t i = 0; i < x.value().size(); ++i) acc += x.value()[i];
  NodePtr px = x.node();
  return make_node(Tensor::scalar(acc), {px}, [px](Node& self) {
    Tensor& gx = grad_of(*px);
    const double g = self.grad[0];
    for (std::int64_t i = 0; i < gx.size(); ++i) gx[i] += g;
  });
}

Var dot_const(const Var& x, Tensor w) {
  require(x.value().size() == w.size(), "dot_const: weight count mismatch");
  double acc = 0.0;
  for (std::int64_t i = 0; i < w.size(); ++i) acc += x.value()[i] * w[i];
  NodePtr px = x.node();
  return make_node(Tensor::scalar(acc), {px}, [px, w](Node& self) {
    Tensor& gx = grad_of(*px);
    const double g = self.grad[0];
    for (std::int64_t i = 0; i < gx.size(); ++i) gx[i] += g * w[i];
  });
}

Var l1_loss(const Var& pred, Tensor target) {
  require(pred.value().size() == target.size(), "l1_loss: target shape mismatch");
  const std::int64_t n = target.size();
  double acc = 0.0;
  for (std::int64_t i = 0; i < n; ++i) acc += std::abs(pred.value()[i] - target[i]);
  acc /= static_cast<double>(n);
  NodePtr px = pred.node();
  return make_node(Tensor::scalar(acc), {px}, [px, target, n](Node& self) {
    Tensor& gx = grad_of(*px);
    const double g = self.grad[0] / static_cast<double>(n);
    for (std::int64_t i = 0; i < n; ++i) {
      const double r = px->val[i] - target[i];
      if (r > 0.0)
        gx[i] += g;
      else if (r < 0.0)
        gx[i] -= g;
    }
  });
}

void backward(const Var& root) {
  require(root.valid(), "backward: invalid root");
  require(root.value().size() == 1, "backward: root must be scalar");

  /* Post-order DFS over parents; reversed, it runs every consumer before
   * its producers so gradients are complete when a node propagates. */
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  struct Frame {
    Node* n;
    std::size_t next;
  };
  std::vector<Frame> stack;
  stack.push_back({root.node().get(), 0});
  seen.insert(root.node().get());
  while (!stack.empty()) {
    Frame& f = stack.back();
    if (f.next < f.n->parents.size()) {
      Node* p = f.n->parents[f.next++].get();
      if (seen.insert(p).second) stack.push_back({p, 0});
    } else {
      order.push_back(f.n);
      stack.pop_back();
    }
  }

  for (Node* n : order) {
    n->grad = Tensor::zeros(n->val.shape());
    n->has_grad = true;
  }
  root.node()->grad[0] = 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward) n->backward(*n);
  }
}

double grad_check(const std::function<Var(const Var&)>& f, const Tensor& x0, double eps) {
  Var leaf = Var::leaf(x0);
  Var y = f(leaf);
  if (y.value().size() != 1) throw std::invalid_argument("grad_check: f must return a scalar");
  backward(y);
  const Tensor g = leaf.grad_or_zero();

  Tensor fd = Tensor::zeros(x0.shape());
  Tensor xp = x0;
  for (std::int64_t i = 0; i < x0.size(); ++i) {
    const double orig = xp[i];
    xp[i] = orig + eps;
    const double fp = f(Var::leaf(xp)).value()[0];
    xp[i] = orig - eps;
    const double fm = f(Var::leaf(xp)).value()[0];
    xp[i] = orig;
    fd[i] = (fp - fm) / (2.0 * eps);
  }

  double scale = 1e-30;
  for (std::int64_t i = 0; i < g.size(); ++i)
    scale = std::max({scale, std::abs(g[i]), std::abs(fd[i])});
  double worst = 0.0;
  for (std::int64_t i = 0; i < g.size(); ++i)
    worst = std::max(worst, std::abs(g[i] - fd[i]) / scale);
  return worst;
}

}  // namespace teaf::ag
