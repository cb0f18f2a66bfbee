#include "eeglrp/graph.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <unordered_set>

namespace eeglrp {

namespace {

std::atomic<uint64_t> g_node_counter{1};

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

// r / (y + eps*sign(y)), with sign(0) taken as +1.
Tensor stab_div(const Tensor& r, const Tensor& y, double eps) {
  Tensor out(r.shape());
  const double* pr = r.data();
  const double* py = y.data();
  double* po = out.data();
  const int64_t n = r.numel();
  for (int64_t i = 0; i < n; ++i) {
    const double s = (py[i] >= 0.0) ? 1.0 : -1.0;
    po[i] = pr[i] / (py[i] + eps * s);
  }
  return out;
}

// C[m,n] += A[m,k] * B[k,n]
void gemm_nn(int m, int k, int n, const double* A, const double* B, double* C) {
  for (int i = 0; i < m; ++i) {
    const double* a = A + static_cast<int64_t>(i) * k;
    double* c = C + static_cast<int64_t>(i) * n;
    for (int p = 0; p < k; ++p) {
      const double av = a[p];
      const double* b = B + static_cast<int64_t>(p) * n;
      for (int j = 0; j < n; ++j) c[j] += av * b[j];
    }
  }
}

// C[m,n] += A[m,k] * B[n,k]^T
void gemm_nt(int m, int k, int n, const double* A, const double* B, double* C) {
  for (int i = 0; i < m; ++i) {
    const double* a = A + static_cast<int64_t>(i) * k;
    double* c = C + static_cast<int64_t>(i) * n;
    for (int j = 0; j < n; ++j) {
      const double* b = B + static_cast<int64_t>(j) * k;
      double acc = 0.0;
      for (int p = 0; p < k; ++p) acc += a[p] * b[p];
      c[j] += acc;
    }
  }
}

// C[m,n] += A[k,m]^T * B[k,n]
void gemm_tn(int m, int k, int n, const double* A, const double* B, double* C) {
  for (int p = 0; p < k; ++p) {
    const double* a = A + static_cast<int64_t>(p) * m;
    const double* b = B + static_cast<int64_t>(p) * n;
    for (int i = 0; i < m; ++i) {
      const double av = a[i];
      double* c = C + static_cast<int64_t>(i) * n;
      for (int j = 0; j < n; ++j) c[j] += av * b[j];
    }
  }
}

void check_finite(const Tensor& t, const char* op) {
  if (!t.all_finite()) throw StateError(std::string(op) + " produced a non-finite value");
}

}  // namespace

void RuleConfig::validate() const {
  if (!(epsilon > 0.0)) throw ConfigError("RuleConfig.epsilon must be > 0");
  if (gamma < 0.0) throw ConfigError("RuleConfig.gamma must be >= 0");
  if (!(bilinear_split > 0.0 && bilinear_split <= 1.0))
    throw ConfigError("RuleConfig.bilinear_split must be in (0, 1]");
}

void Adjoints::accumulate(const Node* n, Tensor t) {
  if (!n->requires_grad()) return;
  auto it = map_.find(n);
  if (it == map_.end()) {
    map_.emplace(n, std::move(t));
  } else {
    add_into(it->second, t);
  }
}

const Tensor* Adjoints::find(const Node* n) const {
  auto it = map_.find(n);
  return it == map_.end() ? nullptr : &it->second;
}

Tensor Adjoints::take(const Node* n) {
  auto it = map_.find(n);
  if (it == map_.end())
    throw StateError("no adjoint recorded for the requested node");
  Tensor t = std::move(it->second);
  map_.erase(it);
  return t;
}

Node::Node(Tensor value, std::vector<Var> inputs, Rule rule)
    : value_(std::move(value)), inputs_(std::move(inputs)), rule_(rule) {
  id_ = g_node_counter.fetch_add(1);
  for (const auto& in : inputs_)
    if (in && in->requires_grad()) requires_grad_ = true;
}

namespace {

struct LeafNode final : Node {
  LeafNode(Tensor v, bool rg) : Node(std::move(v), {}, Rule::Standard) { requires_grad_ = rg; }
  LeafNode(const Tensor* v, bool rg) : Node(Tensor{}, {}, Rule::Standard) {
    external_ = v;
    requires_grad_ = rg;
  }
  void backward(const Tensor&, ReverseMode, const RuleConfig&, Adjoints&) const override {}
};

struct MatmulNode final : Node {
  MatmulNode(Tensor v, Var a, Var b, Rule rule) : Node(std::move(v), {std::move(a), std::move(b)}, rule) {}

  void backward(const Tensor& adj, ReverseMode mode, const RuleConfig& rc,
                Adjoints& sink) const override {
    const Tensor& a = in(0);
    const Tensor& b = in(1);
    const bool batched = a.rank() == 3;
    const int nb = batched ? a.dim(0) : 1;
    const int m = a.dim(batched ? 1 : 0);
    const int k = a.dim(batched ? 2 : 1);
    const int n = b.dim(batched ? 2 : 1);

    Tensor src = adj;  // gradient case
    double split_a = 1.0, split_b = 1.0;
    if (mode == ReverseMode::Relevance) {
      src = stab_div(adj, value(), rc.epsilon);
      if (rule_ == Rule::Bilinear) {
        split_a = split_b = rc.bilinear_split;
        // value-path-identity: attention weights act as detached constants,
        // the value factor carries all relevance
        if (rc.softmax_rule == RuleConfig::SoftmaxRule::ValuePathIdentity &&
            inp(0)->rule() == Rule::Softmax) {
          split_a = 0.0;
          split_b = 1.0;
        }
      }
    }

    if (split_a != 0.0 && inp(0)->requires_grad()) {
      Tensor ga(a.shape());
      for (int bi = 0; bi < nb; ++bi)
        gemm_nt(m, n, k, src.data() + static_cast<int64_t>(bi) * m * n,
                b.data() + static_cast<int64_t>(bi) * k * n,
                ga.data() + static_cast<int64_t>(bi) * m * k);
      if (mode == ReverseMode::Relevance) {
        double* p = ga.data();
        const double* pa = a.data();
        for (int64_t i = 0; i < ga.numel(); ++i) p[i] *= split_a * pa[i];
      }
      sink.accumulate(inp(0), std::move(ga));
    }
    if (inp(1)->requires_grad()) {
      Tensor gb(b.shape());
      for (int bi = 0; bi < nb; ++bi)
        gemm_tn(k, m, n, a.data() + static_cast<int64_t>(bi) * m * k,
                src.data() + static_cast<int64_t>(bi) * m * n,
                gb.data() + static_cast<int64_t>(bi) * k * n);
      if (mode == ReverseMode::Relevance) {
        double* p = gb.data();
        const double* pb = b.data();
        for (int64_t i = 0; i < gb.numel(); ++i) p[i] *= split_b * pb[i];
      }
      sink.accumulate(inp(1), std::move(gb));
    }
  }
};

struct LinearNode final : Node {
  bool has_bias;

  LinearNode(Tensor v, Var x, Var w, Var b, Rule rule, bool bias)
      : Node(std::move(v), b ? std::vector<Var>{std::move(x), std::move(w), std::move(b)}
                             : std::vector<Var>{std::move(x), std::move(w)}, rule),
        has_bias(bias) {}

  void backward(const Tensor& adj, ReverseMode mode, const RuleConfig& rc,
                Adjoints& sink) const override {
    const Tensor& x = in(0);
    const Tensor& w = in(1);
    const int nrows = x.dim(0);
    const int din = x.dim(1);
    const int dout = w.dim(0);

    if (mode == ReverseMode::Gradient) {
      if (inp(0)->requires_grad()) {
        Tensor gx({nrows, din});
        gemm_nn(nrows, dout, din, adj.data(), w.data(), gx.data());
        sink.accumulate(inp(0), std::move(gx));
      }
      if (inp(1)->requires_grad()) {
        Tensor gw({dout, din});
        gemm_tn(dout, nrows, din, adj.data(), x.data(), gw.data());
        sink.accumulate(inp(1), std::move(gw));
      }
      if (has_bias && inp(2)->requires_grad()) {
        Tensor gb({dout});
        for (int r = 0; r < nrows; ++r)
          for (int o = 0; o < dout; ++o) gb[o] += adj.at(r, o);
        sink.accumulate(inp(2), std::move(gb));
      }
      return;
    }

    if (!inp(0)->requires_grad()) return;
    Rule eff = rule_;
    if (input_layer_)
      eff = rc.input_rule == RuleConfig::InputRule::WSquare ? Rule::WSquare : Rule::Epsilon;

    if (eff == Rule::WSquare) {
      // share of output o on input i: w^2 normalized per output row
      Tensor share({dout, din});
      for (int o = 0; o < dout; ++o) {
        double s = 0.0;
        for (int i = 0; i < din; ++i) s += w.at(o, i) * w.at(o, i);
        if (s == 0.0) {
          for (int i = 0; i < din; ++i) share.at(o, i) = 1.0 / din;
        } else {
          for (int i = 0; i < din; ++i) share.at(o, i) = w.at(o, i) * w.at(o, i) / s;
        }
      }
      Tensor rx({nrows, din});
      gemm_nn(nrows, dout, din, adj.data(), share.data(), rx.data());
      sink.accumulate(inp(0), std::move(rx));
      return;
    }

    Tensor g;
    const Tensor* weights = &w;
    Tensor what;
    if (eff == Rule::Gamma && rc.gamma != 0.0) {
      what = Tensor({dout, din});
      for (int64_t i = 0; i < w.numel(); ++i)
        what[i] = w[i] + rc.gamma * std::max(w[i], 0.0);
      Tensor yhat({nrows, dout});
      gemm_nt(nrows, din, dout, x.data(), what.data(), yhat.data());
      if (has_bias) {
        const Tensor& b = in(2);
        for (int r = 0; r < nrows; ++r)
          for (int o = 0; o < dout; ++o)
            yhat.at(r, o) += b[o] + rc.gamma * std::max(b[o], 0.0);
      }
      g = stab_div(adj, yhat, rc.epsilon);
      weights = &what;
    } else {
      g = stab_div(adj, value(), rc.epsilon);
    }
    Tensor rx({nrows, din});
    gemm_nn(nrows, dout, din, g.data(), weights->data(), rx.data());
    double* p = rx.data();
    const double* px = x.data();
    for (int64_t i = 0; i < rx.numel(); ++i) p[i] *= px[i];
    sink.accumulate(inp(0), std::move(rx));
  }
};

struct Conv1dNode final : Node {
  int stride;
  bool has_bias;
  bool squeeze;  // input came in as [cin,t]

  Conv1dNode(Tensor v, Var x, Var w, Var b, int s, Rule rule, bool bias, bool sq)
      : Node(std::move(v), b ? std::vector<Var>{std::move(x), std::move(w), std::move(b)}
                             : std::vector<Var>{std::move(x), std::move(w)}, rule),
        stride(s), has_bias(bias), squeeze(sq) {}

  void backward(const Tensor& adj_in, ReverseMode mode, const RuleConfig& rc,
                Adjoints& sink) const override {
    Tensor x3 = squeeze ? in(0).reshaped({1, in(0).dim(0), in(0).dim(1)}) : in(0);
    const Tensor& w = in(1);
    const int nb = x3.dim(0), cin = x3.dim(1), t = x3.dim(2);
    const int cout = w.dim(0), k = w.dim(2);
    const int to = (t - k) / stride + 1;
    Tensor adj = squeeze ? adj_in.reshaped({1, cout, to}) : adj_in;

    auto conv_transpose = [&](const Tensor& g, const Tensor& ker) {
      Tensor gx({nb, cin, t});
      for (int b = 0; b < nb; ++b)
        for (int o = 0; o < cout; ++o)
          for (int tt = 0; tt < to; ++tt) {
            const double gv = g.at(b, o, tt);
            if (gv == 0.0) continue;
            for (int c = 0; c < cin; ++c)
              for (int j = 0; j < k; ++j) gx.at(b, c, tt * stride + j) += gv * ker.at(o, c, j);
          }
      return gx;
    };

    if (mode == ReverseMode::Gradient) {
      if (inp(0)->requires_grad()) {
        Tensor gx = conv_transpose(adj, w);
        sink.accumulate(inp(0), squeeze ? gx.reshaped({cin, t}) : std::move(gx));
      }
      if (inp(1)->requires_grad()) {
        Tensor gw({cout, cin, k});
        for (int b = 0; b < nb; ++b)
          for (int o = 0; o < cout; ++o)
            for (int tt = 0; tt < to; ++tt) {
              const double gv = adj.at(b, o, tt);
              if (gv == 0.0) continue;
              for (int c = 0; c < cin; ++c)
                for (int j = 0; j < k; ++j) gw.at(o, c, j) += gv * x3.at(b, c, tt * stride + j);
            }
        sink.accumulate(inp(1), std::move(gw));
      }
      if (has_bias && inp(2)->requires_grad()) {
        Tensor gb({cout});
        for (int b = 0; b < nb; ++b)
          for (int o = 0; o < cout; ++o)
            for (int tt = 0; tt < to; ++tt) gb[o] += adj.at(b, o, tt);
        sink.accumulate(inp(2), std::move(gb));
      }
      return;
    }

    if (!inp(0)->requires_grad()) return;
    Rule eff = rule_;
    if (input_layer_)
      eff = rc.input_rule == RuleConfig::InputRule::WSquare ? Rule::WSquare : Rule::Epsilon;

    if (eff == Rule::WSquare) {
      Tensor share({cout, cin, k});
      for (int o = 0; o < cout; ++o) {
        double s = 0.0;
        for (int c = 0; c < cin; ++c)
          for (int j = 0; j < k; ++j) s += w.at(o, c, j) * w.at(o, c, j);
        for (int c = 0; c < cin; ++c)
          for (int j = 0; j < k; ++j)
            share.at(o, c, j) = (s == 0.0) ? 1.0 / (cin * k) : w.at(o, c, j) * w.at(o, c, j) / s;
      }
      Tensor rx = conv_transpose(adj, share);
      sink.accumulate(inp(0), squeeze ? rx.reshaped({cin, t}) : std::move(rx));
      return;
    }

    Tensor g;
    const Tensor* ker = &w;
    Tensor what;
    if (eff == Rule::Gamma && rc.gamma != 0.0) {
      what = Tensor({cout, cin, k});
      for (int64_t i = 0; i < w.numel(); ++i)
        what[i] = w[i] + rc.gamma * std::max(w[i], 0.0);
      Tensor yhat({nb, cout, to});
      for (int b = 0; b < nb; ++b)
        for (int o = 0; o < cout; ++o)
          for (int tt = 0; tt < to; ++tt) {
            double acc = 0.0;
            for (int c = 0; c < cin; ++c)
              for (int j = 0; j < k; ++j) acc += x3.at(b, c, tt * stride + j) * what.at(o, c, j);
            if (has_bias) {
              const double bv = in(2)[o];
              acc += bv + rc.gamma * std::max(bv, 0.0);
            }
            yhat.at(b, o, tt) = acc;
          }
      g = stab_div(adj, yhat, rc.epsilon);
      ker = &what;
    } else {
      Tensor y3 = squeeze ? value().reshaped({1, cout, to}) : value();
      g = stab_div(adj, y3, rc.epsilon);
    }
    Tensor rx = conv_transpose(g, *ker);
    double* p = rx.data();
    const double* px = x3.data();
    for (int64_t i = 0; i < rx.numel(); ++i) p[i] *= px[i];
    sink.accumulate(inp(0), squeeze ? rx.reshaped({cin, t}) : std::move(rx));
  }
};

struct LayerNormNode final : Node {
  std::vector<double> mu, istd;  // per row, saved by forward

  LayerNormNode(Tensor v, Var x, Var g, Var b, std::vector<double> m, std::vector<double> is)
      : Node(std::move(v), {std::move(x), std::move(g), std::move(b)}, Rule::DetachedNorm),
        mu(std::move(m)), istd(std::move(is)) {}

  void backward(const Tensor& adj, ReverseMode mode, const RuleConfig& rc,
                Adjoints& sink) const override {
    const Tensor& x = in(0);
    const Tensor& g = in(1);
    const int d = x.dim(x.rank() - 1);
    const int64_t rows = x.numel() / d;

    if (mode == ReverseMode::Gradient) {
      Tensor gx(x.shape());
      Tensor gg({d}), gb({d});
      for (int64_t r = 0; r < rows; ++r) {
        const double* xr = x.data() + r * d;
        const double* ar = adj.data() + r * d;
        double* gr = gx.data() + r * d;
        double m1 = 0.0, m2 = 0.0;
        for (int j = 0; j < d; ++j) {
          const double xh = (xr[j] - mu[r]) * istd[r];
          const double gxh = ar[j] * g[j];
          m1 += gxh;
          m2 += gxh * xh;
          gg[j] += ar[j] * xh;
          gb[j] += ar[j];
        }
        m1 /= d;
        m2 /= d;
        for (int j = 0; j < d; ++j) {
          const double xh = (xr[j] - mu[r]) * istd[r];
          gr[j] = istd[r] * (ar[j] * g[j] - m1 - xh * m2);
        }
      }
      if (inp(0)->requires_grad()) sink.accumulate(inp(0), std::move(gx));
      if (inp(1)->requires_grad()) sink.accumulate(inp(1), std::move(gg));
      if (inp(2)->requires_grad()) sink.accumulate(inp(2), std::move(gb));
      return;
    }

    // 1/sigma detached; the remaining map is affine in x, epsilon rule applies.
    if (!inp(0)->requires_grad()) return;
    Tensor v = stab_div(adj, value(), rc.epsilon);
    Tensor rx(x.shape());
    for (int64_t r = 0; r < rows; ++r) {
      const double* xr = x.data() + r * d;
      const double* vr = v.data() + r * d;
      double* rr = rx.data() + r * d;
      double s = 0.0;
      for (int j = 0; j < d; ++j) s += g[j] * vr[j];
      s /= d;
      for (int j = 0; j < d; ++j) rr[j] = xr[j] * istd[r] * (g[j] * vr[j] - s);
    }
    sink.accumulate(inp(0), std::move(rx));
  }
};

struct SoftmaxNode final : Node {
  SoftmaxNode(Tensor v, Var x) : Node(std::move(v), {std::move(x)}, Rule::Softmax) {}

  void backward(const Tensor& adj, ReverseMode mode, const RuleConfig& rc,
                Adjoints& sink) const override {
    if (!inp(0)->requires_grad()) return;
    const Tensor& x = in(0);
    const Tensor& y = value();
    const int d = x.dim(x.rank() - 1);
    const int64_t rows = x.numel() / d;

    if (mode == ReverseMode::Relevance &&
        rc.softmax_rule == RuleConfig::SoftmaxRule::ValuePathIdentity) {
      sink.accumulate(inp(0), adj);
      return;
    }

    Tensor out(x.shape());
    for (int64_t r = 0; r < rows; ++r) {
      const double* yr = y.data() + r * d;
      const double* ar = adj.data() + r * d;
      double* orow = out.data() + r * d;
      if (mode == ReverseMode::Gradient) {
        double s = 0.0;
        for (int j = 0; j < d; ++j) s += ar[j] * yr[j];
        for (int j = 0; j < d; ++j) orow[j] = yr[j] * (ar[j] - s);
      } else {
        // exact-Jacobian grad x input, stabilizing max detached
        const double* xr = x.data() + r * d;
        double t = 0.0;
        for (int j = 0; j < d; ++j) t += ar[j] / (yr[j] + rc.epsilon) * yr[j];
        for (int j = 0; j < d; ++j) {
          const double u = yr[j] * (ar[j] / (yr[j] + rc.epsilon) - t);
          orow[j] = xr[j] * u;
        }
      }
    }
    sink.accumulate(inp(0), std::move(out));
  }
};

struct GeluNode final : Node {
  GeluNode(Tensor v, Var x) : Node(std::move(v), {std::move(x)}, Rule::Identity) {}

  void backward(const Tensor& adj, ReverseMode mode, const RuleConfig&,
                Adjoints& sink) const override {
    if (!inp(0)->requires_grad()) return;
    if (mode == ReverseMode::Relevance) {
      sink.accumulate(inp(0), adj);
      return;
    }
    const Tensor& x = in(0);
    Tensor gx(x.shape());
    for (int64_t i = 0; i < x.numel(); ++i) {
      const double xi = x[i];
      const double cdf = 0.5 * (1.0 + std::erf(xi * kInvSqrt2));
      const double pdf = kInvSqrt2Pi * std::exp(-0.5 * xi * xi);
      gx[i] = adj[i] * (cdf + xi * pdf);
    }
    sink.accumulate(inp(0), std::move(gx));
  }
};

struct AddNode final : Node {
  AddNode(Tensor v, Var a, Var b) : Node(std::move(v), {std::move(a), std::move(b)}, Rule::Epsilon) {}

  void backward(const Tensor& adj, ReverseMode mode, const RuleConfig& rc,
                Adjoints& sink) const override {
    if (mode == ReverseMode::Gradient) {
      if (inp(0)->requires_grad()) sink.accumulate(inp(0), adj);
      if (inp(1)->requires_grad()) sink.accumulate(inp(1), adj);
      return;
    }
    Tensor g = stab_div(adj, value(), rc.epsilon);
    for (int s = 0; s < 2; ++s) {
      if (!inp(s)->requires_grad()) continue;
      const Tensor& xs = in(s);
      Tensor r(xs.shape());
      for (int64_t i = 0; i < r.numel(); ++i) r[i] = xs[i] * g[i];
      sink.accumulate(inp(s), std::move(r));
    }
  }
};

struct AddRowsNode final : Node {
  AddRowsNode(Tensor v, Var x, Var b) : Node(std::move(v), {std::move(x), std::move(b)}, Rule::Epsilon) {}

  void backward(const Tensor& adj, ReverseMode mode, const RuleConfig& rc,
                Adjoints& sink) const override {
    const Tensor& x = in(0);
    const Tensor& v = in(1);
    const int n = x.dim(0), d = x.dim(1);
    if (mode == ReverseMode::Gradient) {
      if (inp(0)->requires_grad()) sink.accumulate(inp(0), adj);
      if (inp(1)->requires_grad()) {
        Tensor gv({d});
        for (int r = 0; r < n; ++r)
          for (int j = 0; j < d; ++j) gv[j] += adj.at(r, j);
        sink.accumulate(inp(1), std::move(gv));
      }
      return;
    }
    Tensor g = stab_div(adj, value(), rc.epsilon);
    if (inp(0)->requires_grad()) {
      Tensor rx({n, d});
      for (int64_t i = 0; i < rx.numel(); ++i) rx[i] = x[i] * g[i];
      sink.accumulate(inp(0), std::move(rx));
    }
    if (inp(1)->requires_grad()) {
      Tensor rv({d});
      for (int r = 0; r < n; ++r)
        for (int j = 0; j < d; ++j) rv[j] += v[j] * g.at(r, j);
      sink.accumulate(inp(1), std::move(rv));
    }
  }
};

struct ScaleNode final : Node {
  double c;
  ScaleNode(Tensor v, Var x, double c_) : Node(std::move(v), {std::move(x)}, Rule::Identity), c(c_) {}

  void backward(const Tensor& adj, ReverseMode mode, const RuleConfig&,
                Adjoints& sink) const override {
    if (!inp(0)->requires_grad()) return;
    if (mode == ReverseMode::Relevance) {
      // scalar reparameterization is relevance-transparent
      sink.accumulate(inp(0), adj);
      return;
    }
    Tensor g(adj.shape());
    for (int64_t i = 0; i < g.numel(); ++i) g[i] = c * adj[i];
    sink.accumulate(inp(0), std::move(g));
  }
};

struct MulMaskNode final : Node {
  Tensor mask;
  MulMaskNode(Tensor v, Var x, Tensor m)
      : Node(std::move(v), {std::move(x)}, Rule::Identity), mask(std::move(m)) {}

  void backward(const Tensor& adj, ReverseMode mode, const RuleConfig&,
                Adjoints& sink) const override {
    if (!inp(0)->requires_grad()) return;
    if (mode == ReverseMode::Relevance) {
      sink.accumulate(inp(0), adj);
      return;
    }
    Tensor g(adj.shape());
    for (int64_t i = 0; i < g.numel(); ++i) g[i] = mask[i] * adj[i];
    sink.accumulate(inp(0), std::move(g));
  }
};

struct ConcatRowsNode final : Node {
  ConcatRowsNode(Tensor v, std::vector<Var> parts) : Node(std::move(v), std::move(parts), Rule::Identity) {}

  void backward(const Tensor& adj, ReverseMode, const RuleConfig&, Adjoints& sink) const override {
    const int64_t rowlen = adj.numel() / adj.dim(0);
    int64_t off = 0;
    for (size_t s = 0; s < inputs_.size(); ++s) {
      const Tensor& xs = in(static_cast<int>(s));
      const int64_t cnt = static_cast<int64_t>(xs.dim(0)) * rowlen;
      if (inp(static_cast<int>(s))->requires_grad()) {
        Tensor g(xs.shape());
        std::copy(adj.data() + off, adj.data() + off + cnt, g.data());
        sink.accumulate(inp(static_cast<int>(s)), std::move(g));
      }
      off += cnt;
    }
  }
};

struct SliceRowsNode final : Node {
  int r0;
  SliceRowsNode(Tensor v, Var x, int r0_) : Node(std::move(v), {std::move(x)}, Rule::Identity), r0(r0_) {}

  void backward(const Tensor& adj, ReverseMode, const RuleConfig&, Adjoints& sink) const override {
    if (!inp(0)->requires_grad()) return;
    const Tensor& x = in(0);
    const int64_t rowlen = x.numel() / x.dim(0);
    Tensor g(x.shape());
    std::copy(adj.data(), adj.data() + adj.numel(), g.data() + r0 * rowlen);
    sink.accumulate(inp(0), std::move(g));
  }
};

struct ReshapeNode final : Node {
  ReshapeNode(Tensor v, Var x) : Node(std::move(v), {std::move(x)}, Rule::Identity) {}

  void backward(const Tensor& adj, ReverseMode, const RuleConfig&, Adjoints& sink) const override {
    if (!inp(0)->requires_grad()) return;
    sink.accumulate(inp(0), adj.reshaped(in(0).shape()));
  }
};

struct Transpose2Node final : Node {
  Transpose2Node(Tensor v, Var x) : Node(std::move(v), {std::move(x)}, Rule::Identity) {}

  void backward(const Tensor& adj, ReverseMode, const RuleConfig&, Adjoints& sink) const override {
    if (!inp(0)->requires_grad()) return;
    const int m = adj.dim(0), n = adj.dim(1);
    Tensor g({n, m});
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j) g.at(j, i) = adj.at(i, j);
    sink.accumulate(inp(0), std::move(g));
  }
};

Tensor permute3_tensor(const Tensor& x, int p0, int p1, int p2) {
  const int dims[3] = {x.dim(0), x.dim(1), x.dim(2)};
  Tensor out({dims[p0], dims[p1], dims[p2]});
  int idx[3];
  for (idx[0] = 0; idx[0] < dims[0]; ++idx[0])
    for (idx[1] = 0; idx[1] < dims[1]; ++idx[1])
      for (idx[2] = 0; idx[2] < dims[2]; ++idx[2])
        out.at(idx[p0], idx[p1], idx[p2]) = x.at(idx[0], idx[1], idx[2]);
  return out;
}

struct Permute3Node final : Node {
  int p0, p1, p2;
  Permute3Node(Tensor v, Var x, int a, int b, int c)
      : Node(std::move(v), {std::move(x)}, Rule::Identity), p0(a), p1(b), p2(c) {}

  void backward(const Tensor& adj, ReverseMode, const RuleConfig&, Adjoints& sink) const override {
    if (!inp(0)->requires_grad()) return;
    // inverse permutation
    int inv[3];
    inv[p0] = 0;
    inv[p1] = 1;
    inv[p2] = 2;
    sink.accumulate(inp(0), permute3_tensor(adj, inv[0], inv[1], inv[2]));
  }
};

struct MeanAxis0Node final : Node {
  MeanAxis0Node(Tensor v, Var x) : Node(std::move(v), {std::move(x)}, Rule::Epsilon) {}

  void backward(const Tensor& adj, ReverseMode mode, const RuleConfig& rc,
                Adjoints& sink) const override {
    if (!inp(0)->requires_grad()) return;
    const Tensor& x = in(0);
    const int c = x.dim(0);
    const int64_t rest = x.numel() / c;
    Tensor g(x.shape());
    if (mode == ReverseMode::Gradient) {
      for (int ci = 0; ci < c; ++ci)
        for (int64_t i = 0; i < rest; ++i) g[ci * rest + i] = adj[i] / c;
    } else {
      Tensor gv = stab_div(adj, value(), rc.epsilon);
      for (int ci = 0; ci < c; ++ci)
        for (int64_t i = 0; i < rest; ++i) g[ci * rest + i] = x[ci * rest + i] * gv[i] / c;
    }
    sink.accumulate(inp(0), std::move(g));
  }
};

struct BroadcastRowsNode final : Node {
  BroadcastRowsNode(Tensor v, Var x) : Node(std::move(v), {std::move(x)}, Rule::Identity) {}

  void backward(const Tensor& adj, ReverseMode, const RuleConfig&, Adjoints& sink) const override {
    if (!inp(0)->requires_grad()) return;
    const int n = adj.dim(0), d = adj.dim(1);
    Tensor g({d});
    for (int r = 0; r < n; ++r)
      for (int j = 0; j < d; ++j) g[j] += adj.at(r, j);
    sink.accumulate(inp(0), std::move(g));
  }
};

struct EmbedRowsNode final : Node {
  std::vector<int> indices;
  EmbedRowsNode(Tensor v, Var t, std::vector<int> idx)
      : Node(std::move(v), {std::move(t)}, Rule::Identity), indices(std::move(idx)) {}

  void backward(const Tensor& adj, ReverseMode, const RuleConfig&, Adjoints& sink) const override {
    if (!inp(0)->requires_grad()) return;
    const Tensor& table = in(0);
    const int d = table.dim(1);
    Tensor g(table.shape());
    for (size_t r = 0; r < indices.size(); ++r)
      for (int j = 0; j < d; ++j) g.at(indices[r], j) += adj.at(static_cast<int>(r), j);
    sink.accumulate(inp(0), std::move(g));
  }
};

double softplus(double t) { return std::log1p(std::exp(-std::abs(t))) + std::max(t, 0.0); }

struct SigmoidCENode final : Node {
  Tensor targets, weights;
  SigmoidCENode(Tensor v, Var z, Tensor q, Tensor w)
      : Node(std::move(v), {std::move(z)}, Rule::Standard), targets(std::move(q)), weights(std::move(w)) {}

  void backward(const Tensor& adj, ReverseMode mode, const RuleConfig&, Adjoints& sink) const override {
    if (mode == ReverseMode::Relevance)
      throw StateError("relevance propagation through a loss node is undefined");
    if (!inp(0)->requires_grad()) return;
    const Tensor& z = in(0);
    const int64_t n = z.numel();
    Tensor g(z.shape());
    for (int64_t i = 0; i < n; ++i) {
      const double sig = 1.0 / (1.0 + std::exp(-z[i]));
      g[i] = adj[0] * weights[i] * (sig - targets[i]) / static_cast<double>(n);
    }
    sink.accumulate(inp(0), std::move(g));
  }
};

struct MseNode final : Node {
  Tensor target, mask;
  double mass;
  MseNode(Tensor v, Var p, Tensor t, Tensor m, double ms)
      : Node(std::move(v), {std::move(p)}, Rule::Standard), target(std::move(t)), mask(std::move(m)), mass(ms) {}

  void backward(const Tensor& adj, ReverseMode mode, const RuleConfig&, Adjoints& sink) const override {
    if (mode == ReverseMode::Relevance)
      throw StateError("relevance propagation through a loss node is undefined");
    if (!inp(0)->requires_grad() || mass == 0.0) return;
    const Tensor& p = in(0);
    Tensor g(p.shape());
    for (int64_t i = 0; i < p.numel(); ++i)
      g[i] = adj[0] * 2.0 * mask[i] * (p[i] - target[i]) / mass;
    sink.accumulate(inp(0), std::move(g));
  }
};

}  // namespace

Var leaf(Tensor value, bool requires_grad) {
  return std::make_shared<LeafNode>(std::move(value), requires_grad);
}

Var leaf_ref(const Tensor* value, bool requires_grad) {
  return std::make_shared<LeafNode>(value, requires_grad);
}

Var constant(Tensor value) { return leaf(std::move(value), false); }

Var matmul(const Var& a, const Var& b, Rule rule) {
  const Tensor& ta = a->value();
  const Tensor& tb = b->value();
  if (ta.rank() != tb.rank() || (ta.rank() != 2 && ta.rank() != 3))
    throw ShapeError("matmul expects equal-rank 2D or 3D operands, got " + ta.shape_str() +
                     " x " + tb.shape_str());
  const bool batched = ta.rank() == 3;
  if (batched && ta.dim(0) != tb.dim(0))
    throw ShapeError("matmul batch dims differ: " + ta.shape_str() + " x " + tb.shape_str());
  const int nb = batched ? ta.dim(0) : 1;
  const int m = ta.dim(batched ? 1 : 0), k = ta.dim(batched ? 2 : 1);
  const int kb = tb.dim(batched ? 1 : 0), n = tb.dim(batched ? 2 : 1);
  if (k != kb)
    throw ShapeError("matmul inner dims differ: " + ta.shape_str() + " x " + tb.shape_str());
  Tensor out(batched ? std::vector<int>{nb, m, n} : std::vector<int>{m, n});
  for (int bi = 0; bi < nb; ++bi)
    gemm_nn(m, k, n, ta.data() + static_cast<int64_t>(bi) * m * k,
            tb.data() + static_cast<int64_t>(bi) * k * n,
            out.data() + static_cast<int64_t>(bi) * m * n);
  check_finite(out, "matmul");
  return std::make_shared<MatmulNode>(std::move(out), a, b, rule);
}

Var linear(const Var& x, const Var& w, const Var& b, Rule rule) {
  const Tensor& tx = x->value();
  const Tensor& tw = w->value();
  if (tx.rank() != 2 || tw.rank() != 2 || tx.dim(1) != tw.dim(1))
    throw ShapeError("linear shape mismatch " + tx.shape_str() + " x " + tw.shape_str());
  const int n = tx.dim(0), din = tx.dim(1), dout = tw.dim(0);
  Tensor out({n, dout});
  gemm_nt(n, din, dout, tx.data(), tw.data(), out.data());
  if (b) {
    if (b->value().numel() != dout) throw ShapeError("linear bias size mismatch");
    for (int r = 0; r < n; ++r)
      for (int o = 0; o < dout; ++o) out.at(r, o) += b->value()[o];
  }
  check_finite(out, "linear");
  return std::make_shared<LinearNode>(std::move(out), x, w, b, rule, static_cast<bool>(b));
}

Var conv1d(const Var& x, const Var& w, const Var& b, int stride, Rule rule) {
  const Tensor& txin = x->value();
  const Tensor& tw = w->value();
  if (stride < 1) throw InputError("conv1d stride must be >= 1");
  if (tw.rank() != 3) throw ShapeError("conv1d kernel must be [cout,cin,k]");
  const bool squeeze = txin.rank() == 2;
  if (!squeeze && txin.rank() != 3) throw ShapeError("conv1d input must be [cin,t] or [b,cin,t]");
  Tensor x3 = squeeze ? txin.reshaped({1, txin.dim(0), txin.dim(1)}) : txin;
  const int nb = x3.dim(0), cin = x3.dim(1), t = x3.dim(2);
  const int cout = tw.dim(0), k = tw.dim(2);
  if (tw.dim(1) != cin) throw ShapeError("conv1d channel mismatch");
  if (k > t)
    throw ShapeError("conv1d kernel length " + std::to_string(k) + " exceeds input length " +
                     std::to_string(t));
  const int to = (t - k) / stride + 1;
  Tensor out({nb, cout, to});
  for (int bi = 0; bi < nb; ++bi)
    for (int o = 0; o < cout; ++o) {
      const double bias = b ? b->value()[o] : 0.0;
      for (int tt = 0; tt < to; ++tt) {
        double acc = bias;
        for (int c = 0; c < cin; ++c) {
          const double* xr = x3.data() + (static_cast<int64_t>(bi) * cin + c) * t + tt * stride;
          const double* wr = tw.data() + (static_cast<int64_t>(o) * cin + c) * k;
          for (int j = 0; j < k; ++j) acc += xr[j] * wr[j];
        }
        out.at(bi, o, tt) = acc;
      }
    }
  check_finite(out, "conv1d");
  if (squeeze) out = out.reshaped({cout, to});
  return std::make_shared<Conv1dNode>(std::move(out), x, w, b, stride, rule, static_cast<bool>(b), squeeze);
}

Var layer_norm(const Var& x, const Var& gain, const Var& bias) {
  const Tensor& tx = x->value();
  const int d = tx.dim(tx.rank() - 1);
  if (d < 1 || gain->value().numel() != d || bias->value().numel() != d)
    throw ShapeError("layer_norm gain/bias must match last axis " + std::to_string(d));
  const int64_t rows = tx.numel() / d;
  Tensor out(tx.shape());
  std::vector<double> mu(static_cast<size_t>(rows)), istd(static_cast<size_t>(rows));
  for (int64_t r = 0; r < rows; ++r) {
    const double* xr = tx.data() + r * d;
    double m = 0.0;
    for (int j = 0; j < d; ++j) m += xr[j];
    m /= d;
    double var = 0.0;
    for (int j = 0; j < d; ++j) var += (xr[j] - m) * (xr[j] - m);
    var /= d;
    const double is = 1.0 / std::sqrt(std::max(var, 1e-12));
    mu[static_cast<size_t>(r)] = m;
    istd[static_cast<size_t>(r)] = is;
    double* orow = out.data() + r * d;
    for (int j = 0; j < d; ++j) orow[j] = (xr[j] - m) * is * gain->value()[j] + bias->value()[j];
  }
  check_finite(out, "layer_norm");
  return std::make_shared<LayerNormNode>(std::move(out), x, gain, bias, std::move(mu), std::move(istd));
}

Var softmax(const Var& x) {
  const Tensor& tx = x->value();
  if (!tx.all_finite()) throw InputError("softmax requires finite input");
  const int d = tx.dim(tx.rank() - 1);
  const int64_t rows = tx.numel() / d;
  Tensor out(tx.shape());
  for (int64_t r = 0; r < rows; ++r) {
    const double* xr = tx.data() + r * d;
    double* orow = out.data() + r * d;
    double mx = xr[0];
    for (int j = 1; j < d; ++j) mx = std::max(mx, xr[j]);
    double s = 0.0;
    for (int j = 0; j < d; ++j) {
      orow[j] = std::exp(xr[j] - mx);
      s += orow[j];
    }
    for (int j = 0; j < d; ++j) orow[j] /= s;
  }
  return std::make_shared<SoftmaxNode>(std::move(out), x);
}

Var gelu(const Var& x) {
  const Tensor& tx = x->value();
  Tensor out(tx.shape());
  for (int64_t i = 0; i < tx.numel(); ++i)
    out[i] = 0.5 * tx[i] * (1.0 + std::erf(tx[i] * kInvSqrt2));
  check_finite(out, "gelu");
  return std::make_shared<GeluNode>(std::move(out), x);
}

Var add(const Var& a, const Var& b) {
  if (!a->value().same_shape(b->value()))
    throw ShapeError("add shape mismatch " + a->value().shape_str() + " vs " + b->value().shape_str());
  Tensor out = a->value();
  add_into(out, b->value());
  return std::make_shared<AddNode>(std::move(out), a, b);
}

Var add_rows(const Var& x, const Var& v) {
  const Tensor& tx = x->value();
  const Tensor& tv = v->value();
  if (tx.rank() != 2 || tv.numel() != tx.dim(1)) throw ShapeError("add_rows expects [n,d] + [d]");
  Tensor out = tx;
  for (int r = 0; r < tx.dim(0); ++r)
    for (int j = 0; j < tx.dim(1); ++j) out.at(r, j) += tv[j];
  return std::make_shared<AddRowsNode>(std::move(out), x, v);
}

Var scale(const Var& x, double c) {
  Tensor out = x->value();
  for (int64_t i = 0; i < out.numel(); ++i) out[i] *= c;
  return std::make_shared<ScaleNode>(std::move(out), x, c);
}

Var mul_mask(const Var& x, Tensor mask) {
  if (!x->value().same_shape(mask)) throw ShapeError("mul_mask shape mismatch");
  Tensor out = x->value();
  for (int64_t i = 0; i < out.numel(); ++i) out[i] *= mask[i];
  return std::make_shared<MulMaskNode>(std::move(out), x, std::move(mask));
}

Var concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw InputError("concat_rows on empty list");
  std::vector<int> shape = parts[0]->value().shape();
  int rows = 0;
  for (const auto& p : parts) rows += p->value().dim(0);
  shape[0] = rows;
  Tensor out(shape);
  int64_t off = 0;
  for (const auto& p : parts) {
    const Tensor& t = p->value();
    std::copy(t.data(), t.data() + t.numel(), out.data() + off);
    off += t.numel();
  }
  return std::make_shared<ConcatRowsNode>(std::move(out), parts);
}

Var slice_rows(const Var& x, int r0, int r1) {
  const Tensor& tx = x->value();
  if (r0 < 0 || r1 > tx.dim(0) || r0 >= r1) throw ShapeError("slice_rows range invalid");
  std::vector<int> shape = tx.shape();
  shape[0] = r1 - r0;
  const int64_t rowlen = tx.numel() / tx.dim(0);
  Tensor out(shape);
  std::copy(tx.data() + r0 * rowlen, tx.data() + r1 * rowlen, out.data());
  return std::make_shared<SliceRowsNode>(std::move(out), x, r0);
}

Var reshape(const Var& x, std::vector<int> shape) {
  return std::make_shared<ReshapeNode>(x->value().reshaped(std::move(shape)), x);
}

Var transpose2(const Var& x) {
  const Tensor& tx = x->value();
  if (tx.rank() != 2) throw ShapeError("transpose2 expects a 2D tensor");
  Tensor out({tx.dim(1), tx.dim(0)});
  for (int i = 0; i < tx.dim(0); ++i)
    for (int j = 0; j < tx.dim(1); ++j) out.at(j, i) = tx.at(i, j);
  return std::make_shared<Transpose2Node>(std::move(out), x);
}

Var permute3(const Var& x, int p0, int p1, int p2) {
  if (x->value().rank() != 3) throw ShapeError("permute3 expects a 3D tensor");
  return std::make_shared<Permute3Node>(permute3_tensor(x->value(), p0, p1, p2), x, p0, p1, p2);
}

Var mean_axis0(const Var& x) {
  const Tensor& tx = x->value();
  if (tx.rank() < 2) throw ShapeError("mean_axis0 expects rank >= 2");
  const int c = tx.dim(0);
  std::vector<int> shape(tx.shape().begin() + 1, tx.shape().end());
  const int64_t rest = tx.numel() / c;
  Tensor out(shape);
  for (int ci = 0; ci < c; ++ci)
    for (int64_t i = 0; i < rest; ++i) out[i] += tx[ci * rest + i];
  for (int64_t i = 0; i < rest; ++i) out[i] /= c;
  return std::make_shared<MeanAxis0Node>(std::move(out), x);
}

Var broadcast_rows(const Var& v, int n) {
  const Tensor& tv = v->value();
  if (tv.rank() != 1) throw ShapeError("broadcast_rows expects a 1D tensor");
  const int d = tv.dim(0);
  Tensor out({n, d});
  for (int r = 0; r < n; ++r)
    for (int j = 0; j < d; ++j) out.at(r, j) = tv[j];
  return std::make_shared<BroadcastRowsNode>(std::move(out), v);
}

Var embed_rows(const Var& table, std::vector<int> indices) {
  const Tensor& tt = table->value();
  if (tt.rank() != 2) throw ShapeError("embed_rows table must be 2D");
  for (int i : indices)
    if (i < 0 || i >= tt.dim(0))
      throw ConfigError("embed_rows index " + std::to_string(i) + " beyond table of " +
                        std::to_string(tt.dim(0)) + " rows");
  const int d = tt.dim(1);
  Tensor out({static_cast<int>(indices.size()), d});
  for (size_t r = 0; r < indices.size(); ++r)
    for (int j = 0; j < d; ++j) out.at(static_cast<int>(r), j) = tt.at(indices[r], j);
  return std::make_shared<EmbedRowsNode>(std::move(out), table, std::move(indices));
}

Var sigmoid_ce_loss(const Var& logits, Tensor targets, Tensor weights) {
  const Tensor& z = logits->value();
  if (z.numel() != targets.numel() || z.numel() != weights.numel())
    throw ShapeError("sigmoid_ce_loss size mismatch");
  double loss = 0.0;
  for (int64_t i = 0; i < z.numel(); ++i)
    loss += weights[i] * (targets[i] * softplus(-z[i]) + (1.0 - targets[i]) * softplus(z[i]));
  loss /= static_cast<double>(z.numel());
  return std::make_shared<SigmoidCENode>(Tensor::scalar(loss), logits, std::move(targets),
                                         std::move(weights));
}

Var mse_loss(const Var& pred, Tensor target, Tensor mask) {
  const Tensor& p = pred->value();
  if (p.numel() != target.numel() || p.numel() != mask.numel())
    throw ShapeError("mse_loss size mismatch");
  double mass = 0.0, loss = 0.0;
  for (int64_t i = 0; i < p.numel(); ++i) {
    mass += mask[i];
    loss += mask[i] * (p[i] - target[i]) * (p[i] - target[i]);
  }
  const double v = mass > 0.0 ? loss / mass : 0.0;
  return std::make_shared<MseNode>(Tensor::scalar(v), pred, std::move(target), std::move(mask), mass);
}

Adjoints backward(const Var& output, const Tensor& seed, ReverseMode mode, const RuleConfig& rc) {
  rc.validate();
  if (!output) throw StateError("backward called without a recorded forward pass");
  if (!output->value().same_shape(seed))
    throw ShapeError("backward seed shape " + seed.shape_str() + " does not match output " +
                     output->value().shape_str());

  // reverse topological order = decreasing creation id under eager recording
  std::vector<const Node*> order;
  std::unordered_set<const Node*> seen;
  std::vector<const Node*> stack{output.get()};
  seen.insert(output.get());
  while (!stack.empty()) {
    const Node* n = stack.back();
    stack.pop_back();
    order.push_back(n);
    for (const auto& in : n->inputs())
      if (in && in->requires_grad() && seen.insert(in.get()).second) stack.push_back(in.get());
  }
  std::sort(order.begin(), order.end(),
            [](const Node* a, const Node* b) { return a->id() > b->id(); });

  Adjoints adj;
  Tensor s = seed;
  if (mode == ReverseMode::Relevance) {
    const Tensor& v = output->value();
    for (int64_t i = 0; i < s.numel(); ++i) s[i] *= v[i];
  }
  adj.accumulate(output.get(), std::move(s));
  for (const Node* n : order) {
    if (n->inputs().empty()) continue;
    const Tensor* a = adj.find(n);
    if (!a) continue;
    n->backward(*a, mode, rc, adj);
  }
  return adj;
}

}  // namespace eeglrp
