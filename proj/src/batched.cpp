#include "ndde/batched.hpp"

#include <cmath>

namespace ndde {

using Eigen::ArrayXd;
using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace detail {

void NetWorkspace::init(const std::vector<int>& dims, Index max_cols, bool tangent) {
  const std::size_t L = dims.size() - 1;
  capacity = max_cols;
  A.resize(L + 1);
  GZ.resize(L + 1);
  GA.resize(L + 1);
  for (std::size_t l = 0; l <= L; ++l) A[l].resize(dims[l], max_cols);
  for (std::size_t l = 1; l <= L; ++l) {
    GZ[l].resize(dims[l], max_cols);
    GA[l].resize(dims[l - 1], max_cols);
  }
  if (tangent) {
    Zdot.resize(L + 1);
    Adot.resize(L + 1);
    GZdot.resize(L + 1);
    GAdot.resize(L + 1);
    Adot[0].resize(dims[0], max_cols);
    for (std::size_t l = 1; l <= L; ++l) {
      Zdot[l].resize(dims[l], max_cols);
      Adot[l].resize(dims[l], max_cols);
      GZdot[l].resize(dims[l], max_cols);
      GAdot[l].resize(dims[l - 1], max_cols);
    }
  }
}

}  // namespace detail

using detail::BatchVal;
using detail::NetParams;
using detail::NetWorkspace;

namespace {

// In-place vectorized tanh through the (vectorizable) double exp kernel;
// |error| vs std::tanh stays below ~3e-16 and the clamp keeps it finite.
template <class Block>
void fast_tanh_inplace(Block z) {
  z = (2.0 * z.array().min(20.0).max(-20.0)).exp().matrix();
  z = ((z.array() - 1.0) / (z.array() + 1.0)).matrix();
}

void extract_net(const ParameterStore& store, int net, NetParams& p) {
  const auto dims = store.arch().dims();
  const auto& flat = store.flat();
  const bool fresh = p.W.empty();
  int offset = store.network_offset(net);
  for (std::size_t l = 1; l < dims.size(); ++l) {
    const int in = dims[l - 1], out = dims[l];
    if (fresh) {
      p.W.emplace_back(out, in);
      p.b.emplace_back(out);
    }
    MatrixXd& W = p.W[l - 1];
    VectorXd& b = p.b[l - 1];
    for (int o = 0; o < out; ++o)
      for (int i = 0; i < in; ++i) W(o, i) = flat[static_cast<std::size_t>(offset + o * in + i)];
    offset += out * in;
    for (int o = 0; o < out; ++o) b(o) = flat[static_cast<std::size_t>(offset + o)];
    offset += out;
  }
}

void zero_like(const NetParams& shape, NetParams& g) {
  if (g.W.empty()) {
    for (const auto& W : shape.W) g.W.push_back(MatrixXd::Zero(W.rows(), W.cols()));
    for (const auto& b : shape.b) g.b.push_back(VectorXd::Zero(b.size()));
  } else {
    for (auto& W : g.W) W.setZero();
    for (auto& b : g.b) b.setZero();
  }
}

void scatter_grads(const ParameterStore& store, int net, const NetParams& g,
                   std::vector<double>& grad) {
  const auto dims = store.arch().dims();
  int offset = store.network_offset(net);
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    const int in = dims[l], out = dims[l + 1];
    for (int o = 0; o < out; ++o)
      for (int i = 0; i < in; ++i)
        grad[static_cast<std::size_t>(offset + o * in + i)] += g.W[l](o, i);
    offset += out * in;
    for (int o = 0; o < out; ++o) grad[static_cast<std::size_t>(offset + o)] += g.b[l](o);
    offset += out;
  }
}

}  // namespace

BatchedLossEvaluator::BatchedLossEvaluator(const DdeProblemSpec& spec, CollocationSet colloc,
                                           std::optional<ObservationSet> obs)
    : spec_(spec), colloc_(std::move(colloc)), obs_(std::move(obs)) {
  if (colloc_.t.empty()) throw ConfigError("empty collocation set");
  const int n = spec.n;
  bound_.reserve(static_cast<std::size_t>(n));
  slot_group_.resize(static_cast<std::size_t>(n));
  for (int j = 1; j <= n; ++j) {
    bound_.push_back(expr::bind(spec.rhs[static_cast<std::size_t>(j - 1)], spec, j));
    auto& sg = slot_group_[static_cast<std::size_t>(j - 1)];
    for (const auto& slot : bound_.back().lag_slots)
      sg.push_back(group_of(slot.component, slot.delay_index));
  }
  tcol_ = Eigen::Map<const ArrayXd>(colloc_.t.data(), static_cast<Index>(colloc_.t.size()));
  for (int j = 1; j <= n; ++j) phi0_.push_back(history_eval(spec, j, 0.0));
  if (obs_ && static_cast<int>(obs_->values.size()) != n)
    throw ConfigError("observations must cover every component");

  const Index N = tcol_.size();
  const Index n_obs = obs_ ? static_cast<Index>(obs_->t.size()) : 0;

  // Value-batch layout per network: one capacity-N segment per lag group,
  // then t=0 for the IC, then the observation times. Iterations compact the
  // (shorter) packed segments to the front before the forward pass.
  std::vector<Index> vcap(static_cast<std::size_t>(n), 0);
  for (auto& g : groups_) {
    g.home = static_cast<int>(vcap[static_cast<std::size_t>(g.component - 1)]);
    g.eff = g.home;
    vcap[static_cast<std::size_t>(g.component - 1)] += N;
    g.s.resize(N);
    g.values.resize(N);
    g.adj.resize(N);
    g.pack.reserve(static_cast<std::size_t>(N));
  }
  ic_off_.resize(static_cast<std::size_t>(n));
  obs_off_.assign(static_cast<std::size_t>(n), -1);
  for (int k = 0; k < n; ++k) {
    vcap[static_cast<std::size_t>(k)] += 1 + n_obs;
  }

  nets_.resize(static_cast<std::size_t>(n));
  grads_.resize(static_cast<std::size_t>(n));
  twork_.resize(static_cast<std::size_t>(n));
  vwork_.resize(static_cast<std::size_t>(n));
  gy_t_.resize(static_cast<std::size_t>(n));
  gydot_t_.resize(static_cast<std::size_t>(n));
  gy_v_.resize(static_cast<std::size_t>(n));
  vbatch_pts_.resize(static_cast<std::size_t>(n));
  vbatch_size_.assign(static_cast<std::size_t>(n), 0);
  for (int k = 0; k < n; ++k) {
    vbatch_pts_[static_cast<std::size_t>(k)].setZero(vcap[static_cast<std::size_t>(k)]);
    gy_t_[static_cast<std::size_t>(k)].resize(N);
    gydot_t_[static_cast<std::size_t>(k)].resize(N);
    gy_v_[static_cast<std::size_t>(k)].resize(vcap[static_cast<std::size_t>(k)]);
  }

  node_vals_.resize(static_cast<std::size_t>(n));
  node_adj_.resize(static_cast<std::size_t>(n));
  residual_.resize(static_cast<std::size_t>(n));
  for (int j = 0; j < n; ++j) {
    node_vals_[static_cast<std::size_t>(j)].resize(bound_[static_cast<std::size_t>(j)].ast.nodes.size());
    node_adj_[static_cast<std::size_t>(j)].resize(bound_[static_cast<std::size_t>(j)].ast.nodes.size());
    residual_[static_cast<std::size_t>(j)].resize(N);
    // Time nodes never change; fill them once.
    const auto& nodes = bound_[static_cast<std::size_t>(j)].ast.nodes;
    for (std::size_t i = 0; i < nodes.size(); ++i) {
      if (nodes[i].kind == expr::NodeKind::time_var) {
        auto& bv = node_vals_[static_cast<std::size_t>(j)][i];
        bv.is_scalar = false;
        bv.a = tcol_;
      }
    }
  }
}

int BatchedLossEvaluator::group_of(int component, int delay_index) {
  for (std::size_t g = 0; g < groups_.size(); ++g)
    if (groups_[g].component == component && groups_[g].delay_index == delay_index)
      return static_cast<int>(g);
  LagGroup g;
  g.component = component;
  g.delay_index = delay_index;
  g.home = 0;
  g.eff = 0;
  groups_.push_back(std::move(g));
  return static_cast<int>(groups_.size()) - 1;
}

void BatchedLossEvaluator::load_params(const ParameterStore& store) {
  const int n = spec_.n;
  const auto dims = store.arch().dims();
  const Index N = tcol_.size();
  for (int k = 0; k < n; ++k) {
    extract_net(store, k, nets_[static_cast<std::size_t>(k)]);
    zero_like(nets_[static_cast<std::size_t>(k)], grads_[static_cast<std::size_t>(k)]);
    if (twork_[static_cast<std::size_t>(k)].capacity == 0) {
      twork_[static_cast<std::size_t>(k)].init(dims, N, true);
      vwork_[static_cast<std::size_t>(k)].init(
          dims, static_cast<Index>(vbatch_pts_[static_cast<std::size_t>(k)].size()), false);
    }
  }
}

void BatchedLossEvaluator::forward_batch(int net, const ArrayXd& pts, Index m, NetWorkspace& ws,
                                         bool tangent, double time_scale) {
  const NetParams& p = nets_[static_cast<std::size_t>(net)];
  const std::size_t L = p.W.size();
  ws.active = m;
  if (m == 0) return;
  ws.A[0].leftCols(m) = (pts.head(m) / time_scale).matrix().transpose();
  if (tangent) ws.Adot[0].leftCols(m).setConstant(1.0 / time_scale);
  for (std::size_t l = 1; l <= L; ++l) {
    auto Z = ws.A[l].leftCols(m);
    Z.noalias() = p.W[l - 1] * ws.A[l - 1].leftCols(m);
    Z.colwise() += p.b[l - 1];
    if (tangent) ws.Zdot[l].leftCols(m).noalias() = p.W[l - 1] * ws.Adot[l - 1].leftCols(m);
    if (l < L) {
      fast_tanh_inplace(Z);
      if (tangent)
        ws.Adot[l].leftCols(m) =
            ((1.0 - ws.A[l].leftCols(m).array().square()) * ws.Zdot[l].leftCols(m).array())
                .matrix();
    } else if (tangent) {
      ws.Adot[l].leftCols(m) = ws.Zdot[l].leftCols(m);
    }
  }
}

void BatchedLossEvaluator::reverse_batch(int net, NetWorkspace& ws, const VectorXd& gy,
                                         const VectorXd* gydot, double time_scale,
                                         ArrayXd* gs_out) {
  const NetParams& p = nets_[static_cast<std::size_t>(net)];
  NetParams& g = grads_[static_cast<std::size_t>(net)];
  const std::size_t L = p.W.size();
  const Index m = ws.active;
  if (m == 0) {
    if (gs_out) gs_out->resize(0);
    return;
  }
  const bool tan = gydot != nullptr;

  ws.GZ[L].leftCols(m) = gy.head(m).transpose();
  if (tan) ws.GZdot[L].leftCols(m) = gydot->head(m).transpose();

  for (std::size_t l = L; l >= 1; --l) {
    g.W[l - 1].noalias() += ws.GZ[l].leftCols(m) * ws.A[l - 1].leftCols(m).transpose();
    if (tan) g.W[l - 1].noalias() += ws.GZdot[l].leftCols(m) * ws.Adot[l - 1].leftCols(m).transpose();
    g.b[l - 1].noalias() += ws.GZ[l].leftCols(m).rowwise().sum();

    ws.GA[l].leftCols(m).noalias() = p.W[l - 1].transpose() * ws.GZ[l].leftCols(m);
    if (tan) ws.GAdot[l].leftCols(m).noalias() = p.W[l - 1].transpose() * ws.GZdot[l].leftCols(m);

    if (l > 1) {
      auto A = ws.A[l - 1].leftCols(m).array();
      ws.GZ[l - 1].leftCols(m) = (ws.GA[l].leftCols(m).array() * (1.0 - A.square())).matrix();
      if (tan) {
        ws.GZ[l - 1].leftCols(m).array() +=
            ws.GAdot[l].leftCols(m).array() *
            (-2.0 * A * (1.0 - A.square()) * ws.Zdot[l - 1].leftCols(m).array());
        ws.GZdot[l - 1].leftCols(m) =
            (ws.GAdot[l].leftCols(m).array() * (1.0 - A.square())).matrix();
      }
    } else if (gs_out) {
      // A0 = s / time_scale; the tangent seed is constant.
      *gs_out = ws.GA[1].row(0).head(m).transpose().array() / time_scale;
    }
  }
}

LossEval BatchedLossEvaluator::evaluate(const ParameterStore& store) {
  const int n = spec_.n;
  const Index N = tcol_.size();
  const double T = store.time_scale();
  load_params(store);

  // ---- forward: t-batch with tangent, per network -------------------------
  for (int k = 0; k < n; ++k)
    forward_batch(k, tcol_, N, twork_[static_cast<std::size_t>(k)], true, T);

  // ---- lag groups: branch split, packed value batches ----------------------
  for (auto& g : groups_) {
    const double tau = store.delay(g.delay_index);
    g.s = tcol_ - tau;
    g.pack.clear();
    auto& vb = vbatch_pts_[static_cast<std::size_t>(g.component - 1)];
    Index w = g.home;  // fixed disjoint segments
    for (Index i = 0; i < N; ++i) {
      if (g.s(i) > 0.0) {
        g.pack.push_back(i);
        vb(w++) = g.s(i);
      }
    }
  }
  // Compact the packed segments to the front (dest <= src always, since each
  // home segment has capacity N), then append the IC point and observations.
  for (int k = 0; k < n; ++k) {
    auto& vb = vbatch_pts_[static_cast<std::size_t>(k)];
    Index w = 0;
    for (auto& g : groups_) {
      if (g.component - 1 != k) continue;
      const Index len = static_cast<Index>(g.pack.size());
      if (w != g.home) {
        for (Index q = 0; q < len; ++q) vb(w + q) = vb(g.home + q);
      }
      g.eff = static_cast<int>(w);
      w += len;
    }
    vb(w) = 0.0;
    ic_off_[static_cast<std::size_t>(k)] = static_cast<int>(w);
    ++w;
    if (obs_) {
      obs_off_[static_cast<std::size_t>(k)] = static_cast<int>(w);
      for (double tg : obs_->t) vb(w++) = tg;
    }
    vbatch_size_[static_cast<std::size_t>(k)] = w;
  }

  for (int k = 0; k < n; ++k)
    forward_batch(k, vbatch_pts_[static_cast<std::size_t>(k)],
                  vbatch_size_[static_cast<std::size_t>(k)], vwork_[static_cast<std::size_t>(k)],
                  false, T);

  auto vb_y = [&](int k, Index i) {
    return vwork_[static_cast<std::size_t>(k)].A.back()(0, i);
  };

  // Assemble full lag arrays: packed network values, history elsewhere.
  for (auto& g : groups_) {
    const auto& phi = spec_.history[static_cast<std::size_t>(g.component - 1)];
    for (Index i = 0; i < N; ++i) {
      if (g.s(i) > 0.0) continue;
      if (g.s(i) < -spec_.history_bound) throw OutOfHistoryRange(g.s(i), spec_.history_bound);
      g.values(i) = phi.value(g.s(i));
    }
    for (std::size_t q = 0; q < g.pack.size(); ++q)
      g.values(g.pack[q]) = vb_y(g.component - 1, g.eff + static_cast<Index>(q));
  }

  // ---- per-equation residuals (vectorized AST evaluation) -----------------
  std::vector<double> parts;
  parts.reserve(static_cast<std::size_t>((obs_ ? 3 : 2) * n));

  for (int j = 1; j <= n; ++j) {
    const auto& be = bound_[static_cast<std::size_t>(j - 1)];
    auto& vals = node_vals_[static_cast<std::size_t>(j - 1)];
    for (std::size_t i = 0; i < be.ast.nodes.size(); ++i) {
      const auto& nd = be.ast.nodes[i];
      auto& out = vals[i];
      using expr::NodeKind;
      auto arr = [&](int child) -> const BatchVal& { return vals[static_cast<std::size_t>(child)]; };
      switch (nd.kind) {
        case NodeKind::constant: out.set_scalar(nd.num); break;
        case NodeKind::time_var: break;  // filled at construction
        case NodeKind::state_var:
          out.is_scalar = false;
          out.a = twork_[static_cast<std::size_t>(nd.index - 1)].A.back().row(0).transpose().array();
          break;
        case NodeKind::lag_var: {
          const int g = slot_group_[static_cast<std::size_t>(j - 1)]
                                   [static_cast<std::size_t>(be.lag_slot_of_node[i])];
          out.is_scalar = false;
          out.a = groups_[static_cast<std::size_t>(g)].values;
          break;
        }
        case NodeKind::param_ref: out.set_scalar(store.system_param(be.param_index[i])); break;
        case NodeKind::neg: {
          const auto& x = arr(nd.a);
          if (x.is_scalar) out.set_scalar(-x.s);
          else {
            out.is_scalar = false;
            out.a = -x.a;
          }
          break;
        }
        case NodeKind::add:
        case NodeKind::sub:
        case NodeKind::mul:
        case NodeKind::div: {
          const auto& x = arr(nd.a);
          const auto& y = arr(nd.b);
          auto combine_ss = [&](double a, double b) {
            switch (nd.kind) {
              case NodeKind::add: return a + b;
              case NodeKind::sub: return a - b;
              case NodeKind::mul: return a * b;
              default:
                if (std::abs(b) < 1e-300) throw DivisionByZero(b);
                return a / b;
            }
          };
          if (x.is_scalar && y.is_scalar) {
            out.set_scalar(combine_ss(x.s, y.s));
            break;
          }
          out.is_scalar = false;
          if (nd.kind == NodeKind::div) {
            if (y.is_scalar) {
              if (std::abs(y.s) < 1e-300) throw DivisionByZero(y.s);
              out.a = x.a / y.s;
            } else {
              if ((y.a.abs() < 1e-300).any()) throw DivisionByZero(0.0);
              if (x.is_scalar) out.a = x.s / y.a;
              else out.a = x.a / y.a;
            }
            break;
          }
          if (x.is_scalar) {
            switch (nd.kind) {
              case NodeKind::add: out.a = x.s + y.a; break;
              case NodeKind::sub: out.a = x.s - y.a; break;
              default: out.a = x.s * y.a; break;
            }
          } else if (y.is_scalar) {
            switch (nd.kind) {
              case NodeKind::add: out.a = x.a + y.s; break;
              case NodeKind::sub: out.a = x.a - y.s; break;
              default: out.a = x.a * y.s; break;
            }
          } else {
            switch (nd.kind) {
              case NodeKind::add: out.a = x.a + y.a; break;
              case NodeKind::sub: out.a = x.a - y.a; break;
              default: out.a = x.a * y.a; break;
            }
          }
          break;
        }
        case NodeKind::pow_int: {
          const auto& x = arr(nd.a);
          if (x.is_scalar) {
            if (nd.index < 0 && std::abs(x.s) < 1e-300) throw DivisionByZero(x.s);
            out.set_scalar(std::pow(x.s, nd.index));
          } else {
            if (nd.index < 0 && (x.a.abs() < 1e-300).any()) throw DivisionByZero(0.0);
            out.is_scalar = false;
            out.a = x.a.pow(nd.index);
          }
          break;
        }
        case NodeKind::call: {
          const auto& x = arr(nd.a);
          auto apply_s = [&](double v) {
            switch (nd.fn) {
              case expr::FnKind::sin: return std::sin(v);
              case expr::FnKind::cos: return std::cos(v);
              case expr::FnKind::exp: return std::exp(v);
              default: return std::tanh(v);
            }
          };
          if (x.is_scalar) {
            out.set_scalar(apply_s(x.s));
          } else {
            out.is_scalar = false;
            switch (nd.fn) {
              case expr::FnKind::sin: out.a = x.a.sin(); break;
              case expr::FnKind::cos: out.a = x.a.cos(); break;
              case expr::FnKind::exp: out.a = x.a.exp(); break;
              case expr::FnKind::tanh: out.a = x.a.tanh(); break;
            }
          }
          break;
        }
      }
    }
    const auto& root = vals[static_cast<std::size_t>(be.ast.root)];
    auto& R = residual_[static_cast<std::size_t>(j - 1)];
    const auto ydot = twork_[static_cast<std::size_t>(j - 1)].Adot.back().row(0).transpose().array();
    if (root.is_scalar) R = ydot - root.s;
    else R = ydot - root.a;
    parts.push_back(R.square().mean());
  }

  // IC and data losses from the value batches.
  std::vector<double> y_at_0(static_cast<std::size_t>(n));
  for (int j = 0; j < n; ++j)
    y_at_0[static_cast<std::size_t>(j)] = vb_y(j, ic_off_[static_cast<std::size_t>(j)]);
  for (int j = 0; j < n; ++j) {
    const double e = y_at_0[static_cast<std::size_t>(j)] - phi0_[static_cast<std::size_t>(j)];
    parts.push_back(e * e);
  }
  if (obs_) {
    for (int j = 0; j < n; ++j) {
      const auto& targets = obs_->values[static_cast<std::size_t>(j)];
      const int off = obs_off_[static_cast<std::size_t>(j)];
      double sum = 0.0;
      for (std::size_t i = 0; i < obs_->t.size(); ++i) {
        const double e = vb_y(j, off + static_cast<Index>(i)) - targets[i];
        sum += e * e;
      }
      parts.push_back(sum / static_cast<double>(obs_->t.size()));
    }
  }

  auto [weights, total] = adaptive_weights(parts);

  // ---- reverse ------------------------------------------------------------
  std::vector<double> g_delay(spec_.delays.size(), 0.0);
  std::vector<double> g_sys(spec_.system_params.size(), 0.0);

  for (int k = 0; k < n; ++k) {
    gy_t_[static_cast<std::size_t>(k)].setZero();
    gydot_t_[static_cast<std::size_t>(k)].setZero();
    gy_v_[static_cast<std::size_t>(k)].head(vbatch_size_[static_cast<std::size_t>(k)]).setZero();
  }
  for (auto& g : groups_) g.adj.setZero();

  for (int j = 1; j <= n; ++j) {
    const auto& be = bound_[static_cast<std::size_t>(j - 1)];
    const auto& vals = node_vals_[static_cast<std::size_t>(j - 1)];
    auto& adj = node_adj_[static_cast<std::size_t>(j - 1)];
    const double wf = weights[static_cast<std::size_t>(j - 1)];

    const ArrayXd gR =
        (2.0 * wf / static_cast<double>(N)) * residual_[static_cast<std::size_t>(j - 1)];
    gydot_t_[static_cast<std::size_t>(j - 1)].array() += gR;

    std::vector<char> seeded(be.ast.nodes.size(), 0);
    auto add_adj = [&](int node, const auto& value) {
      auto idx = static_cast<std::size_t>(node);
      if (!seeded[idx]) {
        adj[idx].is_scalar = false;
        adj[idx].a = value;
        seeded[idx] = 1;
      } else {
        adj[idx].a += value;
      }
    };
    add_adj(be.ast.root, -gR);

    for (int i = static_cast<int>(be.ast.nodes.size()) - 1; i >= 0; --i) {
      const auto idx = static_cast<std::size_t>(i);
      if (!seeded[idx]) continue;
      const auto& nd = be.ast.nodes[idx];
      const ArrayXd& a = adj[idx].a;
      using expr::NodeKind;
      switch (nd.kind) {
        case NodeKind::state_var:
          gy_t_[static_cast<std::size_t>(nd.index - 1)].array() += a;
          break;
        case NodeKind::lag_var: {
          const int g = slot_group_[static_cast<std::size_t>(j - 1)]
                                   [static_cast<std::size_t>(be.lag_slot_of_node[idx])];
          groups_[static_cast<std::size_t>(g)].adj += a;
          break;
        }
        case NodeKind::param_ref:
          g_sys[static_cast<std::size_t>(be.param_index[idx])] += a.sum();
          break;
        case NodeKind::neg: add_adj(nd.a, -a); break;
        case NodeKind::add:
          add_adj(nd.a, a);
          add_adj(nd.b, a);
          break;
        case NodeKind::sub:
          add_adj(nd.a, a);
          add_adj(nd.b, -a);
          break;
        case NodeKind::mul: {
          const auto& x = vals[static_cast<std::size_t>(nd.a)];
          const auto& y = vals[static_cast<std::size_t>(nd.b)];
          if (y.is_scalar) add_adj(nd.a, a * y.s);
          else add_adj(nd.a, a * y.a);
          if (x.is_scalar) add_adj(nd.b, a * x.s);
          else add_adj(nd.b, a * x.a);
          break;
        }
        case NodeKind::div: {
          const auto& y = vals[static_cast<std::size_t>(nd.b)];
          const auto& q = vals[idx];  // x / y
          if (y.is_scalar) add_adj(nd.a, a / y.s);
          else add_adj(nd.a, a / y.a);
          if (y.is_scalar && q.is_scalar) add_adj(nd.b, a * (-q.s / y.s));
          else if (y.is_scalar) add_adj(nd.b, -a * q.a / y.s);
          else if (q.is_scalar) add_adj(nd.b, -a * q.s / y.a);
          else add_adj(nd.b, -a * q.a / y.a);
          break;
        }
        case NodeKind::pow_int: {
          if (nd.index == 0) break;
          const auto& x = vals[static_cast<std::size_t>(nd.a)];
          const double k = static_cast<double>(nd.index);
          if (x.is_scalar) add_adj(nd.a, a * (k * std::pow(x.s, nd.index - 1)));
          else add_adj(nd.a, a * k * x.a.pow(nd.index - 1));
          break;
        }
        case NodeKind::call: {
          const auto& x = vals[static_cast<std::size_t>(nd.a)];
          const auto& v = vals[idx];
          // Scalar inputs yield scalar outputs; both branches stay arrays
          // only when the child is an array.
          if (x.is_scalar) {
            double partial;
            switch (nd.fn) {
              case expr::FnKind::sin: partial = std::cos(x.s); break;
              case expr::FnKind::cos: partial = -std::sin(x.s); break;
              case expr::FnKind::exp: partial = v.s; break;
              default: partial = 1.0 - v.s * v.s; break;
            }
            add_adj(nd.a, a * partial);
          } else {
            switch (nd.fn) {
              case expr::FnKind::sin: add_adj(nd.a, a * x.a.cos()); break;
              case expr::FnKind::cos: add_adj(nd.a, -a * x.a.sin()); break;
              case expr::FnKind::exp: add_adj(nd.a, a * v.a); break;
              case expr::FnKind::tanh: add_adj(nd.a, a * (1.0 - v.a.square())); break;
            }
          }
          break;
        }
        default: break;  // constants / time carry no trainable gradient
      }
    }
  }

  // Lag adjoints: packed part into the value batches, history part into the
  // delay gradient when the history varies with t.
  for (auto& g : groups_) {
    auto& gv = gy_v_[static_cast<std::size_t>(g.component - 1)];
    for (std::size_t q = 0; q < g.pack.size(); ++q)
      gv(g.eff + static_cast<Index>(q)) += g.adj(g.pack[q]);
    const auto& phi = spec_.history[static_cast<std::size_t>(g.component - 1)];
    if (!phi.is_constant) {
      double acc = 0.0;
      for (Index i = 0; i < N; ++i)
        if (g.s(i) <= 0.0) acc += g.adj(i) * (-phi.derivative(g.s(i)));
      g_delay[static_cast<std::size_t>(g.delay_index)] += acc;
    }
  }

  // IC adjoints.
  for (int j = 0; j < n; ++j) {
    const double wi = weights[static_cast<std::size_t>(n + j)];
    const double e = y_at_0[static_cast<std::size_t>(j)] - phi0_[static_cast<std::size_t>(j)];
    gy_v_[static_cast<std::size_t>(j)](ic_off_[static_cast<std::size_t>(j)]) += 2.0 * wi * e;
  }
  // Data adjoints.
  if (obs_) {
    for (int j = 0; j < n; ++j) {
      const double wg = weights[static_cast<std::size_t>(2 * n + j)];
      const auto& targets = obs_->values[static_cast<std::size_t>(j)];
      const int off = obs_off_[static_cast<std::size_t>(j)];
      const double scale = 2.0 * wg / static_cast<double>(obs_->t.size());
      for (std::size_t i = 0; i < obs_->t.size(); ++i) {
        const double e = vb_y(j, off + static_cast<Index>(i)) - targets[i];
        gy_v_[static_cast<std::size_t>(j)](off + static_cast<Index>(i)) += scale * e;
      }
    }
  }

  // Network reverse passes.
  std::vector<ArrayXd> gs_v(static_cast<std::size_t>(n));
  for (int k = 0; k < n; ++k) {
    reverse_batch(k, twork_[static_cast<std::size_t>(k)], gy_t_[static_cast<std::size_t>(k)],
                  &gydot_t_[static_cast<std::size_t>(k)], T, nullptr);
    reverse_batch(k, vwork_[static_cast<std::size_t>(k)], gy_v_[static_cast<std::size_t>(k)],
                  nullptr, T, &gs_v[static_cast<std::size_t>(k)]);
  }

  // Delay gradients from the packed input adjoints (s = t - tau).
  for (const auto& g : groups_) {
    const auto& gs = gs_v[static_cast<std::size_t>(g.component - 1)];
    double acc = 0.0;
    for (std::size_t q = 0; q < g.pack.size(); ++q)
      acc += gs(g.eff + static_cast<Index>(q));
    g_delay[static_cast<std::size_t>(g.delay_index)] -= acc;
  }

  // ---- assemble report + flat gradient ------------------------------------
  LossEval out;
  auto& rep = out.report;
  rep.loss_f.assign(parts.begin(), parts.begin() + n);
  rep.loss_i.assign(parts.begin() + n, parts.begin() + 2 * n);
  rep.w_f.assign(weights.begin(), weights.begin() + n);
  rep.w_i.assign(weights.begin() + n, weights.begin() + 2 * n);
  if (obs_) {
    rep.loss_g.assign(parts.begin() + 2 * n, parts.end());
    rep.w_g.assign(weights.begin() + 2 * n, weights.end());
  }
  rep.total = total;

  out.grad.assign(store.flat().size(), 0.0);
  for (int k = 0; k < n; ++k) scatter_grads(store, k, grads_[static_cast<std::size_t>(k)], out.grad);
  for (std::size_t d = 0; d < g_delay.size(); ++d)
    out.grad[static_cast<std::size_t>(store.delay_offset(static_cast<int>(d)))] = g_delay[d];
  for (std::size_t p = 0; p < g_sys.size(); ++p)
    out.grad[static_cast<std::size_t>(store.system_offset(static_cast<int>(p)))] = g_sys[p];
  return out;
}

Eigen::MatrixXd batched_eval_grid(const ParameterStore& store, std::span<const double> ts) {
  const int n = store.n_networks();
  const auto dims = store.arch().dims();
  ArrayXd pts = Eigen::Map<const ArrayXd>(ts.data(), static_cast<Index>(ts.size()));
  MatrixXd out(n, pts.size());
  const double T = store.time_scale();
  for (int k = 0; k < n; ++k) {
    NetParams p;
    extract_net(store, k, p);
    MatrixXd A = (pts / T).matrix().transpose();
    for (std::size_t l = 1; l < dims.size(); ++l) {
      MatrixXd Z = p.W[l - 1] * A;
      Z.colwise() += p.b[l - 1];
      if (l + 1 < dims.size()) fast_tanh_inplace(Z.leftCols(Z.cols()));
      A = std::move(Z);
    }
    out.row(k) = A.row(0);
  }
  return out;
}

}  // namespace ndde
