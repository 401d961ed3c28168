#pragma once

#include <Eigen/Dense>
#include <optional>
#include <span>

#include "ndde/losses.hpp"

namespace ndde {

namespace detail {

/// Expression value that is either one scalar broadcast over the batch or a
/// full per-point array; keeps constant/parameter nodes allocation-free.
struct BatchVal {
  bool is_scalar = true;
  double s = 0.0;
  Eigen::ArrayXd a;

  void set_scalar(double v) {
    is_scalar = true;
    s = v;
  }
};

struct NetParams {
  std::vector<Eigen::MatrixXd> W;
  std::vector<Eigen::VectorXd> b;
};

/// Per-batch forward state, allocated once for the largest batch and reused
/// every iteration through leftCols views.
struct NetWorkspace {
  std::vector<Eigen::MatrixXd> A;     // activations, layers 0..L
  std::vector<Eigen::MatrixXd> Zdot;  // tangent pre-activations, layers 1..L
  std::vector<Eigen::MatrixXd> Adot;  // tangent activations, layers 0..L
  std::vector<Eigen::MatrixXd> GZ;    // reverse scratch per layer
  std::vector<Eigen::MatrixXd> GZdot;
  std::vector<Eigen::MatrixXd> GA;
  std::vector<Eigen::MatrixXd> GAdot;
  Eigen::Index capacity = 0;
  Eigen::Index active = 0;

  void init(const std::vector<int>& dims, Eigen::Index max_cols, bool tangent);
};

}  // namespace detail

/// Fused evaluation of the training objective: batches every network query
/// over the collocation set with Eigen matrix kernels and hand-written
/// reverse passes for both the value and the time-tangent channel. Produces
/// the same losses and flat gradient as evaluate_losses_tape (up to roundoff
/// from reordered sums); the tape route stays as the correctness reference.
class BatchedLossEvaluator {
 public:
  BatchedLossEvaluator(const DdeProblemSpec& spec, CollocationSet colloc,
                       std::optional<ObservationSet> obs);

  LossEval evaluate(const ParameterStore& store);

  const CollocationSet& collocation() const { return colloc_; }
  bool inverse() const { return obs_.has_value(); }

 private:
  struct LagGroup {
    int component;    // 1-based k
    int delay_index;  // into spec.delays
    int home;         // fixed (capacity-N) segment start in the value batch
    int eff;          // compacted segment start, recomputed per iteration
    Eigen::ArrayXd s; // lag times, size N
    std::vector<Eigen::Index> pack;  // indices with s > 0
    Eigen::ArrayXd values;           // assembled lag values, size N
    Eigen::ArrayXd adj;              // adjoint accumulator, size N
  };

  const DdeProblemSpec& spec_;
  CollocationSet colloc_;
  std::optional<ObservationSet> obs_;
  std::vector<expr::BoundExpr> bound_;
  std::vector<LagGroup> groups_;
  std::vector<std::vector<int>> slot_group_;  // [equation][lag slot] -> group id
  Eigen::ArrayXd tcol_;
  std::vector<double> phi0_;

  // persistent buffers
  std::vector<detail::NetParams> nets_;
  std::vector<detail::NetParams> grads_;
  std::vector<detail::NetWorkspace> twork_;  // t-batch (with tangent)
  std::vector<detail::NetWorkspace> vwork_;  // value batch
  std::vector<Eigen::VectorXd> gy_t_, gydot_t_, gy_v_;
  std::vector<Eigen::ArrayXd> vbatch_pts_;   // value-batch inputs per net
  std::vector<Eigen::Index> vbatch_size_;
  std::vector<int> ic_off_, obs_off_;
  std::vector<std::vector<detail::BatchVal>> node_vals_;  // per equation per node
  std::vector<std::vector<detail::BatchVal>> node_adj_;
  std::vector<Eigen::ArrayXd> residual_;

  int group_of(int component, int delay_index);
  void load_params(const ParameterStore& store);
  void forward_batch(int net, const Eigen::ArrayXd& pts, Eigen::Index m,
                     detail::NetWorkspace& ws, bool tangent, double time_scale);
  void reverse_batch(int net, detail::NetWorkspace& ws, const Eigen::VectorXd& gy,
                     const Eigen::VectorXd* gydot, double time_scale, Eigen::ArrayXd* gs_out);
};

/// Value-only batched evaluation of every network on a grid; row j holds
/// component j. Matches the evaluator's forward kernel.
Eigen::MatrixXd batched_eval_grid(const ParameterStore& store, std::span<const double> ts);

}  // namespace ndde
