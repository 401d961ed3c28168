#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ndde/autodiff.hpp"
#include "ndde/problem.hpp"

namespace ndde {

enum class RunMode { forward, inverse };

/// Fully-connected tanh MLP from scalar time to one solution component.
struct MlpArchitecture {
  std::vector<int> hidden{20, 40, 20};

  static constexpr int input_dim = 1;
  static constexpr int output_dim = 1;

  std::vector<int> dims() const {
    std::vector<int> d;
    d.reserve(hidden.size() + 2);
    d.push_back(input_dim);
    d.insert(d.end(), hidden.begin(), hidden.end());
    d.push_back(output_dim);
    return d;
  }

  int param_count() const {
    auto d = dims();
    int total = 0;
    for (std::size_t l = 1; l < d.size(); ++l) total += d[l] * d[l - 1] + d[l];
    return total;
  }
};

struct ParamInfo {
  std::string owner;
  std::string name;
  int offset = 0;
  int count = 0;
  bool trainable = true;
};

/// Flat vector of every trainable quantity: per-network weights and biases,
/// then delay parameters, then system parameters. Weight blocks are laid out
/// per layer as the row-major (out x in) matrix followed by the bias.
class ParameterStore {
 public:
  ParameterStore() = default;

  /// Glorot-uniform weights, zero biases. In inverse mode the trainable
  /// delays and system parameters start at 0; everything else keeps the
  /// spec's declared values. Deterministic in `seed`.
  static ParameterStore init(const DdeProblemSpec& spec, const MlpArchitecture& arch, RunMode mode,
                             std::uint64_t seed);

  std::vector<double>& flat() { return flat_; }
  const std::vector<double>& flat() const { return flat_; }
  const std::vector<std::uint8_t>& trainable_mask() const { return mask_; }
  const std::vector<ParamInfo>& layout() const { return layout_; }

  const MlpArchitecture& arch() const { return arch_; }
  int n_networks() const { return n_networks_; }
  int network_params() const { return net_params_; }
  int network_offset(int net) const { return net * net_params_; }
  double time_scale() const { return time_scale_; }

  int n_delays() const { return static_cast<int>(delay_names_.size()); }
  int delay_offset(int idx) const { return delays_base_ + idx; }
  double delay(int idx) const { return flat_[static_cast<std::size_t>(delay_offset(idx))]; }
  const std::string& delay_name(int idx) const { return delay_names_[static_cast<std::size_t>(idx)]; }

  int n_system() const { return static_cast<int>(system_names_.size()); }
  int system_offset(int idx) const { return system_base_ + idx; }
  double system_param(int idx) const { return flat_[static_cast<std::size_t>(system_offset(idx))]; }
  const std::string& system_name(int idx) const { return system_names_[static_cast<std::size_t>(idx)]; }

  /// Names and current values of the trainable delays and system parameters
  /// (the quantities worth tracing during training).
  std::vector<std::pair<std::string, double>> named_trainables() const;

  /// Self-describing JSON checkpoint (layout map plus the flat array).
  void save_checkpoint(const std::string& path) const;
  std::string checkpoint_text() const;
  static ParameterStore load_checkpoint(const std::string& path);
  static ParameterStore load_checkpoint_text(const std::string& text);

 private:
  MlpArchitecture arch_;
  int n_networks_ = 0;
  int net_params_ = 0;
  int delays_base_ = 0;
  int system_base_ = 0;
  double time_scale_ = 1.0;
  std::vector<double> flat_;
  std::vector<std::uint8_t> mask_;
  std::vector<ParamInfo> layout_;
  std::vector<std::string> delay_names_;
  std::vector<std::string> system_names_;
};

/// Every parameter registered as a leaf on one tape, in flat order.
struct LiftedParams {
  const ParameterStore* store = nullptr;
  std::vector<ad::TScalar> leaves;

  const ad::TScalar& at(int flat_index) const { return leaves[static_cast<std::size_t>(flat_index)]; }
  const ad::TScalar& delay(int idx) const { return at(store->delay_offset(idx)); }
  const ad::TScalar& system(int idx) const { return at(store->system_offset(idx)); }
};

LiftedParams lift_params(const ParameterStore& store, ad::Tape& tape);

/// Taped network evaluation: y_pred for component `net` with value, time
/// tangent, and connectivity to that network's weights. The input is scaled
/// by 1/time_scale internally; the returned tangent is w.r.t. unscaled t.
ad::TScalar forward_t(const LiftedParams& params, int net, const ad::TScalar& t, ad::Tape& tape);

/// Plain value-only evaluation (no tape); mirrors forward_t's accumulation
/// order exactly.
double mlp_value(const ParameterStore& store, int net, double t);

/// Extracts the flat gradient vector from a reverse pass.
std::vector<double> flat_gradient(const ad::GradientMap& g, const LiftedParams& params);

}  // namespace ndde
