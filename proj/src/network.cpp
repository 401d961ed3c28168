#include "ndde/network.hpp"

#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include "json.hpp"

namespace ndde {

using nlohmann::json;

namespace {

// Uniform double in [0, 1) from raw 64-bit output; avoids relying on the
// stdlib distribution's implementation.
double uniform01(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

}  // namespace

ParameterStore ParameterStore::init(const DdeProblemSpec& spec, const MlpArchitecture& arch,
                                    RunMode mode, std::uint64_t seed) {
  ParameterStore st;
  st.arch_ = arch;
  st.n_networks_ = spec.n;
  st.net_params_ = arch.param_count();
  st.time_scale_ = spec.horizon;

  const auto dims = arch.dims();
  const int total_net = st.net_params_ * st.n_networks_;
  const int total = total_net + static_cast<int>(spec.delays.size() + spec.system_params.size());
  st.flat_.assign(static_cast<std::size_t>(total), 0.0);
  st.mask_.assign(static_cast<std::size_t>(total), 0);

  std::mt19937_64 rng(seed);
  int offset = 0;
  for (int net = 0; net < st.n_networks_; ++net) {
    const std::string owner = "network:" + std::to_string(net);
    for (std::size_t l = 1; l < dims.size(); ++l) {
      const int fan_in = dims[l - 1], fan_out = dims[l];
      const double bound = std::sqrt(6.0 / (fan_in + fan_out));
      const int wcount = fan_out * fan_in;
      st.layout_.push_back({owner, "W" + std::to_string(l), offset, wcount, true});
      for (int i = 0; i < wcount; ++i)
        st.flat_[static_cast<std::size_t>(offset + i)] = (2.0 * uniform01(rng) - 1.0) * bound;
      offset += wcount;
      st.layout_.push_back({owner, "b" + std::to_string(l), offset, fan_out, true});
      offset += fan_out;  // biases stay zero
    }
  }
  for (int i = 0; i < total_net; ++i) st.mask_[static_cast<std::size_t>(i)] = 1;

  st.delays_base_ = offset;
  for (const auto& d : spec.delays) {
    const bool train = mode == RunMode::inverse && d.trainable;
    st.layout_.push_back({"delay", d.name, offset, 1, train});
    st.flat_[static_cast<std::size_t>(offset)] = train ? 0.0 : d.value;
    st.mask_[static_cast<std::size_t>(offset)] = train ? 1 : 0;
    st.delay_names_.push_back(d.name);
    ++offset;
  }

  st.system_base_ = offset;
  for (const auto& sp : spec.system_params) {
    const bool train = mode == RunMode::inverse && sp.trainable;
    st.layout_.push_back({"system", sp.name, offset, 1, train});
    st.flat_[static_cast<std::size_t>(offset)] = train ? 0.0 : sp.value;
    st.mask_[static_cast<std::size_t>(offset)] = train ? 1 : 0;
    st.system_names_.push_back(sp.name);
    ++offset;
  }

  return st;
}

std::vector<std::pair<std::string, double>> ParameterStore::named_trainables() const {
  std::vector<std::pair<std::string, double>> out;
  for (const auto& info : layout_) {
    if (info.owner == "delay" || info.owner == "system") {
      if (info.trainable) out.emplace_back(info.name, flat_[static_cast<std::size_t>(info.offset)]);
    }
  }
  return out;
}

std::string ParameterStore::checkpoint_text() const {
  json doc;
  doc["format"] = "ndde-checkpoint-v1";
  doc["hidden"] = arch_.hidden;
  doc["n_networks"] = n_networks_;
  doc["time_scale"] = time_scale_;
  doc["delay_names"] = delay_names_;
  doc["system_names"] = system_names_;
  json layout = json::array();
  for (const auto& e : layout_) {
    layout.push_back({{"owner", e.owner},
                      {"name", e.name},
                      {"offset", e.offset},
                      {"count", e.count},
                      {"trainable", e.trainable}});
  }
  doc["layout"] = std::move(layout);
  doc["values"] = flat_;
  return doc.dump(2);
}

void ParameterStore::save_checkpoint(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write checkpoint: " + path);
  out << checkpoint_text() << "\n";
}

ParameterStore ParameterStore::load_checkpoint_text(const std::string& text) {
  json doc = json::parse(text);
  if (doc.value("format", "") != "ndde-checkpoint-v1") throw ConfigError("unknown checkpoint format");
  ParameterStore st;
  st.arch_.hidden = doc.at("hidden").get<std::vector<int>>();
  st.n_networks_ = doc.at("n_networks").get<int>();
  st.net_params_ = st.arch_.param_count();
  st.time_scale_ = doc.at("time_scale").get<double>();
  st.delay_names_ = doc.at("delay_names").get<std::vector<std::string>>();
  st.system_names_ = doc.at("system_names").get<std::vector<std::string>>();
  st.flat_ = doc.at("values").get<std::vector<double>>();
  st.mask_.assign(st.flat_.size(), 0);
  for (const auto& e : doc.at("layout")) {
    ParamInfo info;
    info.owner = e.at("owner").get<std::string>();
    info.name = e.at("name").get<std::string>();
    info.offset = e.at("offset").get<int>();
    info.count = e.at("count").get<int>();
    info.trainable = e.at("trainable").get<bool>();
    for (int i = 0; i < info.count; ++i)
      st.mask_[static_cast<std::size_t>(info.offset + i)] = info.trainable ? 1 : 0;
    st.layout_.push_back(std::move(info));
  }
  st.delays_base_ = st.net_params_ * st.n_networks_;
  st.system_base_ = st.delays_base_ + static_cast<int>(st.delay_names_.size());
  const std::size_t expected =
      static_cast<std::size_t>(st.system_base_) + st.system_names_.size();
  if (st.flat_.size() != expected) throw ConfigError("checkpoint length mismatch");
  return st;
}

ParameterStore ParameterStore::load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open checkpoint: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return load_checkpoint_text(ss.str());
}

LiftedParams lift_params(const ParameterStore& store, ad::Tape& tape) {
  LiftedParams lp;
  lp.store = &store;
  lp.leaves.reserve(store.flat().size());
  for (double v : store.flat()) lp.leaves.push_back(ad::lift_leaf(tape, v));
  return lp;
}

ad::TScalar forward_t(const LiftedParams& params, int net, const ad::TScalar& t, ad::Tape& tape) {
  (void)tape;  // nodes are recorded through the leaves' tape
  const ParameterStore& st = *params.store;
  const auto dims = st.arch().dims();
  int offset = st.network_offset(net);

  std::vector<ad::TScalar> act(1, t / st.time_scale());
  std::vector<ad::TScalar> next;
  for (std::size_t l = 1; l < dims.size(); ++l) {
    const int fan_in = dims[l - 1], fan_out = dims[l];
    const int wbase = offset;
    const int bbase = offset + fan_out * fan_in;
    next.clear();
    next.reserve(static_cast<std::size_t>(fan_out));
    for (int o = 0; o < fan_out; ++o) {
      ad::TScalar z = params.at(bbase + o);
      for (int i = 0; i < fan_in; ++i) {
        z = z + params.at(wbase + o * fan_in + i) * act[static_cast<std::size_t>(i)];
      }
      next.push_back(l + 1 < dims.size() ? ad::tanh(z) : z);
    }
    act.swap(next);
    offset = bbase + fan_out;
  }
  return act[0];
}

double mlp_value(const ParameterStore& store, int net, double t) {
  const auto dims = store.arch().dims();
  const auto& flat = store.flat();
  int offset = store.network_offset(net);

  std::vector<double> act(1, t / store.time_scale());
  std::vector<double> next;
  for (std::size_t l = 1; l < dims.size(); ++l) {
    const int fan_in = dims[l - 1], fan_out = dims[l];
    const int wbase = offset;
    const int bbase = offset + fan_out * fan_in;
    next.clear();
    next.reserve(static_cast<std::size_t>(fan_out));
    for (int o = 0; o < fan_out; ++o) {
      double z = flat[static_cast<std::size_t>(bbase + o)];
      for (int i = 0; i < fan_in; ++i)
        z += flat[static_cast<std::size_t>(wbase + o * fan_in + i)] * act[static_cast<std::size_t>(i)];
      next.push_back(l + 1 < dims.size() ? std::tanh(z) : z);
    }
    act.swap(next);
    offset = bbase + fan_out;
  }
  return act[0];
}

std::vector<double> flat_gradient(const ad::GradientMap& g, const LiftedParams& params) {
  std::vector<double> out(params.leaves.size());
  for (std::size_t i = 0; i < params.leaves.size(); ++i) out[i] = g.at(params.leaves[i]);
  return out;
}

}  // namespace ndde
