#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "bsrlab/error.hpp"
#include "bsrlab/rng.hpp"
#include "bsrlab/rule_engine.hpp"

namespace bsrlab {

struct RunConfig {
  std::uint64_t n = 0;
  RuleSpec rule;
  double t_max = 0.0;
  std::uint64_t seed = 0;
  std::uint64_t run_index = 0;  // stream = hash(seed, run_index)
  std::vector<double> snapshot_times;
  int tracked_k_max = 256;
  std::vector<int> track_sr_orders{2};

  std::uint64_t total_steps() const { return static_cast<std::uint64_t>(std::floor(t_max * static_cast<double>(n) + 1e-6)); }

  void validate() const {
    if (n == 0) throw Error(ErrorKind::invalid_config, "n must be at least 1");
    if (n > 0xffffffffULL) throw Error(ErrorKind::invalid_config, "n beyond 2^32-1 exceeds the 32-bit vertex index");
    if (!(t_max >= 0.0)) throw Error(ErrorKind::invalid_config, "t_max must be non-negative");
    if (!std::is_sorted(snapshot_times.begin(), snapshot_times.end()))
      throw Error(ErrorKind::invalid_config, "snapshot times must be sorted");
    for (double t : snapshot_times)
      if (t < 0.0 || t > t_max) throw Error(ErrorKind::invalid_config, "snapshot times must lie in [0, t_max]");
    if (tracked_k_max < 1) throw Error(ErrorKind::invalid_config, "tracked_k_max must be positive");
    for (int r : track_sr_orders) {
      if (r < 2) throw Error(ErrorKind::invalid_config, "tracked S_r orders must be at least 2");
      if (r * std::log2(static_cast<double>(n)) >= 126.0)
        throw Error(ErrorKind::invalid_config, "S_" + std::to_string(r) + " would overflow the 128-bit accumulator");
    }
  }
};

// Component count per size: dense array for small sizes, ordered map above.
class SizeIndex {
 public:
  explicit SizeIndex(std::uint64_t dense_limit = 1024) : dense_(dense_limit + 1, 0) {}

  void add(std::uint64_t size) {
    if (size < dense_.size()) ++dense_[size];
    else ++sparse_[size];
  }

  void remove(std::uint64_t size) {
    if (size < dense_.size()) {
      --dense_[size];
    } else {
      auto it = sparse_.find(size);
      if (--it->second == 0) sparse_.erase(it);
    }
  }

  std::uint64_t count(std::uint64_t size) const {
    if (size < dense_.size()) return dense_[size];
    auto it = sparse_.find(size);
    return it == sparse_.end() ? 0 : it->second;
  }

  // The j largest sizes with multiplicity, padded with zeros.
  std::vector<std::uint64_t> top(std::size_t j) const {
    std::vector<std::uint64_t> out;
    out.reserve(j);
    for (auto it = sparse_.rbegin(); it != sparse_.rend() && out.size() < j; ++it)
      for (std::uint64_t c = 0; c < it->second && out.size() < j; ++c) out.push_back(it->first);
    for (std::size_t s = dense_.size(); s-- > 1 && out.size() < j;)
      for (std::uint64_t c = 0; c < dense_[s] && out.size() < j; ++c) out.push_back(s);
    out.resize(j, 0);
    return out;
  }

  template <class F>
  void for_each(F&& f) const {
    for (std::size_t s = 1; s < dense_.size(); ++s)
      if (dense_[s]) f(static_cast<std::uint64_t>(s), dense_[s]);
    for (const auto& [s, c] : sparse_) f(s, c);
  }

  std::uint64_t vertex_total() const {
    std::uint64_t total = 0;
    for_each([&](std::uint64_t s, std::uint64_t c) { total += s * c; });
    return total;
  }

 private:
  std::vector<std::uint64_t> dense_;
  std::map<std::uint64_t, std::uint64_t> sparse_;
};

using uint128 = unsigned __int128;

inline uint128 pow128(std::uint64_t base, int r) {
  uint128 out = 1;
  for (int i = 0; i < r; ++i) out *= base;
  return out;
}

struct StepRecord {
  std::array<std::uint32_t, kMaxArity> vertices{};
  std::array<std::uint64_t, kMaxArity> sizes{};  // component sizes before the step
  int arity = 0;
  RulePick pick;
  bool merged = false;
};

struct ProcessState {
  std::uint64_t n = 0;
  std::vector<std::uint32_t> parent;
  std::vector<std::uint32_t> size;
  SizeIndex index;
  std::vector<int> sr_orders;
  std::vector<uint128> sr_sums;  // exact sum over components of |C|^r
  std::uint64_t step = 0;
  std::uint64_t self_loops = 0;      // both endpoints the same vertex
  std::uint64_t internal_edges = 0;  // distinct endpoints, already connected

  std::uint32_t find(std::uint32_t v) {
    while (parent[v] != v) {
      parent[v] = parent[parent[v]];
      v = parent[v];
    }
    return v;
  }

  std::uint64_t component_size(std::uint32_t v) { return size[find(v)]; }

  // Joins the components of u and v; returns false if already joined.
  bool join(std::uint32_t u, std::uint32_t v) {
    std::uint32_t a = find(u), b = find(v);
    if (a == b) return false;
    if (size[a] < size[b]) std::swap(a, b);
    const std::uint64_t sa = size[a], sb = size[b];
    parent[b] = a;
    size[a] = static_cast<std::uint32_t>(sa + sb);
    index.remove(sa);
    index.remove(sb);
    index.add(sa + sb);
    for (std::size_t i = 0; i < sr_orders.size(); ++i) {
      const int r = sr_orders[i];
      sr_sums[i] += pow128(sa + sb, r) - pow128(sa, r) - pow128(sb, r);
    }
    return true;
  }

  // S_r = (1/n) sum |C|^r for a tracked order r.
  double S(int r) const {
    for (std::size_t i = 0; i < sr_orders.size(); ++i)
      if (sr_orders[i] == r) return static_cast<double>(sr_sums[i]) / static_cast<double>(n);
    throw Error(ErrorKind::invalid_config, "S_" + std::to_string(r) + " is not tracked");
  }

  std::vector<std::uint64_t> top_components(std::size_t j) const { return index.top(j); }
};

inline ProcessState init_state(std::uint64_t n, std::vector<int> sr_orders = {2}) {
  if (n == 0) throw Error(ErrorKind::invalid_config, "n must be at least 1");
  if (n > 0xffffffffULL) throw Error(ErrorKind::invalid_config, "n beyond 2^32-1 exceeds the 32-bit vertex index");
  ProcessState st;
  st.n = n;
  try {
    st.parent.resize(n);
    st.size.assign(n, 1);
  } catch (const std::bad_alloc&) {
    throw Error(ErrorKind::invalid_config, "out of memory: n=" + std::to_string(n) + " needs ~8n bytes");
  }
  for (std::uint64_t v = 0; v < n; ++v) st.parent[v] = static_cast<std::uint32_t>(v);
  for (std::uint64_t v = 0; v < n; ++v) st.index.add(1);
  st.sr_orders = std::move(sr_orders);
  st.sr_sums.assign(st.sr_orders.size(), static_cast<uint128>(n));
  return st;
}

inline ProcessState init_state(const RunConfig& config) {
  config.validate();
  return init_state(config.n, config.track_sr_orders);
}

// Applies the rule to an explicit vertex draw.
inline StepRecord apply_draw(ProcessState& st, const RuleSpec& rule, const std::uint32_t* vertices) {
  StepRecord rec;
  rec.arity = rule.arity();
  for (int j = 0; j < rec.arity; ++j) {
    rec.vertices[j] = vertices[j];
    rec.sizes[j] = st.component_size(vertices[j]);
  }
  rec.pick = rule.pick_for_sizes(rec.sizes.data());
  const std::uint32_t u = rec.vertices[rec.pick.first], v = rec.vertices[rec.pick.second];
  rec.merged = st.join(u, v);
  if (!rec.merged) {
    if (u == v) ++st.self_loops;
    else ++st.internal_edges;
  }
  ++st.step;
  return rec;
}

inline StepRecord apply_step(ProcessState& st, const RuleSpec& rule, CounterRng& rng) {
  std::array<std::uint32_t, kMaxArity> draw{};
  for (int j = 0; j < rule.arity(); ++j) draw[j] = static_cast<std::uint32_t>(rng.below(st.n));
  return apply_draw(st, rule, draw.data());
}

struct SnapshotStats {
  double t = 0.0;
  std::uint64_t step = 0;
  std::uint64_t n = 0;
  std::vector<std::uint64_t> N;  // N[k] = vertices in size-k components, k = 1..tracked (N[0] unused)
  std::uint64_t N_over = 0;      // vertices in components larger than tracked_k_max
  std::uint64_t N_omega = 0;     // vertices in components larger than K
  std::uint64_t L1 = 0;
  std::uint64_t L2 = 0;
  std::vector<int> sr_orders;
  std::vector<double> S;
  std::uint64_t self_loops = 0;
  std::uint64_t internal_edges = 0;

  // Vertices in components of size at least k.
  std::uint64_t N_at_least(std::size_t k) const {
    std::uint64_t below = 0;
    for (std::size_t j = 1; j < k && j < N.size(); ++j) below += N[j];
    return n - below;
  }
};

inline SnapshotStats take_snapshot(const ProcessState& st, int cutoff, int tracked_k_max) {
  SnapshotStats s;
  s.step = st.step;
  s.t = static_cast<double>(st.step) / static_cast<double>(st.n);
  s.n = st.n;
  s.N.assign(static_cast<std::size_t>(tracked_k_max) + 1, 0);
  st.index.for_each([&](std::uint64_t size, std::uint64_t count) {
    if (size <= static_cast<std::uint64_t>(tracked_k_max)) s.N[size] = size * count;
    else s.N_over += size * count;
    if (size > static_cast<std::uint64_t>(cutoff)) s.N_omega += size * count;
  });
  const auto top = st.index.top(2);
  s.L1 = top[0];
  s.L2 = top[1];
  s.sr_orders = st.sr_orders;
  for (std::size_t i = 0; i < st.sr_orders.size(); ++i)
    s.S.push_back(static_cast<double>(st.sr_sums[i]) / static_cast<double>(st.n));
  s.self_loops = st.self_loops;
  s.internal_edges = st.internal_edges;
  return s;
}

// One run of the process with its own generator stream.
class Simulation {
 public:
  explicit Simulation(RunConfig config)
      : config_(std::move(config)), state_(init_state(config_)), rng_(config_.seed, config_.run_index) {}

  const RunConfig& config() const { return config_; }
  ProcessState& state() { return state_; }
  const ProcessState& state() const { return state_; }

  void advance_to(std::uint64_t step) {
    while (state_.step < step) apply_step(state_, config_.rule, rng_);
  }

  template <class Observer>
  void advance_to(std::uint64_t step, Observer&& observe) {
    while (state_.step < step) observe(apply_step(state_, config_.rule, rng_));
  }

  SnapshotStats snapshot() const {
    return take_snapshot(state_, config_.rule.is_unbounded() ? 0 : config_.rule.cutoff(), config_.tracked_k_max);
  }

  std::uint64_t step_for(double t) const {
    return static_cast<std::uint64_t>(std::floor(t * static_cast<double>(config_.n) + 1e-6));
  }

 private:
  RunConfig config_;
  ProcessState state_;
  CounterRng rng_;
};

inline std::vector<SnapshotStats> run(const RunConfig& config) {
  Simulation sim(config);
  std::vector<SnapshotStats> out;
  out.reserve(config.snapshot_times.size());
  for (double t : config.snapshot_times) {
    sim.advance_to(sim.step_for(t));
    out.push_back(sim.snapshot());
    out.back().t = t;
  }
  sim.advance_to(config.total_steps());
  return out;
}

// ---------------------------------------------------------------------------
// Output

inline std::string format_double(double x) {
  std::ostringstream os;
  os.precision(17);
  os << x;
  return os.str();
}

inline void write_snapshot_csv(std::ostream& os, const std::vector<SnapshotStats>& snaps) {
  if (snaps.empty()) return;
  const auto& first = snaps.front();
  os << "t,L1,L2,Nomega";
  for (int r : first.sr_orders) os << ",S" << r;
  for (std::size_t k = 1; k < first.N.size(); ++k) os << ",N_" << k;
  os << '\n';
  for (const auto& s : snaps) {
    os << format_double(s.t) << ',' << s.L1 << ',' << s.L2 << ',' << s.N_omega;
    for (double v : s.S) os << ',' << format_double(v);
    for (std::size_t k = 1; k < s.N.size(); ++k) os << ',' << s.N[k];
    os << '\n';
  }
}

inline nlohmann::json run_config_json(const RunConfig& c) {
  return {{"n", c.n},
          {"rule", c.rule.name()},
          {"arity", c.rule.arity()},
          {"cutoff", c.rule.cutoff()},
          {"unbounded", c.rule.is_unbounded()},
          {"t_max", c.t_max},
          {"seed", c.seed},
          {"run_index", c.run_index},
          {"snapshot_times", c.snapshot_times},
          {"tracked_k_max", c.tracked_k_max},
          {"track_sr_orders", c.track_sr_orders}};
}

}  // namespace bsrlab
