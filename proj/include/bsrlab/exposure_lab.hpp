#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include <boost/math/distributions/chi_squared.hpp>
#include <nlohmann/json.hpp>

#include "bsrlab/error.hpp"
#include "bsrlab/process_sim.hpp"
#include "bsrlab/rng.hpp"
#include "bsrlab/rule_engine.hpp"

namespace bsrlab {

// ---------------------------------------------------------------------------
// Parameter lists

struct ParameterList {
  int cutoff = 0;
  std::map<std::uint64_t, std::uint64_t> NL;         // k -> N_k, vertices in V_L components of size k
  std::map<std::pair<int, int>, double> Q;           // (k, r) -> Q_{k,r}

  double q(int k, int r) const {
    const auto it = Q.find({k, r});
    return it == Q.end() ? 0.0 : it->second;
  }
  std::uint64_t v_large() const {
    std::uint64_t s = 0;
    for (const auto& [k, v] : NL) s += v;
    return s;
  }
  double v_small() const {
    double s = 0;
    for (const auto& [kr, v] : Q) s += kr.first * v;
    return s;
  }
  double order() const { return static_cast<double>(v_large()) + v_small(); }
  double stub_weight() const {  // sum r (r-1) Q_{k,r}
    double s = 0;
    for (const auto& [kr, v] : Q) s += kr.second * (kr.second - 1.0) * v;
    return s;
  }

  void validate() const {
    for (const auto& [k, v] : NL) {
      if (static_cast<int>(k) <= cutoff || k == 0) throw Error(ErrorKind::invalid_config, "N_k needs k > K");
      if (v % k != 0) throw Error(ErrorKind::invalid_config, "N_k must be a multiple of k");
    }
    for (const auto& [kr, v] : Q) {
      if (kr.first < 0 || kr.second < 0 || v < 0) throw Error(ErrorKind::invalid_config, "negative Q entry");
      if (kr.first == 0 && kr.second < 1 && v > 0) throw Error(ErrorKind::invalid_config, "Q_{0,r} needs r >= 1");
    }
  }
};

inline nlohmann::json to_json(const ParameterList& s) {
  nlohmann::json nl = nlohmann::json::object();
  for (const auto& [k, v] : s.NL) nl[std::to_string(k)] = v;
  nlohmann::json q = nlohmann::json::array();
  for (const auto& [kr, v] : s.Q)
    if (v != 0) q.push_back({kr.first, kr.second, v});
  return {{"n", s.order()}, {"cutoff", s.cutoff}, {"NL", nl}, {"Q", q}};
}

inline ParameterList parameter_list_from_json(const nlohmann::json& j) {
  ParameterList s;
  try {
    s.cutoff = j.value("cutoff", 0);
    for (const auto& [k, v] : j.at("NL").items()) s.NL[std::stoull(k)] = v.get<std::uint64_t>();
    for (const auto& e : j.at("Q")) s.Q[{e.at(0).get<int>(), e.at(1).get<int>()}] = e.at(2).get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::parse, std::string("parameter list: ") + e.what());
  }
  s.validate();
  return s;
}

// ---------------------------------------------------------------------------
// First exposure round bookkeeping

class MarkedGraphTracker {
 public:
  static constexpr std::uint32_t kLarge = 0xffffffffu;

  // Fixes V_S (components of size <= K) and V_L from the state at step i_0.
  MarkedGraphTracker(ProcessState& st, int cutoff) : K_(cutoff) {
    local_.assign(st.n, kLarge);
    std::map<std::uint32_t, std::uint32_t> root_local;
    for (std::uint32_t v = 0; v < st.n; ++v) {
      const std::uint32_t root = st.find(v);
      const std::uint64_t size = st.size[root];
      if (size > static_cast<std::uint64_t>(K_)) {
        ++large_size_counts_[size];
        continue;
      }
      auto [it, fresh] = root_local.try_emplace(root, static_cast<std::uint32_t>(parent_.size()));
      if (fresh) {
        parent_.push_back(it->second);
        k_.push_back(0);
        r_.push_back(0);
      }
      local_[v] = it->second;
      ++k_[it->second];
    }
    for (auto& [size, count] : large_size_counts_) count /= size;  // vertices -> components
    for (std::uint32_t c = 0; c < parent_.size(); ++c) ++types_[{static_cast<int>(k_[c]), 0}];
  }

  bool in_small(std::uint32_t v) const { return local_[v] != kLarge; }

  // Truncated size class of v as known after the first exposure round.
  TruncatedSize class_of(std::uint32_t v) {
    if (!in_small(v)) return TruncatedSize::omega();
    const auto c = find(local_[v]);
    if (r_[c] > 0 || k_[c] > static_cast<std::uint64_t>(K_)) return TruncatedSize::omega();
    return TruncatedSize::of(k_[c], K_);
  }

  void observe(std::uint32_t u, std::uint32_t v) {
    const bool su = in_small(u), sv = in_small(v);
    if (su && sv) {
      auto a = find(local_[u]), b = find(local_[v]);
      if (a == b) return;
      retype(a, -1);
      retype(b, -1);
      if (k_[a] < k_[b]) std::swap(a, b);
      parent_[b] = a;
      k_[a] += k_[b];
      r_[a] += r_[b];
      retype(a, +1);
    } else if (su || sv) {
      const auto c = find(local_[su ? u : v]);
      retype(c, -1);
      ++r_[c];
      retype(c, +1);
    } else {
      ++q02_;
    }
  }

  ParameterList parameters() const {
    ParameterList s;
    s.cutoff = K_;
    for (const auto& [size, count] : large_size_counts_) s.NL[size] = size * count;
    for (const auto& [kr, count] : types_)
      if (count > 0) s.Q[kr] = static_cast<double>(count);
    if (q02_ > 0) s.Q[{0, 2}] = static_cast<double>(q02_);
    return s;
  }

  std::uint64_t q02() const { return q02_; }

 private:
  std::uint32_t find(std::uint32_t x) {
    while (parent_[x] != x) {
      parent_[x] = parent_[parent_[x]];
      x = parent_[x];
    }
    return x;
  }
  void retype(std::uint32_t c, int delta) {
    auto& cnt = types_[{static_cast<int>(k_[c]), static_cast<int>(r_[c])}];
    cnt = static_cast<std::uint64_t>(static_cast<std::int64_t>(cnt) + delta);
  }

  int K_;
  std::vector<std::uint32_t> local_;
  std::vector<std::uint32_t> parent_;
  std::vector<std::uint64_t> k_;
  std::vector<std::uint64_t> r_;
  std::map<std::uint64_t, std::uint64_t> large_size_counts_;
  std::map<std::pair<int, int>, std::uint64_t> types_;
  std::uint64_t q02_ = 0;
};

// Runs the process and emits the parameter list at every requested step in [i0, i1].
inline std::map<std::uint64_t, ParameterList> track_exposure(const RunConfig& config, std::uint64_t i0, std::uint64_t i1,
                                                             std::vector<std::uint64_t> steps) {
  config.validate();
  config.rule.require_bounded();
  if (i0 > i1 || i1 > config.total_steps())
    throw Error(ErrorKind::invalid_config, "exposure window outside the run range");
  std::sort(steps.begin(), steps.end());
  for (auto s : steps)
    if (s < i0 || s > i1) throw Error(ErrorKind::invalid_config, "requested step outside the exposure window");
  Simulation sim(config);
  sim.advance_to(i0);
  MarkedGraphTracker tracker(sim.state(), config.rule.cutoff());
  std::map<std::uint64_t, ParameterList> out;
  for (auto s : steps) {
    sim.advance_to(s, [&](const StepRecord& rec) {
      tracker.observe(rec.vertices[rec.pick.first], rec.vertices[rec.pick.second]);
    });
    out[s] = tracker.parameters();
  }
  return out;
}

// ---------------------------------------------------------------------------
// J(S) and J^Po(S)

namespace detail {

struct WeightedUnionFind {
  std::vector<std::uint32_t> parent;
  std::vector<std::uint64_t> weight;

  std::uint32_t add(std::uint64_t w) {
    parent.push_back(static_cast<std::uint32_t>(parent.size()));
    weight.push_back(w);
    return parent.back();
  }
  std::uint32_t find(std::uint32_t x) {
    while (parent[x] != x) {
      parent[x] = parent[parent[x]];
      x = parent[x];
    }
    return x;
  }
  void join(std::uint32_t a, std::uint32_t b) {
    a = find(a);
    b = find(b);
    if (a == b) return;
    if (weight[a] < weight[b]) std::swap(a, b);
    parent[b] = a;
    weight[a] += weight[b];
  }
  std::vector<std::uint64_t> sizes() {
    std::vector<std::uint64_t> out;
    for (std::uint32_t i = 0; i < parent.size(); ++i)
      if (find(i) == i && weight[i] > 0) out.push_back(weight[i]);
    std::sort(out.rbegin(), out.rend());
    return out;
  }
};

// Component skeleton of H_L: V_L vertex index -> component node.
struct LargeSide {
  std::vector<std::uint32_t> vertex_node;
  std::vector<std::uint64_t> node_start;  // first vertex index of each node

  LargeSide(const ParameterList& s, WeightedUnionFind& uf) {
    for (const auto& [k, v] : s.NL)
      for (std::uint64_t c = 0; c < v / k; ++c) {
        const auto node = uf.add(k);
        node_start.push_back(vertex_node.size());
        vertex_node.insert(vertex_node.end(), k, node);
      }
  }
  std::uint64_t size() const { return vertex_node.size(); }
};

inline std::uint64_t poisson(double mean, CounterRng& rng) {
  if (mean <= 0) return 0;
  std::poisson_distribution<std::uint64_t> d(mean);
  return d(rng);
}

}  // namespace detail

// Component sizes (descending) of J(S), or of J^Po(S) when `poissonized`.
inline std::vector<std::uint64_t> sample_graph(const ParameterList& s, bool poissonized, CounterRng& rng) {
  s.validate();
  detail::WeightedUnionFind uf;
  detail::LargeSide large(s, uf);
  const std::uint64_t nl = large.size();
  for (const auto& [kr, qv] : s.Q) {
    const auto [k, r] = kr;
    std::uint64_t count;
    if (poissonized) {
      count = detail::poisson(qv, rng);
    } else {
      if (qv != std::floor(qv)) throw Error(ErrorKind::mode, "fractional Q_{k,r} needs the Poissonized mode");
      count = static_cast<std::uint64_t>(qv);
    }
    if (count > 0 && r > 0 && nl == 0) throw Error(ErrorKind::invalid_config, "stubs need a non-empty V_L");
    for (std::uint64_t c = 0; c < count; ++c) {
      std::optional<std::uint32_t> anchor;
      if (k > 0) anchor = uf.add(static_cast<std::uint64_t>(k));
      for (int h = 0; h < r; ++h) {
        const auto w = large.vertex_node[rng.below(nl)];
        if (anchor) uf.join(*anchor, w);
        else anchor = w;
      }
    }
  }
  return uf.sizes();
}

// ---------------------------------------------------------------------------
// Exploration of J^Po(S)

struct ExplorationTrace {
  std::vector<std::uint64_t> M;       // reached V_L vertices after j steps
  std::vector<std::uint64_t> S;       // reached V_S vertices (including S_0)
  std::vector<std::uint64_t> active;  // |A_j|
  std::uint64_t initial_large = 0;    // |W|
  std::uint64_t s0 = 0;

  std::uint64_t total() const { return M.back() + S.back(); }
};

inline ExplorationTrace explore(const ParameterList& s, CounterRng& rng) {
  s.validate();
  detail::WeightedUnionFind uf;
  detail::LargeSide large(s, uf);
  const std::uint64_t nl = large.size();
  const double order = s.order();
  if (!(order > 0)) throw Error(ErrorKind::invalid_config, "empty parameter list");

  struct Kind {
    int k, r;
    double q;
  };
  std::vector<Kind> kinds;
  for (const auto& [kr, qv] : s.Q)
    if (kr.second >= 1 && qv > 0) kinds.push_back({kr.first, kr.second, qv});

  std::vector<char> reached(large.node_start.size(), 0);
  std::vector<std::uint64_t> stack;  // active vertex indices
  ExplorationTrace tr;
  std::uint64_t M = 0, S = 0;
  auto reach_vertex = [&](std::uint64_t w) {
    const auto node = large.vertex_node[w];
    if (reached[node]) return;
    reached[node] = 1;
    const std::uint64_t start = large.node_start[node], k = uf.weight[node];
    for (std::uint64_t x = start; x < start + k; ++x) stack.push_back(x);
    M += k;
  };

  // Initial generation: a uniform vertex of |S|, V_L or V_S.
  double u = rng.uniform() * order;
  if (u < static_cast<double>(nl)) {
    reach_vertex(std::min<std::uint64_t>(static_cast<std::uint64_t>(u), nl - 1));
  } else {
    u -= static_cast<double>(nl);
    const Kind* pick = nullptr;
    std::vector<Kind> all;
    for (const auto& [kr, qv] : s.Q)
      if (kr.first >= 1 && qv > 0) all.push_back({kr.first, kr.second, qv});
    for (const auto& kd : all) {
      pick = &kd;
      if (u < kd.k * kd.q) break;
      u -= kd.k * kd.q;
    }
    S = static_cast<std::uint64_t>(pick->k);
    for (int h = 0; h < pick->r; ++h) reach_vertex(rng.below(nl));
  }
  tr.initial_large = M;
  tr.s0 = S;
  tr.M.push_back(M);
  tr.S.push_back(S);
  tr.active.push_back(stack.size());

  std::vector<char> done(nl, 0);
  std::uint64_t explored = 0;
  std::vector<double> rate(kinds.size());
  while (!stack.empty()) {
    const std::uint64_t v = stack.back();
    stack.pop_back();
    // Untested hyperedges through v contain no explored vertex.
    const double free_n = static_cast<double>(nl - explored), n = static_cast<double>(nl);
    double total = 0.0;
    for (std::size_t i = 0; i < kinds.size(); ++i) {
      const double r = kinds[i].r;
      rate[i] = kinds[i].q * (std::pow(free_n, r) - std::pow(free_n - 1, r)) / std::pow(n, r);
      total += rate[i];
    }
    const auto found = detail::poisson(total, rng);
    for (std::uint64_t f = 0; f < found; ++f) {
      double x = rng.uniform() * total;
      std::size_t i = 0;
      while (i + 1 < kinds.size() && x >= rate[i]) x -= rate[i++];
      const auto& kd = kinds[i];
      S += static_cast<std::uint64_t>(kd.k);
      // Number of slots taken by v, then the rest uniform over unexplored V_L minus v.
      std::vector<double> occ(static_cast<std::size_t>(kd.r) + 1, 0.0);
      double occ_total = 0.0;
      for (int m = 1; m <= kd.r; ++m) {
        occ[m] = std::exp(std::lgamma(kd.r + 1.0) - std::lgamma(m + 1.0) - std::lgamma(kd.r - m + 1.0)) *
                 std::pow(free_n - 1, kd.r - m);
        occ_total += occ[m];
      }
      double y = rng.uniform() * occ_total;
      int m = 1;
      while (m < kd.r && y >= occ[m]) y -= occ[m++];
      for (int h = 0; h < kd.r - m; ++h) {
        std::uint64_t w;
        do {
          w = rng.below(nl);
        } while (done[w] || w == v);
        reach_vertex(w);
      }
    }
    done[v] = 1;
    ++explored;
    tr.M.push_back(M);
    tr.S.push_back(S);
    tr.active.push_back(stack.size());
  }
  return tr;
}

// ---------------------------------------------------------------------------
// Equivalence test

struct ComponentProfile {
  std::array<std::uint64_t, 17> counts{};  // components of size 1..16, then > 16 except the largest
  std::uint64_t L1 = 0;
};

inline ComponentProfile profile_from_sizes(const std::vector<std::uint64_t>& sizes_desc) {
  ComponentProfile p;
  for (std::size_t i = 0; i < sizes_desc.size(); ++i) {
    const auto k = sizes_desc[i];
    if (i == 0) p.L1 = k;
    if (k <= 16) ++p.counts[k - 1];
    else if (i > 0) ++p.counts[16];
  }
  return p;
}

inline ComponentProfile profile_from_state(ProcessState& st) {
  std::vector<std::uint64_t> sizes;
  st.index.for_each([&](std::uint64_t size, std::uint64_t count) { sizes.insert(sizes.end(), count, size); });
  std::sort(sizes.rbegin(), sizes.rend());
  return profile_from_sizes(sizes);
}

struct ChiSquareReport {
  double statistic = 0.0;
  int dof = 0;
  double p_value = 1.0;
  std::vector<std::string> labels;
  std::vector<std::array<double, 2>> counts;
};

namespace detail {

// Two-row homogeneity statistic with adjacent columns merged until every
// expected count is at least 5.
inline void add_homogeneity(ChiSquareReport& rep, const std::vector<std::string>& labels,
                            const std::vector<std::array<double, 2>>& cols) {
  double row[2] = {0, 0};
  for (const auto& c : cols) {
    row[0] += c[0];
    row[1] += c[1];
  }
  const double total = row[0] + row[1];
  if (row[0] <= 0 || row[1] <= 0) return;
  std::vector<std::array<double, 2>> merged;
  std::vector<std::string> names;
  std::array<double, 2> acc{0, 0};
  std::string name;
  for (std::size_t i = 0; i < cols.size(); ++i) {
    acc[0] += cols[i][0];
    acc[1] += cols[i][1];
    name = name.empty() ? labels[i] : name + "+" + labels[i];
    const double col = acc[0] + acc[1];
    if (col * row[0] / total >= 5 && col * row[1] / total >= 5) {
      merged.push_back(acc);
      names.push_back(name);
      acc = {0, 0};
      name.clear();
    }
  }
  if (acc[0] + acc[1] > 0) {
    if (merged.empty()) {
      merged.push_back(acc);
      names.push_back(name);
    } else {
      merged.back()[0] += acc[0];
      merged.back()[1] += acc[1];
      names.back() += "+" + name;
    }
  }
  if (merged.size() < 2) return;
  for (const auto& c : merged) {
    const double col = c[0] + c[1];
    for (int r = 0; r < 2; ++r) {
      const double e = col * row[r] / total;
      rep.statistic += (c[r] - e) * (c[r] - e) / e;
    }
  }
  rep.dof += static_cast<int>(merged.size()) - 1;
  rep.labels.insert(rep.labels.end(), names.begin(), names.end());
  rep.counts.insert(rep.counts.end(), merged.begin(), merged.end());
}

}  // namespace detail

// Chi-square comparison of two samples of component profiles: pooled
// component counts by size, plus the largest component in log2 buckets.
inline ChiSquareReport chi_square_homogeneity(const std::vector<ComponentProfile>& a,
                                              const std::vector<ComponentProfile>& b) {
  ChiSquareReport rep;
  std::vector<std::array<double, 2>> cols(17, {0, 0});
  std::vector<std::string> labels;
  for (int k = 1; k <= 16; ++k) labels.push_back("N" + std::to_string(k));
  labels.push_back("N>16");
  for (const auto& p : a)
    for (int i = 0; i < 17; ++i) cols[i][0] += static_cast<double>(p.counts[i]);
  for (const auto& p : b)
    for (int i = 0; i < 17; ++i) cols[i][1] += static_cast<double>(p.counts[i]);
  detail::add_homogeneity(rep, labels, cols);

  std::map<int, std::array<double, 2>> buckets;
  for (const auto& p : a) buckets[static_cast<int>(std::floor(std::log2(static_cast<double>(p.L1))))][0] += 1;
  for (const auto& p : b) buckets[static_cast<int>(std::floor(std::log2(static_cast<double>(p.L1))))][1] += 1;
  std::vector<std::array<double, 2>> lcols;
  std::vector<std::string> llabels;
  if (!buckets.empty())
    for (int e = buckets.begin()->first; e <= buckets.rbegin()->first; ++e) {
      lcols.push_back(buckets.count(e) ? buckets[e] : std::array<double, 2>{0, 0});
      llabels.push_back("L1~2^" + std::to_string(e));
    }
  detail::add_homogeneity(rep, llabels, lcols);
  if (rep.dof > 0) {
    boost::math::chi_squared dist(rep.dof);
    rep.p_value = boost::math::cdf(boost::math::complement(dist, rep.statistic));
  }
  return rep;
}

struct EquivalenceReport {
  std::string rule;
  std::uint64_t n = 0;
  std::uint64_t step = 0;
  int runs = 0;
  std::uint64_t seed = 0;
  bool power_warning = false;
  ChiSquareReport test;
  std::vector<ComponentProfile> g_profiles;
  std::vector<ComponentProfile> j_profiles;
};

inline nlohmann::json to_json(const EquivalenceReport& r) {
  nlohmann::json buckets = nlohmann::json::array();
  for (std::size_t i = 0; i < r.test.labels.size(); ++i)
    buckets.push_back({{"bucket", r.test.labels[i]}, {"G", r.test.counts[i][0]}, {"J", r.test.counts[i][1]}});
  return {{"rule", r.rule},          {"n", r.n},
          {"step", r.step},          {"runs", r.runs},
          {"seed", r.seed},          {"statistic", r.test.statistic},
          {"dof", r.test.dof},       {"p_value", r.test.p_value},
          {"power_warning", r.power_warning}, {"buckets", buckets}};
}

// For each run: simulate G_i with the exposure tracker from i0, then draw J
// from the extracted parameter list (after `corrupt`, if given).
inline EquivalenceReport equivalence_test(const RuleSpec& rule, std::uint64_t n, std::uint64_t i0, std::uint64_t i,
                                          int runs, std::uint64_t seed,
                                          const std::function<void(ParameterList&)>& corrupt = {}) {
  rule.require_bounded();
  if (runs <= 0) throw Error(ErrorKind::invalid_config, "equivalence test needs at least one run");
  if (i0 > i) throw Error(ErrorKind::invalid_config, "step precedes the exposure start");
  EquivalenceReport rep;
  rep.rule = rule.name();
  rep.n = n;
  rep.step = i;
  rep.runs = runs;
  rep.seed = seed;
  rep.power_warning = runs < 50;
  for (int run = 0; run < runs; ++run) {
    RunConfig cfg;
    cfg.n = n;
    cfg.rule = rule;
    cfg.t_max = static_cast<double>(i) / static_cast<double>(n) + 1.0 / static_cast<double>(n);
    cfg.seed = seed;
    cfg.run_index = static_cast<std::uint64_t>(run);
    Simulation sim(cfg);
    sim.advance_to(i0);
    MarkedGraphTracker tracker(sim.state(), rule.cutoff());
    sim.advance_to(i, [&](const StepRecord& rec) {
      tracker.observe(rec.vertices[rec.pick.first], rec.vertices[rec.pick.second]);
    });
    rep.g_profiles.push_back(profile_from_state(sim.state()));
    auto params = tracker.parameters();
    if (corrupt) corrupt(params);
    CounterRng rng(stream_key(seed, 0x4a4a4a), static_cast<std::uint64_t>(run));
    rep.j_profiles.push_back(profile_from_sizes(sample_graph(params, false, rng)));
  }
  rep.test = chi_square_homogeneity(rep.g_profiles, rep.j_profiles);
  return rep;
}

// ---------------------------------------------------------------------------
// Tail diagnostics

struct TailDiagnostics {
  double n_rate = 0.0;  // a in N_{>=k} ~ e^{-a k}
  double q_rate = 0.0;  // b in Q_{>=k,>=r} summed over k + r >= m ~ e^{-b m}
  std::uint64_t max_large_k = 0;
  int max_k_plus_r = 0;
  int lattice_violations = 0;  // pieces with r >= 1 and k off the period lattice
};

namespace detail {
inline double log_slope(const std::vector<std::pair<double, double>>& xy) {
  if (xy.size() < 2) return 0.0;
  double mx = 0, my = 0;
  for (const auto& [x, y] : xy) {
    mx += x;
    my += y;
  }
  mx /= static_cast<double>(xy.size());
  my /= static_cast<double>(xy.size());
  double sxx = 0, sxy = 0;
  for (const auto& [x, y] : xy) {
    sxx += (x - mx) * (x - mx);
    sxy += (x - mx) * (y - my);
  }
  return sxy / sxx;
}
}  // namespace detail

// Exponential tail rates of N_k(i0) (from the first list) and of Q_{k,r}
// (pooled over the series); tail points with fewer than `min_count` units are ignored.
inline TailDiagnostics tail_diagnostics(const std::vector<ParameterList>& series, int period = 1,
                                        double min_count = 10) {
  TailDiagnostics d;
  if (series.empty()) return d;
  const auto& first = series.front();
  std::map<std::uint64_t, double> comps;
  for (const auto& [k, v] : first.NL) {
    comps[k] += static_cast<double>(v / k);
    d.max_large_k = std::max(d.max_large_k, k);
  }
  std::vector<std::pair<double, double>> pts;
  double acc = 0;
  for (auto it = comps.rbegin(); it != comps.rend(); ++it) {
    acc += it->second;
    if (acc >= min_count) pts.push_back({static_cast<double>(it->first), std::log(acc)});
  }
  d.n_rate = -detail::log_slope(pts);

  std::map<int, double> by_m;
  for (const auto& s : series)
    for (const auto& [kr, v] : s.Q) {
      if (kr.first == 0 || v <= 0) continue;
      by_m[kr.first + kr.second] += v;
      d.max_k_plus_r = std::max(d.max_k_plus_r, kr.first + kr.second);
      if (kr.second >= 1 && kr.first % period != 0) ++d.lattice_violations;
    }
  pts.clear();
  acc = 0;
  for (auto it = by_m.rbegin(); it != by_m.rend(); ++it) {
    acc += it->second;
    if (acc >= min_count * static_cast<double>(series.size())) pts.push_back({static_cast<double>(it->first), std::log(acc)});
  }
  d.q_rate = -detail::log_slope(pts);
  return d;
}

}  // namespace bsrlab
