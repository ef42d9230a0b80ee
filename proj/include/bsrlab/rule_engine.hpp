#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "bsrlab/error.hpp"

namespace bsrlab {

inline constexpr int kMaxArity = 8;

// A component size as seen by a rule: 1..K, or omega for anything larger.
class TruncatedSize {
 public:
  constexpr TruncatedSize() = default;

  static constexpr TruncatedSize omega() { return TruncatedSize{0}; }
  static constexpr TruncatedSize of(std::uint64_t size, int cutoff) {
    return size <= static_cast<std::uint64_t>(cutoff) ? TruncatedSize{static_cast<int>(size)} : omega();
  }
  // Class index 0..K-1 for sizes 1..K, K for omega.
  static constexpr TruncatedSize from_class(int cls, int cutoff) {
    return cls >= cutoff ? omega() : TruncatedSize{cls + 1};
  }

  constexpr bool is_omega() const { return value_ == 0; }
  constexpr int value() const { return value_; }
  constexpr int class_index(int cutoff) const { return is_omega() ? cutoff : value_ - 1; }

  std::string to_string() const { return is_omega() ? "w" : std::to_string(value_); }

  friend constexpr bool operator==(TruncatedSize, TruncatedSize) = default;

 private:
  explicit constexpr TruncatedSize(int value) : value_(value) {}
  int value_ = 0;
};

inline std::vector<TruncatedSize> truncate_profile(std::span<const std::uint64_t> sizes, int cutoff) {
  std::vector<TruncatedSize> out;
  out.reserve(sizes.size());
  for (std::uint64_t s : sizes) {
    if (s == 0) throw Error(ErrorKind::invalid_config, "component sizes must be positive");
    out.push_back(TruncatedSize::of(s, cutoff));
  }
  return out;
}

// Zero-based positions of the two sampled vertices to join, first < second.
struct RulePick {
  int first = 0;
  int second = 1;
  friend constexpr bool operator==(const RulePick&, const RulePick&) = default;
};

enum class UnboundedKind { none, product, sum };

class RuleSpec {
 public:
  using Predicate = std::function<RulePick(std::span<const TruncatedSize>)>;

  RuleSpec() = default;

  static RuleSpec from_table(std::string name, int arity, int cutoff, std::vector<RulePick> table) {
    validate_shape(arity, cutoff);
    RuleSpec rule;
    rule.name_ = std::move(name);
    rule.arity_ = arity;
    rule.cutoff_ = cutoff;
    if (table.size() != rule.profile_count())
      throw Error(ErrorKind::invalid_config, "rule table must cover all (K+1)^l profiles");
    for (auto& pick : table) {
      if (pick.first > pick.second) std::swap(pick.first, pick.second);
      if (pick.first == pick.second || pick.first < 0 || pick.second >= arity)
        throw Error(ErrorKind::invalid_config, "rule picks must be two distinct indices in [1, l]");
    }
    rule.table_ = std::move(table);
    return rule;
  }

  static RuleSpec from_predicate(std::string name, int arity, int cutoff, const Predicate& predicate) {
    validate_shape(arity, cutoff);
    const std::size_t count = ipow(cutoff + 1, arity);
    std::vector<RulePick> table(count);
    std::vector<TruncatedSize> profile(arity);
    std::array<int, kMaxArity> classes{};
    for (std::size_t idx = 0; idx < count; ++idx) {
      decode(idx, arity, cutoff, classes.data());
      for (int j = 0; j < arity; ++j) profile[j] = TruncatedSize::from_class(classes[j], cutoff);
      table[idx] = predicate(profile);
    }
    return from_table(std::move(name), arity, cutoff, std::move(table));
  }

  // Four-vertex rules that compare actual sizes; simulation only.
  static RuleSpec unbounded(std::string name, UnboundedKind kind) {
    RuleSpec rule;
    rule.name_ = std::move(name);
    rule.arity_ = 4;
    rule.cutoff_ = 0;
    rule.kind_ = kind;
    return rule;
  }

  const std::string& name() const { return name_; }
  int arity() const { return arity_; }
  int cutoff() const { return cutoff_; }
  int class_count() const { return cutoff_ + 1; }
  bool is_unbounded() const { return kind_ != UnboundedKind::none; }
  UnboundedKind unbounded_kind() const { return kind_; }
  std::size_t profile_count() const { return ipow(cutoff_ + 1, arity_); }

  void require_bounded() const {
    if (is_unbounded())
      throw Error(ErrorKind::theory_unsupported, "theory requires bounded-size rule (" + name_ + " is unbounded)");
  }

  std::size_t profile_index(std::span<const TruncatedSize> profile) const {
    if (static_cast<int>(profile.size()) != arity_)
      throw Error(ErrorKind::arity, "profile length " + std::to_string(profile.size()) + " does not match arity " +
                                        std::to_string(arity_));
    std::size_t idx = 0;
    for (int j = arity_ - 1; j >= 0; --j) {
      const auto& c = profile[j];
      if (!c.is_omega() && c.value() > cutoff_)
        throw Error(ErrorKind::invalid_config, "truncated size exceeds cutoff");
      idx = idx * (cutoff_ + 1) + c.class_index(cutoff_);
    }
    return idx;
  }

  // Inverse of profile_index; position j gets digit j (least significant first).
  void decode_profile(std::size_t idx, int* classes) const { decode(idx, arity_, cutoff_, classes); }

  RulePick pick_at(std::size_t idx) const { return table_[idx]; }

  RulePick evaluate(std::span<const TruncatedSize> profile) const {
    require_bounded();
    return table_[profile_index(profile)];
  }

  // Hot path used by the simulator.
  RulePick pick_for_sizes(const std::uint64_t* sizes) const {
    switch (kind_) {
      case UnboundedKind::product:
        return sizes[0] * sizes[1] <= sizes[2] * sizes[3] ? RulePick{0, 1} : RulePick{2, 3};
      case UnboundedKind::sum:
        return sizes[0] + sizes[1] <= sizes[2] + sizes[3] ? RulePick{0, 1} : RulePick{2, 3};
      case UnboundedKind::none: break;
    }
    std::size_t idx = 0;
    const auto base = static_cast<std::uint64_t>(cutoff_ + 1);
    for (int j = arity_ - 1; j >= 0; --j) {
      const std::uint64_t s = sizes[j];
      idx = idx * base + (s <= static_cast<std::uint64_t>(cutoff_) ? s - 1 : cutoff_);
    }
    return table_[idx];
  }

 private:
  static std::size_t ipow(int base, int exp) {
    std::size_t r = 1;
    for (int i = 0; i < exp; ++i) r *= static_cast<std::size_t>(base);
    return r;
  }

  static void validate_shape(int arity, int cutoff) {
    if (arity < 2 || arity > kMaxArity)
      throw Error(ErrorKind::invalid_config, "rule arity must be in [2, " + std::to_string(kMaxArity) + "]");
    if (cutoff < 0) throw Error(ErrorKind::invalid_config, "rule cutoff must be non-negative");
    if (ipow(cutoff + 1, arity) > (std::size_t{1} << 26))
      throw Error(ErrorKind::invalid_config, "rule table too large");
  }

  static void decode(std::size_t idx, int arity, int cutoff, int* classes) {
    for (int j = 0; j < arity; ++j) {
      classes[j] = static_cast<int>(idx % static_cast<std::size_t>(cutoff + 1));
      idx /= static_cast<std::size_t>(cutoff + 1);
    }
  }

  std::string name_;
  int arity_ = 0;
  int cutoff_ = 0;
  UnboundedKind kind_ = UnboundedKind::none;
  std::vector<RulePick> table_;
};

// ---------------------------------------------------------------------------
// Builtins

inline RuleSpec er4_rule() {
  return RuleSpec::from_predicate("er4", 4, 0, [](auto) { return RulePick{0, 1}; });
}

inline RuleSpec bohman_frieze_rule() {
  return RuleSpec::from_predicate("bf", 4, 1, [](std::span<const TruncatedSize> c) {
    return (c[0].value() == 1 && c[1].value() == 1) ? RulePick{0, 1} : RulePick{2, 3};
  });
}

// Joins the first equal-class pair; singletons only ever meet singletons.
inline RuleSpec even_rule() {
  return RuleSpec::from_predicate("even", 4, 1, [](std::span<const TruncatedSize> c) {
    for (int a = 0; a < 4; ++a)
      for (int b = a + 1; b < 4; ++b)
        if (c[a] == c[b]) return RulePick{a, b};
    return RulePick{0, 1};
  });
}

// Three vertices, K=2: with an omega present, join it to the largest other
// entry; otherwise join two equal sizes. Size 3 is never created.
inline RuleSpec no3_rule() {
  return RuleSpec::from_predicate("no3", 3, 2, [](std::span<const TruncatedSize> c) {
    auto rank = [](TruncatedSize s) { return s.is_omega() ? 100 : s.value(); };
    int big = 0;
    for (int j = 1; j < 3; ++j)
      if (rank(c[j]) > rank(c[big])) big = j;
    if (c[big].is_omega()) {
      int other = -1;
      for (int j = 0; j < 3; ++j)
        if (j != big && (other < 0 || rank(c[j]) > rank(c[other]))) other = j;
      return RulePick{std::min(big, other), std::max(big, other)};
    }
    for (int a = 0; a < 3; ++a)
      for (int b = a + 1; b < 3; ++b)
        if (c[a] == c[b]) return RulePick{a, b};
    return RulePick{0, 1};
  });
}

inline std::vector<std::string> builtin_rule_names() { return {"er4", "bf", "even", "no3", "product", "sum"}; }

inline std::optional<RuleSpec> builtin_rule(std::string_view name) {
  if (name == "er4" || name == "er") return er4_rule();
  if (name == "bf") return bohman_frieze_rule();
  if (name == "even") return even_rule();
  if (name == "no3") return no3_rule();
  if (name == "product" || name == "pr") return RuleSpec::unbounded("product", UnboundedKind::product);
  if (name == "sum" || name == "sr") return RuleSpec::unbounded("sum", UnboundedKind::sum);
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// Rule files

inline RuleSpec rule_from_json(const nlohmann::json& doc) {
  try {
    const std::string name = doc.value("name", std::string("custom"));
    const int arity = doc.at("arity").get<int>();
    const int cutoff = doc.at("cutoff").get<int>();
    if (arity < 2 || arity > kMaxArity || cutoff < 0)
      throw Error(ErrorKind::parse, "rule file: invalid arity or cutoff");

    auto read_pick = [&](const nlohmann::json& p) {
      if (!p.is_array() || p.size() != 2) throw Error(ErrorKind::parse, "rule file: pick must be [j1, j2]");
      return RulePick{p[0].get<int>() - 1, p[1].get<int>() - 1};
    };

    std::optional<RulePick> fallback;
    if (doc.contains("default")) fallback = read_pick(doc["default"]);

    const std::size_t count = [&] {
      std::size_t c = 1;
      for (int i = 0; i < arity; ++i) c *= static_cast<std::size_t>(cutoff + 1);
      return c;
    }();
    std::vector<std::optional<RulePick>> table(count);

    const auto scratch = RuleSpec::from_table("scratch", arity, cutoff, std::vector<RulePick>(count));
    for (const auto& entry : doc.value("entries", nlohmann::json::array())) {
      const auto& prof = entry.at("profile");
      if (prof.is_string() && prof.get<std::string>() == "default") {
        fallback = read_pick(entry.at("pick"));
        continue;
      }
      if (!prof.is_array() || static_cast<int>(prof.size()) != arity)
        throw Error(ErrorKind::parse, "rule file: profile length must equal arity");
      std::vector<TruncatedSize> profile;
      for (const auto& v : prof) {
        if (v.is_string()) {
          if (v.get<std::string>() != "w") throw Error(ErrorKind::parse, "rule file: sizes are integers or \"w\"");
          profile.push_back(TruncatedSize::omega());
        } else {
          const int s = v.get<int>();
          if (s < 1 || s > cutoff) throw Error(ErrorKind::parse, "rule file: size outside [1, K]");
          profile.push_back(TruncatedSize::of(static_cast<std::uint64_t>(s), cutoff));
        }
      }
      const auto idx = scratch.profile_index(profile);
      const RulePick pick = read_pick(entry.at("pick"));
      if (table[idx] && !(*table[idx] == pick) &&
          !(table[idx]->first == pick.second && table[idx]->second == pick.first))
        throw Error(ErrorKind::parse, "rule file: conflicting entries for one profile");
      table[idx] = pick;
    }

    std::vector<RulePick> dense(count);
    for (std::size_t i = 0; i < count; ++i) {
      if (table[i]) dense[i] = *table[i];
      else if (fallback) dense[i] = *fallback;
      else throw Error(ErrorKind::parse, "rule file: table is not total and has no default entry");
    }
    return RuleSpec::from_table(name, arity, cutoff, std::move(dense));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::parse, std::string("rule file: ") + e.what());
  }
}

inline nlohmann::json rule_to_json(const RuleSpec& rule) {
  rule.require_bounded();
  nlohmann::json doc;
  doc["name"] = rule.name();
  doc["arity"] = rule.arity();
  doc["cutoff"] = rule.cutoff();
  auto entries = nlohmann::json::array();
  std::array<int, kMaxArity> classes{};
  for (std::size_t idx = 0; idx < rule.profile_count(); ++idx) {
    rule.decode_profile(idx, classes.data());
    auto prof = nlohmann::json::array();
    for (int j = 0; j < rule.arity(); ++j) {
      if (classes[j] == rule.cutoff()) prof.push_back("w");
      else prof.push_back(classes[j] + 1);
    }
    const RulePick p = rule.pick_at(idx);
    entries.push_back({{"profile", prof}, {"pick", {p.first + 1, p.second + 1}}});
  }
  doc["entries"] = entries;
  return doc;
}

inline RuleSpec load_rule_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::parse, "cannot open rule file " + path);
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::parse, "rule file " + path + ": " + e.what());
  }
  return rule_from_json(doc);
}

// Builtin name, or a path to a rule file.
inline RuleSpec resolve_rule(const std::string& name_or_path) {
  if (auto rule = builtin_rule(name_or_path)) return *rule;
  return load_rule_file(name_or_path);
}

// ---------------------------------------------------------------------------
// Reachable sizes and period

struct ReachabilityInfo {
  std::vector<bool> member;  // member[k] for k in [0, bound]
  int bound = 0;
  int period = 0;  // 0 until detect_period fills it
  int onset = 0;

  bool contains(std::int64_t k) const { return k >= 1 && k <= bound && member[static_cast<std::size_t>(k)]; }
  std::vector<int> sizes() const {
    std::vector<int> out;
    for (int k = 1; k <= bound; ++k)
      if (member[k]) out.push_back(k);
    return out;
  }
};

// Closure of {1} under the merge map. The rule only sees classes, so a
// profile is realizable once each class it mentions holds a reachable size;
// the omega class is never empty since all powers of two are reachable.
inline ReachabilityInfo reachable_sizes(const RuleSpec& rule, int bound) {
  rule.require_bounded();
  if (bound < 1) throw Error(ErrorKind::invalid_config, "bound must be at least 1");
  const int K = rule.cutoff();
  const int nc = rule.class_count();
  const int work = std::max(bound, K + 1);

  // Class pairs (s1, s2) produced by some profile, with the other classes recorded.
  struct Usage {
    int s1, s2;
    std::uint64_t needed;  // bitmask of classes that must be non-empty
  };
  std::vector<Usage> usages;
  std::array<int, kMaxArity> cls{};
  for (std::size_t idx = 0; idx < rule.profile_count(); ++idx) {
    rule.decode_profile(idx, cls.data());
    const RulePick p = rule.pick_at(idx);
    std::uint64_t needed = 0;
    for (int j = 0; j < rule.arity(); ++j) needed |= std::uint64_t{1} << std::min(cls[j], 63);
    usages.push_back({cls[p.first], cls[p.second], needed});
  }

  std::vector<bool> in(static_cast<std::size_t>(work) + 1, false);
  in[1] = true;
  auto class_of = [&](int size) { return size <= K ? size - 1 : K; };
  bool changed = true;
  while (changed) {
    changed = false;
    std::uint64_t present = std::uint64_t{1} << std::min(K, 63);  // omega
    std::vector<std::vector<int>> members(nc);
    for (int s = 1; s <= work; ++s) {
      if (!in[s]) continue;
      members[class_of(s)].push_back(s);
      if (s <= K) present |= std::uint64_t{1} << (s - 1);
    }
    std::vector<bool> done(static_cast<std::size_t>(nc * nc), false);
    for (const auto& u : usages) {
      if ((u.needed & present) != u.needed) continue;
      const auto slot = static_cast<std::size_t>(u.s1 * nc + u.s2);
      if (done[slot]) continue;
      done[slot] = true;
      for (int a : members[u.s1])
        for (int b : members[u.s2])
          if (a + b <= work && !in[a + b]) {
            in[a + b] = true;
            changed = true;
          }
    }
  }

  ReachabilityInfo info;
  info.bound = bound;
  info.member.assign(in.begin(), in.begin() + bound + 1);
  return info;
}

struct PeriodInfo {
  int period = 1;
  int onset = 1;
};

inline PeriodInfo detect_period(const RuleSpec& rule, int bound) {
  rule.require_bounded();
  const int K = rule.cutoff();
  if (bound < std::max(4 * (K + 1), 64))
    throw Error(ErrorKind::invalid_config, "detect_period needs bound >= max(4(K+1), 64)");
  const auto info = reachable_sizes(rule, bound);

  int a = 0;
  while ((1 << a) <= K) ++a;
  std::vector<int> window;
  for (int k = bound / 4 + 1; k <= bound / 2; ++k)
    if (info.member[k]) window.push_back(k);
  if (window.empty())
    throw Error(ErrorKind::inconclusive, "no reachable sizes in (bound/4, bound/2]; increase bound");

  int p = 1 << a;
  while (p > 1 && !std::all_of(window.begin(), window.end(), [p](int k) { return k % p == 0; })) p /= 2;

  for (int k = K + 1; k <= bound; ++k)
    if (info.member[k] && k % p != 0)
      throw Error(ErrorKind::inconclusive, "reachable size " + std::to_string(k) +
                                               " breaks the detected period; increase bound");

  int onset = bound;
  while (onset > 1 && info.member[onset - 1] == ((onset - 1) % p == 0)) --onset;
  if (onset > bound / 2)
    throw Error(ErrorKind::inconclusive, "periodic regime not reached by bound/2; increase bound");
  return {p, onset};
}

inline ReachabilityInfo analyze_reachability(const RuleSpec& rule, int bound) {
  auto info = reachable_sizes(rule, bound);
  const auto period = detect_period(rule, bound);
  info.period = period.period;
  info.onset = period.onset;
  return info;
}

}  // namespace bsrlab
