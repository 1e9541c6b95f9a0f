#pragma once

// Independent reference computations shared by the unit and acceptance tests.

#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <random>
#include <set>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "piie/data.hpp"
#include "piie/simulate.hpp"

namespace oracle {

// Fully discrete world over binary (y, a, z, c1, c2) with strictly positive
// integer cell counts, so the exact-frequency dataset reproduces the law.
struct World {
  std::vector<piie::DiscreteCell> cells;
  std::vector<std::size_t> counts;

  piie::Dataset dataset() const { return piie::dataset_from_cells(cells, counts, {"c1", "c2"}); }
};

inline World random_world(std::mt19937_64& rng, std::size_t max_count = 12) {
  std::uniform_int_distribution<std::size_t> count(1, max_count);
  std::uniform_real_distribution<double> level(-3.0, 3.0);
  World w;
  double total = 0.0;
  for (int a = 0; a < 2; ++a)
    for (int z = 0; z < 2; ++z)
      for (int c1 = 0; c1 < 2; ++c1)
        for (int c2 = 0; c2 < 2; ++c2) {
          const std::array<double, 2> ys{level(rng), level(rng)};
          for (double y : ys) {
            const auto k = count(rng);
            w.cells.push_back({y, double(a), double(z), {double(c1), double(c2)}, 0.0});
            w.counts.push_back(k);
            total += static_cast<double>(k);
          }
        }
  for (std::size_t i = 0; i < w.cells.size(); ++i) w.cells[i].prob = static_cast<double>(w.counts[i]) / total;
  return w;
}

// Conditional laws of a discrete world, computed by direct summation.
class Law {
 public:
  explicit Law(const std::vector<piie::DiscreteCell>& cells) {
    for (const auto& c : cells) {
      const Key k = key(c.c);
      pc_[k] += c.prob;
      pac_[{c.a, k}] += c.prob;
      pazc_[{c.a, c.z, k}] += c.prob;
      ysum_[{c.a, c.z, k}] += c.prob * c.y;
      zs_[k].insert(c.z);
    }
  }

  double p_a(double a, const std::vector<double>& c) const { return at(pac_, {a, key(c)}) / at(pc_, key(c)); }
  double p_z(double z, double a, const std::vector<double>& c) const {
    return at(pazc_, {a, z, key(c)}) / at(pac_, {a, key(c)});
  }
  double m(double a, double z, const std::vector<double>& c) const {
    return at(ysum_, {a, z, key(c)}) / at(pazc_, {a, z, key(c)});
  }
  const std::set<double>& z_support(const std::vector<double>& c) const { return zs_.at(key(c)); }

  // sum_z m(a_eval, z, c) f(z | a_cond, c)
  double integral(double a_eval, double a_cond, const std::vector<double>& c) const {
    double s = 0.0;
    for (double z : z_support(c)) s += m(a_eval, z, c) * p_z(z, a_cond, c);
    return s;
  }

  // Efficient influence function at one support point.
  double eif(const piie::DiscreteCell& o, int a_star, double psi) const {
    const double as = a_star;
    const auto& c = o.c;
    const double term1 = (o.y - m(o.a, o.z, c)) * p_z(o.z, as, c) / p_z(o.z, o.a, c);
    double term2 = 0.0;
    if (o.a == as) {
      double lhs = 0.0, rhs = 0.0;
      for (double a : {0.0, 1.0}) {
        lhs += m(a, o.z, c) * p_a(a, c);
        rhs += integral(a, o.a, c) * p_a(a, c);
      }
      term2 = (lhs - rhs) / p_a(as, c);
    }
    const double term3 = integral(o.a, as, c);
    return term1 + term2 + term3 - psi;
  }

 private:
  using Key = std::vector<double>;
  static Key key(const std::vector<double>& c) { return c; }
  template <class M>
  static double at(const M& m, const typename M::key_type& k) {
    const auto it = m.find(k);
    return it == m.end() ? 0.0 : it->second;
  }

  std::map<Key, double> pc_;
  std::map<std::pair<double, Key>, double> pac_;
  std::map<std::tuple<double, double, Key>, double> pazc_, ysum_;
  std::map<Key, std::set<double>> zs_;
};

inline const char* saturated_outcome() {
  return "y ~ a + z + c1 + c2 + a:z + a:c1 + a:c2 + z:c1 + z:c2 + c1:c2 + a:z:c1 + a:z:c2 + a:c1:c2 + z:c1:c2 + "
         "a:z:c1:c2";
}
inline const char* saturated_mediator() { return "z ~ a + c1 + c2 + a:c1 + a:c2 + c1:c2 + a:c1:c2"; }
inline const char* saturated_propensity() { return "a ~ c1 + c2 + c1:c2"; }

inline double mean(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

inline double sample_variance(const std::vector<double>& v) {
  const double m = mean(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return s / static_cast<double>(v.size() - 1);
}

}  // namespace oracle
