#pragma once

// Independent reference implementations used to check the library's fast
// paths. Deliberately written with different algorithms than the code under
// test: exhaustive recursion instead of dynamic programming, Pascal-row
// binomials instead of iterative pmf accumulation, long-double accumulation
// instead of the production float paths.

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

namespace oracle {

// Minimum (insertions + substitutions) over every edit alignment from `ref`
// to `hyp`, deletions free. Plain exhaustive recursion over the three edit
// moves; exponential, fine for the short sequences used in tests.
inline int wnd_enumerate(const std::vector<std::string>& ref, const std::vector<std::string>& hyp,
                         std::size_t i = 0, std::size_t j = 0) {
  if (i == ref.size() && j == hyp.size()) return 0;
  int best = 1 << 20;
  if (i < ref.size()) {  // drop a reference token: free
    int c = wnd_enumerate(ref, hyp, i + 1, j);
    if (c < best) best = c;
  }
  if (j < hyp.size()) {  // insert a hypothesis token: costs 1
    int c = 1 + wnd_enumerate(ref, hyp, i, j + 1);
    if (c < best) best = c;
  }
  if (i < ref.size() && j < hyp.size()) {  // align: free on match, 1 on substitution
    int c = (ref[i] == hyp[j] ? 0 : 1) + wnd_enumerate(ref, hyp, i + 1, j + 1);
    if (c < best) best = c;
  }
  return best;
}

// Exact two-sided sign-test p-value via integer binomial coefficients.
// Valid for n <= 60 (C(60,30) still fits in unsigned long long); the
// numerator stays exact and the division is a single long-double rounding.
inline long double sign_test_p(int n_positive, int n_negative) {
  int n = n_positive + n_negative;
  std::vector<unsigned long long> row(static_cast<std::size_t>(n) + 1, 0);
  row[0] = 1;  // Pascal's triangle, row by row
  for (int r = 1; r <= n; ++r) {
    for (int c = r; c >= 1; --c) row[static_cast<std::size_t>(c)] += row[static_cast<std::size_t>(c - 1)];
  }
  int k = n_positive < n_negative ? n_positive : n_negative;
  unsigned long long tail = 0;
  for (int i = 0; i <= k; ++i) tail += row[static_cast<std::size_t>(i)];
  long double p = 2.0L * static_cast<long double>(tail) / std::pow(2.0L, static_cast<long double>(n));
  return p > 1.0L ? 1.0L : p;
}

// Cosine similarity of the two token sets' mean embeddings, accumulated in
// long double. Tokens missing from `table` are skipped; returns false when
// either side has no vector or a zero-norm mean.
template <typename Lookup>
inline bool mean_vector_cosine(const std::vector<std::string>& a, const std::vector<std::string>& b,
                               Lookup&& lookup, std::size_t dim, double& out) {
  auto mean_of = [&](const std::vector<std::string>& words, std::vector<long double>& mean) {
    long hits = 0;
    mean.assign(dim, 0.0L);
    for (const std::string& w : words) {
      const float* v = lookup(w);
      if (v == nullptr) continue;
      ++hits;
      for (std::size_t d = 0; d < dim; ++d) mean[d] += static_cast<long double>(v[d]);
    }
    if (hits == 0) return false;
    for (std::size_t d = 0; d < dim; ++d) mean[d] /= static_cast<long double>(hits);
    return true;
  };
  std::vector<long double> ma, mb;
  if (!mean_of(a, ma) || !mean_of(b, mb)) return false;
  long double dot = 0.0L, na = 0.0L, nb = 0.0L;
  for (std::size_t d = 0; d < dim; ++d) {
    dot += ma[d] * mb[d];
    na += ma[d] * ma[d];
    nb += mb[d] * mb[d];
  }
  if (na == 0.0L || nb == 0.0L) return false;
  out = static_cast<double>(dot / (std::sqrt(na) * std::sqrt(nb)));
  return true;
}

}  // namespace oracle
