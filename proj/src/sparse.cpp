#include "specex/sparse.hpp"

#include <algorithm>
#include <cmath>

namespace specex {

double SparseVector::weight(TermId term) const noexcept {
  auto it = std::lower_bound(entries.begin(), entries.end(), term,
                             [](const SparseEntry& e, TermId t) { return e.term < t; });
  return (it != entries.end() && it->term == term) ? it->weight : 0.0;
}

double dot(const SparseVector& a, const SparseVector& b) noexcept {
  double sum = 0.0;
  auto ia = a.entries.begin();
  auto ib = b.entries.begin();
  while (ia != a.entries.end() && ib != b.entries.end()) {
    if (ia->term < ib->term) {
      ++ia;
    } else if (ib->term < ia->term) {
      ++ib;
    } else {
      sum += ia->weight * ib->weight;
      ++ia;
      ++ib;
    }
  }
  return sum;
}

double l2_norm(const SparseVector& v) noexcept {
  double sq = 0.0;
  for (const auto& e : v.entries) sq += e.weight * e.weight;
  return std::sqrt(sq);
}

SparseVector normalized(SparseVector v) noexcept {
  const double norm = l2_norm(v);
  if (norm == 0.0) return v;
  for (auto& e : v.entries) e.weight /= norm;
  return v;
}

double cosine(const SparseVector& a, const SparseVector& b) noexcept {
  const double na = l2_norm(a);
  const double nb = l2_norm(b);
  if (na == 0.0 || nb == 0.0) return 0.0;
  return dot(a, b) / (na * nb);
}

SparseVector sum_vectors(std::span<const SparseVector* const> vectors, std::size_t vocabulary_size) {
  std::vector<double> dense(vocabulary_size, 0.0);
  std::vector<TermId> touched;
  for (const SparseVector* v : vectors) {
    for (const auto& e : v->entries) {
      if (dense[e.term] == 0.0) touched.push_back(e.term);
      dense[e.term] += e.weight;
    }
  }
  std::sort(touched.begin(), touched.end());
  touched.erase(std::unique(touched.begin(), touched.end()), touched.end());
  SparseVector out;
  out.entries.reserve(touched.size());
  for (TermId t : touched) {
    if (dense[t] != 0.0) out.entries.push_back({t, dense[t]});
  }
  return out;
}

}  // namespace specex
