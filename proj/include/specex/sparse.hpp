#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace specex {

using TermId = std::uint32_t;

struct SparseEntry {
  TermId term;
  double weight;

  friend bool operator==(const SparseEntry&, const SparseEntry&) = default;
};

// Sparse vector with entries sorted by strictly increasing term id.
struct SparseVector {
  std::vector<SparseEntry> entries;

  bool empty() const noexcept { return entries.empty(); }
  std::size_t size() const noexcept { return entries.size(); }
  double weight(TermId term) const noexcept;

  friend bool operator==(const SparseVector&, const SparseVector&) = default;
};

double dot(const SparseVector& a, const SparseVector& b) noexcept;
double l2_norm(const SparseVector& v) noexcept;

// Returns v / |v|; a zero vector is returned unchanged.
SparseVector normalized(SparseVector v) noexcept;

// Cosine similarity; 0 when either side is the zero vector.
double cosine(const SparseVector& a, const SparseVector& b) noexcept;

// Accumulates a dense sum of the given vectors in the order given and returns
// it as a sparse vector. Order matters only at the rounding level.
SparseVector sum_vectors(std::span<const SparseVector* const> vectors, std::size_t vocabulary_size);

}  // namespace specex
