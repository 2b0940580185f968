#pragma once

#include <cstddef>
#include <memory>
#include <vector>

namespace hslab {

/// Element of Z^d_+ indexing the tensor Hermite basis.
struct MultiIndex {
    std::vector<int> entries;

    MultiIndex() = default;
    explicit MultiIndex(std::vector<int> e);

    int dim() const { return static_cast<int>(entries.size()); }
    int order() const;

    int operator[](int i) const { return entries[static_cast<std::size_t>(i)]; }
    bool operator==(const MultiIndex&) const = default;
};

std::size_t binomial(int n, int k);

/// All n in Z^d_+ with |n| <= N in graded order: by |n|, then descending
/// lexicographic within a grade, so (1,0) precedes (0,1).
std::vector<MultiIndex> enumerate_indices(int d, int N);

namespace detail {
struct BasisTables;
}

/// Graded simplex truncation {n : |n| <= N} of the Hermite basis.
///
/// Handles are cheap to copy; the index tables behind them are shared and
/// immutable, built once per (d, N) and kept in a process-wide cache.
class BasisTruncation {
public:
    static constexpr std::ptrdiff_t npos = -1;

    BasisTruncation(int dim, int max_order);

    int dim() const;
    int max_order() const;
    std::size_t size() const;

    const MultiIndex& index(std::size_t k) const;
    int order(std::size_t k) const;
    std::size_t offset(const MultiIndex& n) const;

    /// Storage offset of index(k) +/- e_axis, or npos when it leaves the truncation.
    std::ptrdiff_t raised(std::size_t k, int axis) const;
    std::ptrdiff_t lowered(std::size_t k, int axis) const;

    bool operator==(const BasisTruncation& o) const { return dim() == o.dim() && max_order() == o.max_order(); }

private:
    std::shared_ptr<const detail::BasisTables> tables_;
};

}  // namespace hslab
