#include "hslab/multi_index.hpp"

#include <map>
#include <mutex>
#include <numeric>
#include <stdexcept>
#include <string>
#include <utility>

namespace hslab {

MultiIndex::MultiIndex(std::vector<int> e) : entries(std::move(e)) {
    for (int v : entries)
        if (v < 0) throw std::invalid_argument("MultiIndex: negative entry");
}

int MultiIndex::order() const { return std::accumulate(entries.begin(), entries.end(), 0); }

std::size_t binomial(int n, int k) {
    if (k < 0 || n < 0 || k > n) return 0;
    k = std::min(k, n - k);
    std::size_t r = 1;
    for (int i = 1; i <= k; ++i) r = r * static_cast<std::size_t>(n - k + i) / static_cast<std::size_t>(i);
    return r;
}

namespace {

constexpr std::size_t kMaxBasisSize = 20'000'000;

void fill_grade(int remaining, std::vector<int>& prefix, int d, std::vector<MultiIndex>& out) {
    const int pos = static_cast<int>(prefix.size());
    if (pos == d - 1) {
        prefix.push_back(remaining);
        out.emplace_back(prefix);
        prefix.pop_back();
        return;
    }
    for (int v = remaining; v >= 0; --v) {
        prefix.push_back(v);
        fill_grade(remaining - v, prefix, d, out);
        prefix.pop_back();
    }
}

void check_args(int d, int N) {
    if (d < 1) throw std::invalid_argument("basis dimension must be >= 1, got " + std::to_string(d));
    if (N < 0) throw std::invalid_argument("basis max order must be >= 0, got " + std::to_string(N));
    if (binomial(N + d, d) > kMaxBasisSize)
        throw std::length_error("basis truncation (d=" + std::to_string(d) + ", N=" + std::to_string(N) +
                                ") exceeds the supported size");
}

// Rank of n (sum g) among the grade-g indices of its dimension.
std::size_t grade_rank(const int* n, int d, int g) {
    std::size_t rank = 0;
    while (d > 1) {
        const int first = n[0];
        rank += binomial(g - first - 1 + d - 1, d - 1);
        g -= first;
        ++n;
        --d;
    }
    return rank;
}

}  // namespace

std::vector<MultiIndex> enumerate_indices(int d, int N) {
    check_args(d, N);
    std::vector<MultiIndex> out;
    out.reserve(binomial(N + d, d));
    std::vector<int> prefix;
    prefix.reserve(static_cast<std::size_t>(d));
    for (int g = 0; g <= N; ++g) fill_grade(g, prefix, d, out);
    return out;
}

namespace detail {

struct BasisTables {
    int dim;
    int max_order;
    std::vector<MultiIndex> indices;
    std::vector<int> orders;
    // size x dim, row-major; -1 marks "outside the truncation"
    std::vector<std::ptrdiff_t> up;
    std::vector<std::ptrdiff_t> down;

    BasisTables(int d, int N) : dim(d), max_order(N), indices(enumerate_indices(d, N)) {
        const std::size_t n = indices.size();
        orders.resize(n);
        up.assign(n * static_cast<std::size_t>(d), BasisTruncation::npos);
        down.assign(n * static_cast<std::size_t>(d), BasisTruncation::npos);
        for (std::size_t k = 0; k < n; ++k) {
            orders[k] = indices[k].order();
            MultiIndex m = indices[k];
            for (int a = 0; a < d; ++a) {
                auto& e = m.entries[static_cast<std::size_t>(a)];
                if (orders[k] < N) {
                    ++e;
                    up[k * d + a] = static_cast<std::ptrdiff_t>(offset_of(m));
                    --e;
                }
                if (e > 0) {
                    --e;
                    down[k * d + a] = static_cast<std::ptrdiff_t>(offset_of(m));
                    ++e;
                }
            }
        }
    }

    std::size_t offset_of(const MultiIndex& m) const {
        const int g = m.order();
        return binomial(g - 1 + dim, dim) + grade_rank(m.entries.data(), dim, g);
    }
};

}  // namespace detail

BasisTruncation::BasisTruncation(int dim, int max_order) {
    check_args(dim, max_order);
    static std::mutex mutex;
    static std::map<std::pair<int, int>, std::shared_ptr<const detail::BasisTables>> cache;
    std::lock_guard lock(mutex);
    auto& slot = cache[{dim, max_order}];
    if (!slot) slot = std::make_shared<const detail::BasisTables>(dim, max_order);
    tables_ = slot;
}

int BasisTruncation::dim() const { return tables_->dim; }
int BasisTruncation::max_order() const { return tables_->max_order; }
std::size_t BasisTruncation::size() const { return tables_->indices.size(); }
const MultiIndex& BasisTruncation::index(std::size_t k) const { return tables_->indices.at(k); }
int BasisTruncation::order(std::size_t k) const { return tables_->orders[k]; }

std::size_t BasisTruncation::offset(const MultiIndex& n) const {
    if (n.dim() != dim()) throw std::invalid_argument("MultiIndex dimension does not match truncation");
    if (n.order() > max_order()) throw std::out_of_range("MultiIndex order exceeds truncation");
    return tables_->offset_of(n);
}

std::ptrdiff_t BasisTruncation::raised(std::size_t k, int axis) const {
    return tables_->up[k * static_cast<std::size_t>(dim()) + static_cast<std::size_t>(axis)];
}

std::ptrdiff_t BasisTruncation::lowered(std::size_t k, int axis) const {
    return tables_->down[k * static_cast<std::size_t>(dim()) + static_cast<std::size_t>(axis)];
}

}  // namespace hslab
