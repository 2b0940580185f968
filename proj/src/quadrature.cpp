#include "hslab/quadrature.hpp"

#include <map>
#include <memory>
#include <mutex>

namespace hslab {

const QuadratureRule& cached_gauss_hermite(int m) {
    static std::mutex mutex;
    static std::map<int, std::unique_ptr<const QuadratureRule>> cache;
    std::lock_guard lock(mutex);
    auto& slot = cache[m];
    if (!slot) slot = std::make_unique<const QuadratureRule>(gauss_hermite<double>(m));
    return *slot;
}

}  // namespace hslab
