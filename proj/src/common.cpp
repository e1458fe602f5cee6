#include "ftforge/common.hpp"

namespace ftforge {

namespace {
#ifdef NDEBUG
std::atomic<bool> g_strict_finite{false};
#else
std::atomic<bool> g_strict_finite{true};
#endif
}  // namespace

bool strict_finite_checks() { return g_strict_finite.load(std::memory_order_relaxed); }

void set_strict_finite_checks(bool on) { g_strict_finite.store(on, std::memory_order_relaxed); }

}  // namespace ftforge
