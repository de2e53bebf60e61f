#include "jima/kernels.hpp"

#include <cstdlib>
#include <cstring>

namespace jima::kernels {

// Defined in kernels_avx2.cpp; nullptr when not compiled in.
const Ops* avx2_ops();

namespace {

bool cpu_has_avx2() {
#if defined(__x86_64__) || defined(_M_X64)
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

const Ops* usable_avx2() {
  const Ops* ops = avx2_ops();
  return (ops && cpu_has_avx2()) ? ops : nullptr;
}

const Ops& select() {
  if (const char* forced = std::getenv("JIMA_KERNELS")) {
    if (std::strcmp(forced, "scalar") == 0) return scalar_ops();
    if (std::strcmp(forced, "avx2") == 0) {
      if (const Ops* ops = usable_avx2()) return *ops;
    }
    // Unknown or unusable request: fall through to auto-detection rather
    // than crash mid-run.
  }
  if (const Ops* ops = usable_avx2()) return *ops;
  return scalar_ops();
}

}  // namespace

const Ops& active() {
  static const Ops& chosen = select();
  return chosen;
}

std::vector<const Ops*> available() {
  std::vector<const Ops*> out{&scalar_ops()};
  if (const Ops* ops = usable_avx2()) out.push_back(ops);
  return out;
}

const Ops* find(std::string_view name) {
  for (const Ops* ops : available())
    if (name == ops->name) return ops;
  return nullptr;
}

}  // namespace jima::kernels
