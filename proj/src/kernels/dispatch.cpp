#include <atomic>
#include <stdexcept>

#include "nifm/kernels.hpp"

namespace nifm::kernels {
namespace {

std::atomic<const KernelTable*>& active_slot() {
  static std::atomic<const KernelTable*> slot{nullptr};
  return slot;
}

}  // namespace

std::string_view isa_name(Isa isa) { return isa == Isa::Avx2 ? "avx2" : "scalar"; }

bool cpu_supports(Isa isa) {
  switch (isa) {
    case Isa::Scalar:
      return true;
    case Isa::Avx2:
#if defined(__x86_64__) || defined(__i386__)
      return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
      return false;
#endif
  }
  return false;
}

Isa detected_isa() { return cpu_supports(Isa::Avx2) ? Isa::Avx2 : Isa::Scalar; }

const KernelTable& active() {
  const KernelTable* t = active_slot().load(std::memory_order_acquire);
  if (t == nullptr) {
    t = detected_isa() == Isa::Avx2 ? &avx2_table() : &scalar_table();
    active_slot().store(t, std::memory_order_release);
  }
  return *t;
}

Isa active_isa() { return &active() == &scalar_table() ? Isa::Scalar : Isa::Avx2; }

void set_active_isa(Isa isa) {
  if (!cpu_supports(isa)) throw std::invalid_argument("CPU does not support requested ISA");
  active_slot().store(isa == Isa::Avx2 ? &avx2_table() : &scalar_table(), std::memory_order_release);
}

}  // namespace nifm::kernels
