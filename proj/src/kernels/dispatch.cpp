#include "camtraj/kernels.hpp"

#include <cstdlib>

namespace camtraj::kern {

namespace {

Isa pick_default() {
    if (std::getenv("CAMTRAJ_FORCE_SCALAR") != nullptr) return Isa::Scalar;
    return avx2_table() != nullptr ? Isa::Avx2 : Isa::Scalar;
}

Isa& isa_state() {
    static Isa isa = pick_default();
    return isa;
}

}  // namespace

Isa active_isa() { return isa_state(); }

void force_isa(Isa isa) {
    if (isa == Isa::Avx2 && avx2_table() == nullptr) isa = Isa::Scalar;
    isa_state() = isa;
}

const KernelTable& table() {
    return isa_state() == Isa::Avx2 ? *avx2_table() : scalar_table();
}

}  // namespace camtraj::kern
