#include "mfdlm/vol.hpp"

namespace mfdlm {

namespace {

// Generated by scripts/gen_logchisq_mixture.py (EM on 10000000 draws, seed 20240101, 100 iterations,
// affine-corrected to the analytic mean and variance). Do not edit.
constexpr MixtureComponent kLogChisqComponents[10] = {
    {0.13666696322425922, -3.9143002203765822, 2.7920208046649648},
    {0.11628148308481502, -2.5917693717131334, 0.78097783754782113},
    {0.10681768013018279, 0.24477532966515803, 0.39548424569931206},
    {0.10652843345007623, -0.10985539885048823, 0.44871193089369443},
    {0.10363856899328984, -0.52951498203606751, 0.50946533067503463},
    {0.10131232116401936, -1.011031082165573, 0.49545066622234879},
    {0.099472800555261046, 0.59939901299178677, 0.37223026038274226},
    {0.098736336355280438, -1.5631705302850967, 0.52665701089336359},
    {0.082966402324207517, 1.1952215150466157, 0.26089253955166175},
    {0.047579010718608546, -6.2131064789092134, 11.033122208338678},
};

}  // namespace

const MixtureComponent* log_chisq_mixture() { return kLogChisqComponents; }

}  // namespace mfdlm
