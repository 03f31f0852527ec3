#ifndef NPNET_GRADCHECK_HPP
#define NPNET_GRADCHECK_HPP

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "npnet/rng.hpp"
#include "npnet/tensor.hpp"

namespace npnet {

struct GradCheckSettings {
    double step = 1e-2;
    double rel_tol = 1e-2;
    double abs_tol = 1e-3;
    int samples = 24;
};

struct GradCheckEntry {
    std::string name;
    double max_rel = 0.0;  // worst relative error among sampled coordinates
    double max_abs = 0.0;  // worst absolute error
    int samples = 0;
    bool passed = true;
};

struct GradCheckReport {
    std::vector<GradCheckEntry> entries;
    bool all_passed() const;
    std::string to_text() const;  // one line per entry
};

// Central-difference check of one analytic gradient. `loss` recomputes
// the scalar objective from current tensor contents; `probed` is
// perturbed in place and restored. `analytic` holds the gradient under
// test. `skip` may veto coordinates (e.g. relu inputs at the kink).
GradCheckEntry check_gradient(
    const std::string& name, Tensor& probed,
    const std::function<double()>& loss, const Tensor& analytic,
    const GradCheckSettings& settings, Rng& rng,
    const std::function<bool(std::size_t)>& skip = {});

// Finite-difference suite over every operator plus the end-to-end
// reduced model. All randomness derives from the seed.
GradCheckReport run_gradcheck(std::uint32_t seed,
                              const GradCheckSettings& settings = {});

}  // namespace npnet

#endif
