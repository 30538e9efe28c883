#pragma once

#include <algorithm>

#include "vase/tensor.hpp"

namespace vase {

// Linear ramp of the KL target: C(t) = min(t * delta_c * c_max, c_max).
struct CapacitySchedule {
    double c_max = 35.0;
    double delta_c = 6.3e-6;
    double gamma = 100.0;
};

inline double capacity_at(long step, const CapacitySchedule& sched) {
    check(step >= 0, "capacity_at: negative step");
    return std::min(static_cast<double>(step) * sched.delta_c * sched.c_max, sched.c_max);
}

}  // namespace vase
