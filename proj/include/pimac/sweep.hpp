// Fan-out of independent sweep points. Results land in grid order whatever
// the completion order; Serial is the reference path.
#pragma once

#include <exception>
#include <string>
#include <vector>

namespace pimac {

enum class Exec { Serial, Parallel };

template <class R, class F>
std::vector<R> sweep_map(int n, F&& f, Exec exec) {
    std::vector<R> out(n);
    if (exec == Exec::Serial) {
        for (int i = 0; i < n; ++i) out[i] = f(i);
        return out;
    }
#pragma omp parallel for schedule(dynamic, 1)
    for (int i = 0; i < n; ++i) out[i] = f(i);
    return out;
}

}  // namespace pimac
