#ifndef COLEARN_AUTOGRAD_GRADCHECK_HPP
#define COLEARN_AUTOGRAD_GRADCHECK_HPP

#include <functional>
#include <vector>

#include "colearn/autograd/tensor.hpp"

namespace colearn::ag {

struct gradcheck_report {
    real max_relative_error = 0.0;
    std::size_t worst_tensor = 0;
    std::size_t worst_index = 0;
    real analytic = 0.0;
    real numeric = 0.0;
};

/// Compares backward() against central differences over every coordinate of
/// every tensor in `wrt`. `f` must rebuild the graph from the current values
/// of `wrt` on each call and return a scalar. The error of one coordinate is
/// |a - n| / max(|a|, |n|, floor). Existing gradients on `wrt` are cleared.
gradcheck_report finite_difference_check(const std::function<tensor()>& f,
                                         const std::vector<tensor>& wrt, real h = 1e-5, real floor = 1e-8);

/// Single-input convenience form.
real finite_difference_check(const std::function<tensor(const tensor&)>& f, const tensor& x,
                             real h = 1e-5);

/// Moves entries with |v| < margin to +/-margin so that piecewise-linear ops
/// (relu, max) are evaluated away from their kinks.
void nudge_off_kinks(tensor& x, real margin = 1e-3);

} // namespace colearn::ag

#endif // COLEARN_AUTOGRAD_GRADCHECK_HPP
