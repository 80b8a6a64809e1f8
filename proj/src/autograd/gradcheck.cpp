#include "colearn/autograd/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace colearn::ag {

gradcheck_report finite_difference_check(const std::function<tensor()>& f,
                                         const std::vector<tensor>& wrt, real h, real floor) {
    for (auto t : wrt) {
        t.zero_grad();
        t.set_requires_grad(true);
    }
    const tensor loss = f();
    if (!std::isfinite(loss.item())) throw std::domain_error("finite_difference_check: f(x) is not finite");
    backward(loss);

    gradcheck_report report;
    no_grad_guard guard;
    for (std::size_t k = 0; k < wrt.size(); ++k) {
        tensor t = wrt[k];
        const std::vector<real> analytic = t.has_grad() ? std::vector<real>(t.grad().begin(), t.grad().end())
                                                        : std::vector<real>(t.size(), 0.0);
        auto data = t.data();
        for (std::size_t i = 0; i < data.size(); ++i) {
            const real saved = data[i];
            data[i] = saved + h;
            const real up = f().item();
            data[i] = saved - h;
            const real down = f().item();
            data[i] = saved;
            const real numeric = (up - down) / (2.0 * h);
            const real denom = std::max({std::abs(analytic[i]), std::abs(numeric), floor});
            const real err = std::abs(analytic[i] - numeric) / denom;
            if (err > report.max_relative_error) {
                report = {err, k, i, analytic[i], numeric};
            }
        }
    }
    return report;
}

real finite_difference_check(const std::function<tensor(const tensor&)>& f, const tensor& x, real h) {
    return finite_difference_check([&] { return f(x); }, {x}, h).max_relative_error;
}

void nudge_off_kinks(tensor& x, real margin) {
    for (auto& v : x.data()) {
        if (std::abs(v) < margin) v = v < 0.0 ? -margin : margin;
    }
}

} // namespace colearn::ag
