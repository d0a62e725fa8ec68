#include "docmi/adam.hpp"

#include <cmath>

#include "docmi/common.hpp"

namespace docmi {

void Adam::step(ParameterSet& params, const ParameterSet& grads) {
    require(params.same_layout(grads), "Adam::step: params/grads layout mismatch");
    if (!initialized_) {
        m_ = params.zeros_like();
        v_ = params.zeros_like();
        initialized_ = true;
    } else {
        require(m_.same_layout(params), "Adam::step: layout changed between steps");
    }

    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));

    for (const std::string& name : params.names()) {
        Tensor& p = params.get(name);
        const Tensor& g = grads.get(name);
        Tensor& m = m_.get(name);
        Tensor& v = v_.get(name);
        for (std::size_t i = 0; i < p.data.size(); ++i) {
            m.data[i] = cfg_.beta1 * m.data[i] + (1.0 - cfg_.beta1) * g.data[i];
            v.data[i] = cfg_.beta2 * v.data[i] + (1.0 - cfg_.beta2) * g.data[i] * g.data[i];
            const double m_hat = m.data[i] / bc1;
            const double v_hat = v.data[i] / bc2;
            p.data[i] -= cfg_.lr * m_hat / (std::sqrt(v_hat) + cfg_.eps);
        }
        if (!p.finite()) throw NumericError("Adam::step: non-finite parameter '" + name + "'");
    }
}

} // namespace docmi
