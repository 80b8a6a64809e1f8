#include "colearn/autograd/tensor.hpp"

#include <algorithm>
#include <functional>
#include <numeric>
#include <sstream>
#include <unordered_set>

namespace colearn::ag {

namespace {
thread_local bool g_grad_enabled = true;
}

const char* to_string(primitive_kind kind) {
    switch (kind) {
    case primitive_kind::leaf: return "leaf";
    case primitive_kind::conv3d: return "conv3d";
    case primitive_kind::maxpool3d: return "maxpool3d";
    case primitive_kind::batchnorm: return "batchnorm";
    case primitive_kind::linear: return "linear";
    case primitive_kind::relu: return "relu";
    case primitive_kind::sigmoid: return "sigmoid";
    case primitive_kind::log_softmax: return "log_softmax";
    case primitive_kind::scatter_sum: return "scatter_sum";
    case primitive_kind::dropout: return "dropout";
    case primitive_kind::add: return "add";
    case primitive_kind::mul: return "mul";
    case primitive_kind::sum: return "sum";
    case primitive_kind::mean: return "mean";
    case primitive_kind::concat: return "concat";
    case primitive_kind::index_select: return "index_select";
    case primitive_kind::sub: return "sub";
    case primitive_kind::scale: return "scale";
    case primitive_kind::exp: return "exp";
    case primitive_kind::log: return "log";
    case primitive_kind::clamp: return "clamp";
    case primitive_kind::reshape: return "reshape";
    case primitive_kind::segment_max: return "segment_max";
    case primitive_kind::edge_matvec: return "edge_matvec";
    case primitive_kind::row_scale: return "row_scale";
    }
    return "unknown";
}

std::size_t numel(const shape_t& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

std::string shape_str(const shape_t& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ',';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

std::vector<real>& tensor_impl::ensure_grad() {
    if (grad.empty()) grad.assign(data.size(), 0.0);
    return grad;
}

tensor tensor::zeros(shape_t shape, bool requires_grad) {
    return full(std::move(shape), 0.0, requires_grad);
}

tensor tensor::full(shape_t shape, real value, bool requires_grad) {
    auto impl = std::make_shared<tensor_impl>();
    impl->data.assign(numel(shape), value);
    impl->shape = std::move(shape);
    impl->requires_grad = requires_grad;
    return tensor(std::move(impl));
}

tensor tensor::from(shape_t shape, std::vector<real> values, bool requires_grad) {
    if (numel(shape) != values.size()) {
        throw shape_error("tensor::from: shape " + shape_str(shape) + " does not hold " +
                          std::to_string(values.size()) + " values");
    }
    auto impl = std::make_shared<tensor_impl>();
    impl->shape = std::move(shape);
    impl->data = std::move(values);
    impl->requires_grad = requires_grad;
    return tensor(std::move(impl));
}

tensor tensor::scalar(real value, bool requires_grad) {
    return from({}, {value}, requires_grad);
}

real tensor::item() const {
    if (impl_->data.size() != 1) throw shape_error("item() on a tensor with " + std::to_string(size()) + " elements");
    return impl_->data[0];
}

primitive_kind tensor::kind() const {
    return impl_->producer ? impl_->producer->kind : primitive_kind::leaf;
}

tensor tensor::detach() const {
    return from(impl_->shape, impl_->data, false);
}

no_grad_guard::no_grad_guard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
no_grad_guard::~no_grad_guard() { g_grad_enabled = previous_; }

bool grad_enabled() { return g_grad_enabled; }

tensor make_result(primitive_kind kind, shape_t shape, std::vector<real> values,
                   std::vector<tensor> inputs,
                   std::function<void(std::span<const real>)> rule) {
    auto impl = std::make_shared<tensor_impl>();
    impl->shape = std::move(shape);
    impl->data = std::move(values);
    const bool track = g_grad_enabled &&
        std::any_of(inputs.begin(), inputs.end(), [](const tensor& t) { return t.requires_grad(); });
    if (track) {
        impl->requires_grad = true;
        auto n = std::make_shared<node>();
        n->kind = kind;
        n->inputs.reserve(inputs.size());
        for (const auto& t : inputs) n->inputs.push_back(t.impl());
        n->backward = std::move(rule);
        impl->producer = std::move(n);
    }
    return tensor(std::move(impl));
}

void backward(const tensor& loss) {
    if (loss.size() != 1) {
        throw shape_error("backward() needs a scalar loss, got shape " + shape_str(loss.shape()));
    }
    if (!loss.requires_grad()) return;

    // Iterative post-order DFS gives a topological order (inputs before outputs).
    std::vector<tensor_impl*> order;
    std::unordered_set<tensor_impl*> visited;
    std::vector<std::pair<tensor_impl*, std::size_t>> stack;
    stack.emplace_back(loss.impl().get(), 0);
    visited.insert(loss.impl().get());
    while (!stack.empty()) {
        auto& [cur, next] = stack.back();
        if (cur->producer && next < cur->producer->inputs.size()) {
            tensor_impl* child = cur->producer->inputs[next++].get();
            if (child->requires_grad && visited.insert(child).second) stack.emplace_back(child, 0);
            continue;
        }
        order.push_back(cur);
        stack.pop_back();
    }

    for (tensor_impl* t : order) {
        if (t->producer) t->grad.assign(t->data.size(), 0.0);
    }
    auto& seed = loss.impl()->ensure_grad();
    seed[0] += 1.0;

    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        tensor_impl* t = *it;
        if (t->producer && t->producer->backward) t->producer->backward(t->grad);
    }
}

} // namespace colearn::ag
