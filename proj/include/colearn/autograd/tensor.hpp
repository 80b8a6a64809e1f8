#ifndef COLEARN_AUTOGRAD_TENSOR_HPP
#define COLEARN_AUTOGRAD_TENSOR_HPP

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace colearn::ag {

using real = double;
using shape_t = std::vector<std::size_t>;

/// Raised whenever operand shapes do not satisfy an operation's contract.
class shape_error : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// The closed set of primitives the engine knows how to differentiate.
enum class primitive_kind {
    leaf,
    conv3d,
    maxpool3d,
    batchnorm,
    linear,
    relu,
    sigmoid,
    log_softmax,
    scatter_sum,
    dropout,
    add,
    mul,
    sum,
    mean,
    concat,
    index_select,
    // Helpers needed by the losses, the point convolution and the explainer.
    sub,
    scale,
    exp,
    log,
    clamp,
    reshape,
    segment_max,
    edge_matvec,
    row_scale,
};

const char* to_string(primitive_kind kind);

enum class mode { train, eval };

std::size_t numel(const shape_t& shape);
std::string shape_str(const shape_t& shape);

struct tensor_impl;

/// Backward rule of one recorded primitive. Receives the output gradient and
/// accumulates into the inputs' gradient buffers.
struct node {
    primitive_kind kind = primitive_kind::leaf;
    std::vector<std::shared_ptr<tensor_impl>> inputs;
    std::function<void(std::span<const real> grad_out)> backward;
};

struct tensor_impl {
    shape_t shape;
    std::vector<real> data;
    std::vector<real> grad; // empty means absent
    bool requires_grad = false;
    std::shared_ptr<node> producer;

    std::vector<real>& ensure_grad();
};

/// Shared handle to an n-dimensional array that may take part in a recorded
/// computation graph. Copies alias the same storage, like a framework tensor.
class tensor {
public:
    tensor() = default;
    explicit tensor(std::shared_ptr<tensor_impl> impl) : impl_(std::move(impl)) {}

    static tensor zeros(shape_t shape, bool requires_grad = false);
    static tensor full(shape_t shape, real value, bool requires_grad = false);
    static tensor from(shape_t shape, std::vector<real> values, bool requires_grad = false);
    static tensor scalar(real value, bool requires_grad = false);

    bool defined() const { return static_cast<bool>(impl_); }
    const shape_t& shape() const { return impl_->shape; }
    std::size_t dim(std::size_t axis) const { return impl_->shape.at(axis); }
    std::size_t rank() const { return impl_->shape.size(); }
    std::size_t size() const { return impl_->data.size(); }

    std::span<real> data() { return impl_->data; }
    std::span<const real> data() const { return impl_->data; }
    real item() const;
    real operator[](std::size_t i) const { return impl_->data[i]; }

    bool requires_grad() const { return impl_->requires_grad; }
    void set_requires_grad(bool flag) { impl_->requires_grad = flag; }
    bool has_grad() const { return !impl_->grad.empty(); }
    std::span<const real> grad() const { return impl_->grad; }
    std::span<real> mutable_grad() { return impl_->ensure_grad(); }
    void zero_grad() { impl_->grad.clear(); }

    bool is_leaf() const { return !impl_->producer; }
    primitive_kind kind() const;

    /// Deep copy without graph history.
    tensor detach() const;

    const std::shared_ptr<tensor_impl>& impl() const { return impl_; }

private:
    std::shared_ptr<tensor_impl> impl_;
};

/// Disables graph recording on the current thread while alive.
class no_grad_guard {
public:
    no_grad_guard();
    ~no_grad_guard();
    no_grad_guard(const no_grad_guard&) = delete;
    no_grad_guard& operator=(const no_grad_guard&) = delete;

private:
    bool previous_;
};

bool grad_enabled();

/// Creates an output tensor and, when any input tracks gradients, records
/// `rule` as its backward. Used by every primitive implementation.
tensor make_result(primitive_kind kind, shape_t shape, std::vector<real> values,
                   std::vector<tensor> inputs,
                   std::function<void(std::span<const real>)> rule);

/// Reverse-mode sweep from a scalar. Leaf gradients accumulate across calls;
/// intermediate gradients are recomputed from scratch on every call.
void backward(const tensor& loss);

} // namespace colearn::ag

#endif // COLEARN_AUTOGRAD_TENSOR_HPP
