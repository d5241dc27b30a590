#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace cf3d::ad {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape) noexcept;
std::string to_string(const Shape& shape);

namespace detail {

/// One vertex of the computation graph. Leaves have no inputs and no
/// backward function; every op output records the inputs it read and a
/// closure that pushes its own gradient into theirs.
struct Node {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;  // empty until first needed
    bool requires_grad = false;
    const char* op = "leaf";
    std::vector<std::shared_ptr<Node>> inputs;
    std::function<void(Node&)> backward;

    void ensure_grad() {
        if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
    }
};

}  // namespace detail

/// Dense real tensor (double precision, row-major) with an optional
/// gradient. Copies share the underlying node, so a Tensor behaves like a
/// handle: parameters can be held by a layer and handed to an optimizer.
/// Image-like tensors use the layout [batch, height, width, channel].
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double value, bool requires_grad = false);
    static Tensor from(Shape shape, std::vector<double> data, bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);

    bool defined() const noexcept { return node_ != nullptr; }

    const Shape& shape() const;
    std::size_t rank() const { return shape().size(); }
    std::size_t dim(std::size_t axis) const;
    std::size_t numel() const { return data().size(); }

    std::span<const double> data() const;
    std::span<double> mutable_data();
    /// Gradient buffer; all zeros if no backward pass reached this tensor.
    std::span<const double> grad() const;
    std::span<double> mutable_grad();

    double item() const;
    double operator[](std::size_t i) const { return data()[i]; }

    bool requires_grad() const;
    void set_requires_grad(bool flag);
    void zero_grad();

    /// New leaf holding a copy of the values, cut off from the graph.
    Tensor detach() const;

    const char* op_name() const;

    // Graph construction, used by the op implementations.
    using BackwardFn = std::function<void(detail::Node&)>;
    static Tensor make_result(Shape shape, std::vector<double> value, const char* op,
                              std::vector<Tensor> inputs, BackwardFn backward);
    detail::Node* node() const noexcept { return node_.get(); }

private:
    explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
    std::shared_ptr<detail::Node> node_;

    friend void backward(const Tensor& loss);
};

/// Reverse-mode sweep from a scalar loss. Intermediate gradients are reset
/// on every call; leaf gradients accumulate, so calling twice without
/// zeroing doubles them.
void backward(const Tensor& loss);

}  // namespace cf3d::ad
