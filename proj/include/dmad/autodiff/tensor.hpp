#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace dmad::ad {

// Every tensor in the engine is a row-major matrix. Vectors are 1 x n,
// scalars 1 x 1, and higher-rank data (K modes x T steps x 2) is flattened
// into columns by the caller.
struct Shape {
  std::size_t rows = 0;
  std::size_t cols = 0;

  std::size_t size() const { return rows * cols; }
  bool operator==(const Shape&) const = default;
  std::string str() const;
};

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// A named trainable array. Lives outside any tape; each forward pass binds it
// to a leaf node and backward accumulates into grad().
class Parameter {
 public:
  Parameter(std::string name, Shape shape, std::vector<double> init);

  const std::string& name() const { return name_; }
  const Shape& shape() const { return shape_; }
  std::span<const double> value() const { return value_; }
  std::span<double> mutable_value() { return value_; }
  std::span<const double> grad() const { return grad_; }
  std::span<double> mutable_grad() { return grad_; }
  void zero_grad();

 private:
  std::string name_;
  Shape shape_;
  std::vector<double> value_;
  std::vector<double> grad_;
};

// Insertion-ordered parameter registry with stable addresses.
class ParameterStore {
 public:
  Parameter& add(const std::string& name, Shape shape, std::vector<double> init);
  Parameter& get(const std::string& name);
  const Parameter& get(const std::string& name) const;
  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  std::size_t count() const { return params_.size(); }
  std::size_t scalar_count() const;
  // Number of scalars in parameters whose name starts with `prefix`.
  std::size_t scalar_count(const std::string& prefix) const;

  void zero_grad();
  // L2 norm of the gradients of all parameters whose name starts with `prefix`.
  double grad_norm(const std::string& prefix) const;

  std::vector<Parameter*> all();
  std::vector<const Parameter*> all() const;

 private:
  std::vector<std::unique_ptr<Parameter>> params_;
  std::unordered_map<std::string, std::size_t> index_;
};

class Tape;

using NodeId = std::size_t;

// Lightweight handle to a node on a tape. Copying a Tensor never copies data.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Tape* tape, NodeId id) : tape_(tape), id_(id) {}

  Tape& tape() const { return *tape_; }
  NodeId id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

  const Shape& shape() const;
  std::size_t rows() const { return shape().rows; }
  std::size_t cols() const { return shape().cols; }
  std::size_t size() const { return shape().size(); }
  std::span<const double> value() const;
  double at(std::size_t r, std::size_t c) const { return value()[r * cols() + c]; }
  double item() const;
  bool requires_grad() const;

 private:
  Tape* tape_ = nullptr;
  NodeId id_ = 0;
};

// Define-by-run record of primitive operations. Nodes are appended in
// evaluation order, so reverse insertion order is a valid backward order.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, NodeId)>;

  struct Node {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;  // empty until the node receives a gradient
    bool requires_grad = false;
    std::vector<NodeId> inputs;
    BackwardFn backward;
    Parameter* param = nullptr;
  };

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Tensor constant(Shape shape, std::vector<double> values);
  Tensor constant_like(double fill, Shape shape);
  // Leaf that accumulates a gradient but is not bound to a Parameter.
  Tensor variable(Shape shape, std::vector<double> values);
  // Leaf bound to a Parameter; repeated calls in one pass return the same node.
  Tensor param(Parameter& p);

  // Appends a computed node. Gradient tracking is inherited from the inputs;
  // `backward` is dropped when no input requires grad.
  Tensor emplace(Shape shape, std::vector<double> value, std::vector<NodeId> inputs,
                 BackwardFn backward);

  // Reverse sweep from a 1 x 1 loss. Parameter leaves add their gradient into
  // Parameter::grad. A tape may be swept once.
  void backward(const Tensor& loss);

  // Gradient of the last backward() with respect to `t`; zeros if unreached.
  std::vector<double> grad(const Tensor& t) const;

  Node& node(NodeId id) { return nodes_[id]; }
  const Node& node(NodeId id) const { return nodes_[id]; }
  std::size_t size() const { return nodes_.size(); }
  bool swept() const { return swept_; }

  // Adds `g` into the gradient buffer of `id`, allocating it on first use.
  void accumulate(NodeId id, std::span<const double> g);
  std::vector<double>& grad_buffer(NodeId id);

  void clear();

 private:
  std::vector<Node> nodes_;
  std::unordered_map<const Parameter*, NodeId> bound_;
  bool swept_ = false;
};

}  // namespace dmad::ad
