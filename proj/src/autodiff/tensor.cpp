#include "dmad/autodiff/tensor.hpp"

#include <cmath>

namespace dmad::ad {

std::string Shape::str() const {
  return "[" + std::to_string(rows) + "x" + std::to_string(cols) + "]";
}

Parameter::Parameter(std::string name, Shape shape, std::vector<double> init)
    : name_(std::move(name)), shape_(shape), value_(std::move(init)), grad_(shape.size(), 0.0) {
  if (value_.size() != shape_.size()) {
    throw ShapeError("parameter " + name_ + ": " + std::to_string(value_.size()) +
                     " values for shape " + shape_.str());
  }
}

void Parameter::zero_grad() { std::fill(grad_.begin(), grad_.end(), 0.0); }

Parameter& ParameterStore::add(const std::string& name, Shape shape, std::vector<double> init) {
  if (contains(name)) throw std::invalid_argument("duplicate parameter name: " + name);
  index_.emplace(name, params_.size());
  params_.push_back(std::make_unique<Parameter>(name, shape, std::move(init)));
  return *params_.back();
}

Parameter& ParameterStore::get(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("unknown parameter: " + name);
  return *params_[it->second];
}

const Parameter& ParameterStore::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("unknown parameter: " + name);
  return *params_[it->second];
}

std::size_t ParameterStore::scalar_count() const { return scalar_count(""); }

std::size_t ParameterStore::scalar_count(const std::string& prefix) const {
  std::size_t n = 0;
  for (const auto& p : params_) {
    if (p->name().starts_with(prefix)) n += p->shape().size();
  }
  return n;
}

void ParameterStore::zero_grad() {
  for (auto& p : params_) p->zero_grad();
}

double ParameterStore::grad_norm(const std::string& prefix) const {
  double acc = 0.0;
  for (const auto& p : params_) {
    if (!p->name().starts_with(prefix)) continue;
    for (double g : p->grad()) acc += g * g;
  }
  return std::sqrt(acc);
}

std::vector<Parameter*> ParameterStore::all() {
  std::vector<Parameter*> out;
  out.reserve(params_.size());
  for (auto& p : params_) out.push_back(p.get());
  return out;
}

std::vector<const Parameter*> ParameterStore::all() const {
  std::vector<const Parameter*> out;
  out.reserve(params_.size());
  for (const auto& p : params_) out.push_back(p.get());
  return out;
}

const Shape& Tensor::shape() const { return tape_->node(id_).shape; }

std::span<const double> Tensor::value() const { return tape_->node(id_).value; }

double Tensor::item() const {
  if (size() != 1) throw ShapeError("item() on non-scalar tensor " + shape().str());
  return value()[0];
}

bool Tensor::requires_grad() const { return tape_->node(id_).requires_grad; }

Tensor Tape::constant(Shape shape, std::vector<double> values) {
  if (values.size() != shape.size()) {
    throw ShapeError("constant: " + std::to_string(values.size()) + " values for " + shape.str());
  }
  Node n;
  n.shape = shape;
  n.value = std::move(values);
  nodes_.push_back(std::move(n));
  return Tensor(this, nodes_.size() - 1);
}

Tensor Tape::constant_like(double fill, Shape shape) {
  return constant(shape, std::vector<double>(shape.size(), fill));
}

Tensor Tape::variable(Shape shape, std::vector<double> values) {
  Tensor t = constant(shape, std::move(values));
  nodes_.back().requires_grad = true;
  return t;
}

Tensor Tape::param(Parameter& p) {
  if (auto it = bound_.find(&p); it != bound_.end()) return Tensor(this, it->second);
  Tensor t = variable(p.shape(), std::vector<double>(p.value().begin(), p.value().end()));
  nodes_.back().param = &p;
  bound_.emplace(&p, t.id());
  return t;
}

Tensor Tape::emplace(Shape shape, std::vector<double> value, std::vector<NodeId> inputs,
                     BackwardFn backward) {
  if (value.size() != shape.size()) {
    throw ShapeError("emplace: value size does not match " + shape.str());
  }
  Node n;
  n.shape = shape;
  n.value = std::move(value);
  for (NodeId in : inputs) n.requires_grad = n.requires_grad || nodes_[in].requires_grad;
  if (n.requires_grad) {
    n.inputs = std::move(inputs);
    n.backward = std::move(backward);
  }
  nodes_.push_back(std::move(n));
  return Tensor(this, nodes_.size() - 1);
}

void Tape::accumulate(NodeId id, std::span<const double> g) {
  auto& buf = grad_buffer(id);
  for (std::size_t i = 0; i < buf.size(); ++i) buf[i] += g[i];
}

std::vector<double>& Tape::grad_buffer(NodeId id) {
  auto& n = nodes_[id];
  if (n.grad.empty()) n.grad.assign(n.shape.size(), 0.0);
  return n.grad;
}

void Tape::backward(const Tensor& loss) {
  if (&loss.tape() != this) throw std::invalid_argument("backward: loss belongs to another tape");
  if (loss.size() != 1) throw ShapeError("backward: loss must be scalar, got " + loss.shape().str());
  if (swept_) throw std::logic_error("backward: tape already swept; re-run the forward pass");
  swept_ = true;
  if (!nodes_[loss.id()].requires_grad) return;
  grad_buffer(loss.id())[0] = 1.0;
  for (NodeId id = loss.id() + 1; id-- > 0;) {
    Node& n = nodes_[id];
    if (!n.requires_grad || n.grad.empty()) continue;
    if (n.backward) n.backward(*this, id);
    if (n.param != nullptr) {
      auto g = n.param->mutable_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
    }
  }
}

std::vector<double> Tape::grad(const Tensor& t) const {
  const auto& n = nodes_[t.id()];
  if (n.grad.empty()) return std::vector<double>(n.shape.size(), 0.0);
  return n.grad;
}

void Tape::clear() {
  nodes_.clear();
  bound_.clear();
  swept_ = false;
}

}  // namespace dmad::ad
