#include "safe_fbsde/tape.hpp"

#include <sstream>

namespace safe_fbsde {

int ParameterSet::add(std::string name, Matrix value, bool weight_decay) {
  tensors_.push_back(Tensor{std::move(name), std::move(value), weight_decay});
  return static_cast<int>(tensors_.size()) - 1;
}

std::size_t ParameterSet::num_scalars() const {
  std::size_t n = 0;
  for (const auto& t : tensors_) n += static_cast<std::size_t>(t.value.size());
  return n;
}

ParameterSet ParameterSet::zeros_like() const {
  ParameterSet out;
  for (const auto& t : tensors_) {
    out.add(t.name, Matrix::Zero(t.value.rows(), t.value.cols()), t.weight_decay);
  }
  return out;
}

bool ParameterSet::same_layout(const ParameterSet& other) const {
  if (other.size() != size()) return false;
  for (std::size_t i = 0; i < size(); ++i) {
    const auto& a = tensors_[i];
    const auto& b = other.tensors_[i];
    if (a.name != b.name || a.value.rows() != b.value.rows() || a.value.cols() != b.value.cols()) {
      return false;
    }
  }
  return true;
}

void ParameterSet::set_zero() {
  for (auto& t : tensors_) t.value.setZero();
}

void ParameterSet::add_scaled(const ParameterSet& other, double scale) {
  if (!same_layout(other)) throw std::invalid_argument("ParameterSet layout mismatch");
  for (std::size_t i = 0; i < size(); ++i) tensors_[i].value += scale * other.tensors_[i].value;
}

bool ParameterSet::all_finite() const {
  for (const auto& t : tensors_) {
    if (!t.value.allFinite()) return false;
  }
  return true;
}

Vector ParameterSet::flatten() const {
  Vector flat(static_cast<Eigen::Index>(num_scalars()));
  Eigen::Index off = 0;
  for (const auto& t : tensors_) {
    flat.segment(off, t.value.size()) = t.value.reshaped();
    off += t.value.size();
  }
  return flat;
}

void ParameterSet::unflatten(const Vector& flat) {
  if (flat.size() != static_cast<Eigen::Index>(num_scalars())) {
    throw std::invalid_argument("unflatten: size mismatch");
  }
  Eigen::Index off = 0;
  for (auto& t : tensors_) {
    t.value.reshaped() = flat.segment(off, t.value.size());
    off += t.value.size();
  }
}

Var Tape::push_value(Vector value) {
  values_.push_back(std::move(value));
  return Var{static_cast<std::int32_t>(values_.size() - 1)};
}

Var Tape::constant(Vector value) { return push_value(std::move(value)); }

Var Tape::parameter(const ParameterSet& params, int slot) {
  const Var v = push_value(params[static_cast<std::size_t>(slot)].value.reshaped());
  if (recording_) {
    Node node;
    node.outputs.first = v.index;
    node.backward = [slot](Tape& tape, NodeOutputs out) {
      tape.grads()[static_cast<std::size_t>(slot)].value.reshaped() += tape.adjoint(out[0]);
    };
    nodes_.push_back(std::move(node));
  }
  return v;
}

std::vector<Var> Tape::record(std::initializer_list<Var> inputs, std::vector<Vector> outputs,
                              BackwardFn backward) {
  if (inputs.size() > 4) throw std::logic_error("tape nodes take at most 4 inputs");
  std::vector<Var> out;
  out.reserve(outputs.size());
  for (auto& o : outputs) out.push_back(push_value(std::move(o)));
  if (recording_) {
    Node node;
    node.outputs.first = out.empty() ? -1 : out.front().index;
    std::size_t k = 0;
    for (const Var& in : inputs) node.inputs[k++] = in.index;
    node.backward = std::move(backward);
    nodes_.push_back(std::move(node));
  }
  return out;
}

Var Tape::record1(std::initializer_list<Var> inputs, Vector output, BackwardFn backward) {
  return record(inputs, {std::move(output)}, std::move(backward)).front();
}

void Tape::backward(Var output, double seed, GradientSet& grads) {
  if (!recording_) throw std::logic_error("backward() on a non-recording tape");
  grads_ = &grads;
  adjoints_.resize(values_.size());
  for (std::size_t i = 0; i < values_.size(); ++i) adjoints_[i] = Vector::Zero(values_[i].size());
  adjoints_[static_cast<std::size_t>(output.index)].setConstant(seed);

  for (std::size_t n = nodes_.size(); n-- > 0;) {
    Node& node = nodes_[n];
    node.backward(*this, node.outputs);
    for (const auto idx : node.inputs) {
      if (idx >= 0 && !adjoints_[static_cast<std::size_t>(idx)].allFinite()) {
        std::ostringstream os;
        os << "non-finite adjoint produced by tape node " << n << " (input var " << idx << ")";
        grads_ = nullptr;
        throw NonFiniteError(os.str());
      }
    }
  }
  grads_ = nullptr;
  if (!grads.all_finite()) throw NonFiniteError("non-finite parameter gradient after backward");
}

}  // namespace safe_fbsde
