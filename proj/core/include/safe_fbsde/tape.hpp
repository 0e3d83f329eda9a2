#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "safe_fbsde/types.hpp"

namespace safe_fbsde {

/// Named trainable tensor. Vectors are stored as n x 1 matrices.
struct Tensor {
  std::string name;
  Matrix value;
  bool weight_decay = false;  // included in the L2 penalty
};

/// Ordered collection of tensors. Used for parameters, gradients and Adam
/// moments alike, so all of them share one layout.
class ParameterSet {
 public:
  int add(std::string name, Matrix value, bool weight_decay);

  std::size_t size() const { return tensors_.size(); }
  Tensor& operator[](std::size_t i) { return tensors_[i]; }
  const Tensor& operator[](std::size_t i) const { return tensors_[i]; }
  auto begin() { return tensors_.begin(); }
  auto end() { return tensors_.end(); }
  auto begin() const { return tensors_.begin(); }
  auto end() const { return tensors_.end(); }

  std::size_t num_scalars() const;
  /// Same names and shapes, all zeros.
  ParameterSet zeros_like() const;
  bool same_layout(const ParameterSet& other) const;

  void set_zero();
  /// this += scale * other
  void add_scaled(const ParameterSet& other, double scale);
  bool all_finite() const;

  /// Flat views in tensor order (column-major within each tensor).
  Vector flatten() const;
  void unflatten(const Vector& flat);

 private:
  std::vector<Tensor> tensors_;
};

using GradientSet = ParameterSet;

struct Var {
  std::int32_t index = -1;
  bool valid() const { return index >= 0; }
};

class Tape;

/// Outputs of a node are allocated consecutively.
struct NodeOutputs {
  std::int32_t first = -1;
  Var operator[](int k) const { return Var{first + k}; }
};

/// Reverse pass of one recorded node. Reads output adjoints, accumulates into
/// input adjoints and, for parameter-consuming nodes, into the GradientSet.
using BackwardFn = std::function<void(Tape&, NodeOutputs)>;

/// Reverse-mode tape over small dense vectors.
///
/// Nodes are coarse (a whole LSTM cell, a QP solve, an SDE step) and carry
/// their own backward closures. A tape built with recording disabled only
/// evaluates values; backward() is then unavailable.
class Tape {
 public:
  explicit Tape(bool recording = true) : recording_(recording) {}

  bool recording() const { return recording_; }

  /// Leaf that receives no gradient (states, noise).
  Var constant(Vector value);
  /// Leaf bound to params[slot] (flattened); its adjoint is added to
  /// grads[slot] during backward().
  Var parameter(const ParameterSet& params, int slot);

  /// Records a node producing `outputs` from `inputs`. Returns the output vars
  /// in order.
  std::vector<Var> record(std::initializer_list<Var> inputs, std::vector<Vector> outputs,
                          BackwardFn backward);
  Var record1(std::initializer_list<Var> inputs, Vector output, BackwardFn backward);

  const Vector& value(Var v) const { return values_[static_cast<std::size_t>(v.index)]; }
  double scalar(Var v) const { return value(v)[0]; }

  /// Adjoint access for use inside backward closures.
  Vector& adjoint(Var v) { return adjoints_[static_cast<std::size_t>(v.index)]; }
  GradientSet& grads() { return *grads_; }

  /// Seeds d(output)/d(output) = seed and sweeps the nodes in reverse,
  /// accumulating into `grads` (which must match the parameter layout).
  /// Throws NonFiniteError naming the node if an adjoint becomes non-finite.
  void backward(Var output, double seed, GradientSet& grads);

  std::size_t num_vars() const { return values_.size(); }
  std::size_t num_nodes() const { return nodes_.size(); }

 private:
  struct Node {
    std::array<std::int32_t, 4> inputs{-1, -1, -1, -1};
    NodeOutputs outputs;
    BackwardFn backward;
  };

  Var push_value(Vector value);

  bool recording_;
  std::vector<Vector> values_;
  std::vector<Vector> adjoints_;
  std::vector<Node> nodes_;
  GradientSet* grads_ = nullptr;
};

}  // namespace safe_fbsde
