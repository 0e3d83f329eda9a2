#pragma once

#include <filesystem>

#include "safe_fbsde/dynamics.hpp"
#include "safe_fbsde/tape.hpp"

namespace safe_fbsde {

inline constexpr int kDefaultHidden = 16;

/// Value-gradient predictor: two stacked LSTM layers and an affine head, all
/// shared across time steps, plus the trainable initial value psi = V(x0, 0)
/// and trainable initial (h, c) states of both layers.
///
/// Gate blocks inside the 4H rows are ordered input, forget, cell, output.
struct NetworkParams {
  enum Slot : int {
    kLayer1Wx,
    kLayer1Wh,
    kLayer1Bias,
    kLayer2Wx,
    kLayer2Wh,
    kLayer2Bias,
    kHeadW,
    kHeadBias,
    kPsi,
    kHidden1,
    kCell1,
    kHidden2,
    kCell2,
    kNumSlots
  };

  int state_dim = 0;
  int hidden = kDefaultHidden;
  ParameterSet tensors;

  static std::size_t expected_count(int state_dim, int hidden = kDefaultHidden);
  double psi() const { return tensors[kPsi].value(0, 0); }
};

/// Weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)), forget-gate bias 1, psi 0,
/// initial recurrent states 0.
NetworkParams init_params(NoiseStream& stream, int state_dim, int hidden = kDefaultHidden);

/// Builds a parameter set with every tensor zero (useful for tests).
NetworkParams zero_params(int state_dim, int hidden = kDefaultHidden);

struct RecurrentState {
  Var h1, c1, h2, c2;
};

struct VxPrediction {
  Var vx;
  RecurrentState state;
};

RecurrentState initial_recurrent_state(Tape& tape, const NetworkParams& params);
VxPrediction predict_vx(Tape& tape, const NetworkParams& params, Var x,
                        const RecurrentState& state);

/// Convenience: runs the network on a state sequence without recording and
/// returns V_x for every prefix.
std::vector<Vector> predict_sequence(const NetworkParams& params, const std::vector<Vector>& xs);

/// Parameter archive: `path` is a JSON manifest next to a little-endian
/// float64 blob named `<stem>.bin`.
void save_params(const NetworkParams& params, const std::filesystem::path& path);
NetworkParams load_params(const std::filesystem::path& path);

}  // namespace safe_fbsde
