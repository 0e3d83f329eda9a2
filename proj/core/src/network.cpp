#include "safe_fbsde/network.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include <nlohmann/json.hpp>

namespace safe_fbsde {
namespace {

using Slot = NetworkParams::Slot;

Matrix uniform_matrix(NoiseStream& stream, Eigen::Index rows, Eigen::Index cols, double bound) {
  Matrix m(rows, cols);
  // Column-major fill order keeps the draw sequence independent of Eigen internals.
  for (Eigen::Index c = 0; c < cols; ++c) {
    for (Eigen::Index r = 0; r < rows; ++r) m(r, c) = stream.uniform(-bound, bound);
  }
  return m;
}

void build_layout(NetworkParams& p, const std::array<Matrix, Slot::kNumSlots>& values) {
  static constexpr std::array<const char*, Slot::kNumSlots> kNames = {
      "lstm1.w_x", "lstm1.w_h", "lstm1.bias", "lstm2.w_x", "lstm2.w_h", "lstm2.bias", "head.w",
      "head.bias", "psi",       "lstm1.h0",  "lstm1.c0",   "lstm2.h0",  "lstm2.c0"};
  for (int s = 0; s < Slot::kNumSlots; ++s) {
    const bool decay = s <= Slot::kHeadBias;
    p.tensors.add(kNames[static_cast<std::size_t>(s)], values[static_cast<std::size_t>(s)], decay);
  }
}

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

// Fused LSTM cell node: (x, h, c) -> (h', c').
std::pair<Var, Var> lstm_cell(Tape& tape, const ParameterSet& params, int wx_slot, Var x, Var h,
                              Var c) {
  const Matrix& wx = params[static_cast<std::size_t>(wx_slot)].value;
  const Matrix& wh = params[static_cast<std::size_t>(wx_slot + 1)].value;
  const Matrix& bias = params[static_cast<std::size_t>(wx_slot + 2)].value;
  const auto hidden = wh.cols();

  Vector gates = wx * tape.value(x) + wh * tape.value(h) + bias.col(0);
  for (Eigen::Index k = 0; k < hidden; ++k) {
    gates[k] = sigmoid(gates[k]);
    gates[hidden + k] = sigmoid(gates[hidden + k]);
    gates[2 * hidden + k] = std::tanh(gates[2 * hidden + k]);
    gates[3 * hidden + k] = sigmoid(gates[3 * hidden + k]);
  }
  const auto i_g = gates.segment(0, hidden);
  const auto f_g = gates.segment(hidden, hidden);
  const auto g_g = gates.segment(2 * hidden, hidden);
  const auto o_g = gates.segment(3 * hidden, hidden);
  Vector c_next = f_g.cwiseProduct(tape.value(c)) + i_g.cwiseProduct(g_g);
  Vector tanh_c = c_next.array().tanh();
  Vector h_next = o_g.cwiseProduct(tanh_c);

  const ParameterSet* pset = &params;
  auto outs = tape.record(
      {x, h, c}, {std::move(h_next), std::move(c_next)},
      [pset, wx_slot, x, h, c, gates = std::move(gates), tanh_c](Tape& t, NodeOutputs out) {
        const Eigen::Index n = tanh_c.size();
        const auto i_g = gates.segment(0, n);
        const auto f_g = gates.segment(n, n);
        const auto g_g = gates.segment(2 * n, n);
        const auto o_g = gates.segment(3 * n, n);
        const Vector& dh = t.adjoint(out[0]);
        const Vector dc = t.adjoint(out[1]) +
                          dh.cwiseProduct(o_g).cwiseProduct(
                              (1.0 - tanh_c.array().square()).matrix());
        Vector dz(4 * n);
        dz.segment(0, n) = dc.cwiseProduct(g_g).cwiseProduct(
            i_g.cwiseProduct((1.0 - i_g.array()).matrix()));
        dz.segment(n, n) = dc.cwiseProduct(t.value(c)).cwiseProduct(
            f_g.cwiseProduct((1.0 - f_g.array()).matrix()));
        dz.segment(2 * n, n) =
            dc.cwiseProduct(i_g).cwiseProduct((1.0 - g_g.array().square()).matrix());
        dz.segment(3 * n, n) = dh.cwiseProduct(tanh_c).cwiseProduct(
            o_g.cwiseProduct((1.0 - o_g.array()).matrix()));

        auto& g = t.grads();
        const auto s = static_cast<std::size_t>(wx_slot);
        g[s].value.noalias() += dz * t.value(x).transpose();
        g[s + 1].value.noalias() += dz * t.value(h).transpose();
        g[s + 2].value.col(0) += dz;
        t.adjoint(x).noalias() += (*pset)[s].value.transpose() * dz;
        t.adjoint(h).noalias() += (*pset)[s + 1].value.transpose() * dz;
        t.adjoint(c) += dc.cwiseProduct(f_g);
      });
  return {outs[0], outs[1]};
}

std::uint64_t to_le(std::uint64_t v) {
  if constexpr (std::endian::native == std::endian::little) {
    return v;
  } else {
    std::uint64_t r = 0;
    for (int b = 0; b < 8; ++b) r |= ((v >> (8 * b)) & 0xffu) << (8 * (7 - b));
    return r;
  }
}

}  // namespace

std::size_t NetworkParams::expected_count(int state_dim, int hidden) {
  const auto n = static_cast<std::size_t>(state_dim);
  const auto h = static_cast<std::size_t>(hidden);
  return 4 * h * (n + h + 1) + 4 * h * (h + h + 1) + (h * n + n) + 1 + 4 * h;
}

NetworkParams init_params(NoiseStream& stream, int state_dim, int hidden) {
  if (state_dim < 1) throw std::invalid_argument("init_params: state_dim must be >= 1");
  if (hidden < 1) throw std::invalid_argument("init_params: hidden must be >= 1");
  NetworkParams p;
  p.state_dim = state_dim;
  p.hidden = hidden;
  const double in_bound = 1.0 / std::sqrt(static_cast<double>(state_dim));
  const double h_bound = 1.0 / std::sqrt(static_cast<double>(hidden));

  std::array<Matrix, Slot::kNumSlots> v;
  v[Slot::kLayer1Wx] = uniform_matrix(stream, 4 * hidden, state_dim, in_bound);
  v[Slot::kLayer1Wh] = uniform_matrix(stream, 4 * hidden, hidden, h_bound);
  v[Slot::kLayer1Bias] = uniform_matrix(stream, 4 * hidden, 1, h_bound);
  v[Slot::kLayer2Wx] = uniform_matrix(stream, 4 * hidden, hidden, h_bound);
  v[Slot::kLayer2Wh] = uniform_matrix(stream, 4 * hidden, hidden, h_bound);
  v[Slot::kLayer2Bias] = uniform_matrix(stream, 4 * hidden, 1, h_bound);
  v[Slot::kHeadW] = uniform_matrix(stream, state_dim, hidden, h_bound);
  v[Slot::kHeadBias] = uniform_matrix(stream, state_dim, 1, h_bound);
  v[Slot::kLayer1Bias].block(hidden, 0, hidden, 1).setOnes();
  v[Slot::kLayer2Bias].block(hidden, 0, hidden, 1).setOnes();
  v[Slot::kPsi] = Matrix::Zero(1, 1);
  for (auto s : {Slot::kHidden1, Slot::kCell1, Slot::kHidden2, Slot::kCell2}) {
    v[s] = Matrix::Zero(hidden, 1);
  }
  build_layout(p, v);
  return p;
}

NetworkParams zero_params(int state_dim, int hidden) {
  NoiseStream unused(0);
  NetworkParams p = init_params(unused, state_dim, hidden);
  p.tensors.set_zero();
  return p;
}

RecurrentState initial_recurrent_state(Tape& tape, const NetworkParams& params) {
  return RecurrentState{tape.parameter(params.tensors, Slot::kHidden1),
                        tape.parameter(params.tensors, Slot::kCell1),
                        tape.parameter(params.tensors, Slot::kHidden2),
                        tape.parameter(params.tensors, Slot::kCell2)};
}

VxPrediction predict_vx(Tape& tape, const NetworkParams& params, Var x,
                        const RecurrentState& state) {
  if (tape.value(x).size() != params.state_dim) {
    throw std::invalid_argument("predict_vx: input dimension mismatch");
  }
  const auto [h1, c1] = lstm_cell(tape, params.tensors, Slot::kLayer1Wx, x, state.h1, state.c1);
  const auto [h2, c2] = lstm_cell(tape, params.tensors, Slot::kLayer2Wx, h1, state.h2, state.c2);

  const Matrix& w = params.tensors[Slot::kHeadW].value;
  Vector vx = w * tape.value(h2) + params.tensors[Slot::kHeadBias].value.col(0);
  const ParameterSet* pset = &params.tensors;
  const Var out = tape.record1({h2}, std::move(vx), [pset, h2](Tape& t, NodeOutputs o) {
    const Vector& d = t.adjoint(o[0]);
    t.grads()[Slot::kHeadW].value.noalias() += d * t.value(h2).transpose();
    t.grads()[Slot::kHeadBias].value.col(0) += d;
    t.adjoint(h2).noalias() += (*pset)[Slot::kHeadW].value.transpose() * d;
  });
  return VxPrediction{out, RecurrentState{h1, c1, h2, c2}};
}

std::vector<Vector> predict_sequence(const NetworkParams& params, const std::vector<Vector>& xs) {
  Tape tape(false);
  RecurrentState state = initial_recurrent_state(tape, params);
  std::vector<Vector> out;
  out.reserve(xs.size());
  for (const auto& x : xs) {
    const VxPrediction p = predict_vx(tape, params, tape.constant(x), state);
    out.push_back(tape.value(p.vx));
    state = p.state;
  }
  return out;
}

void save_params(const NetworkParams& params, const std::filesystem::path& path) {
  std::filesystem::path blob = path;
  blob.replace_extension(".bin");

  nlohmann::json manifest;
  manifest["format"] = "safe_fbsde.params";
  manifest["version"] = 1;
  manifest["dtype"] = "float64-le";
  manifest["state_dim"] = params.state_dim;
  manifest["hidden"] = params.hidden;
  manifest["blob"] = blob.filename().string();
  nlohmann::json tensors = nlohmann::json::array();

  std::ofstream out(blob, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + blob.string() + " for writing");
  std::size_t offset = 0;
  for (const auto& t : params.tensors) {
    tensors.push_back({{"name", t.name},
                       {"rows", t.value.rows()},
                       {"cols", t.value.cols()},
                       {"offset", offset},
                       {"count", t.value.size()}});
    for (Eigen::Index k = 0; k < t.value.size(); ++k) {
      const std::uint64_t bits = to_le(std::bit_cast<std::uint64_t>(t.value.reshaped()[k]));
      char bytes[8];
      std::memcpy(bytes, &bits, 8);
      out.write(bytes, 8);
    }
    offset += static_cast<std::size_t>(t.value.size());
  }
  if (!out) throw std::runtime_error("failed writing " + blob.string());
  manifest["tensors"] = std::move(tensors);

  std::ofstream mf(path);
  if (!mf) throw std::runtime_error("cannot open " + path.string() + " for writing");
  mf << manifest.dump(2) << '\n';
}

NetworkParams load_params(const std::filesystem::path& path) {
  std::ifstream mf(path);
  if (!mf) throw std::runtime_error("cannot open parameter manifest " + path.string());
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(mf);
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("invalid parameter manifest " + path.string() + ": " + e.what());
  }
  if (manifest.value("format", "") != "safe_fbsde.params" ||
      manifest.value("dtype", "") != "float64-le") {
    throw std::runtime_error("unsupported parameter archive " + path.string());
  }
  const int state_dim = manifest.at("state_dim").get<int>();
  const int hidden = manifest.at("hidden").get<int>();
  NetworkParams params = zero_params(state_dim, hidden);

  const auto blob = path.parent_path() / manifest.at("blob").get<std::string>();
  std::ifstream in(blob, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open parameter blob " + blob.string());
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

  const auto& entries = manifest.at("tensors");
  if (entries.size() != params.tensors.size()) {
    throw std::runtime_error("parameter archive tensor count mismatch");
  }
  for (std::size_t i = 0; i < entries.size(); ++i) {
    auto& t = params.tensors[i];
    const auto& e = entries[i];
    if (e.at("name").get<std::string>() != t.name || e.at("rows").get<Eigen::Index>() != t.value.rows() ||
        e.at("cols").get<Eigen::Index>() != t.value.cols()) {
      throw std::runtime_error("parameter archive layout mismatch at tensor " + t.name);
    }
    const auto offset = e.at("offset").get<std::size_t>();
    const auto count = static_cast<std::size_t>(t.value.size());
    if ((offset + count) * 8 > bytes.size()) throw std::runtime_error("parameter blob truncated");
    for (std::size_t k = 0; k < count; ++k) {
      std::uint64_t bits = 0;
      std::memcpy(&bits, bytes.data() + 8 * (offset + k), 8);
      t.value.reshaped()[static_cast<Eigen::Index>(k)] = std::bit_cast<double>(to_le(bits));
    }
  }
  return params;
}

}  // namespace safe_fbsde
