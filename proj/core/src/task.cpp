#include "safe_fbsde/task.hpp"

#include <fstream>
#include <numbers>
#include <set>
#include <sstream>

namespace safe_fbsde {
namespace {

using nlohmann::json;
constexpr double kPi = std::numbers::pi;

// Strict object reader: every key must be consumed, types must match.
class Reader {
 public:
  Reader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) fail(path_.empty() ? "config" : path_, "expected an object");
  }

  template <class T>
  void get(const char* key, T& out) {
    const auto it = j_.find(key);
    if (it == j_.end()) return;
    seen_.insert(key);
    try {
      out = it->template get<T>();
    } catch (const json::exception&) {
      fail(child(key), "has the wrong type (" + std::string(it->type_name()) + ")");
    }
  }

  template <class Fn>
  void object(const char* key, Fn&& fn) {
    const auto it = j_.find(key);
    if (it == j_.end()) return;
    seen_.insert(key);
    Reader sub(*it, child(key));
    fn(sub);
    sub.finish();
  }

  const json* raw(const char* key) {
    const auto it = j_.find(key);
    if (it == j_.end()) return nullptr;
    seen_.insert(key);
    return &*it;
  }

  std::string child(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  void finish() const {
    for (const auto& [key, value] : j_.items()) {
      if (!seen_.count(key)) fail(child(key), "is not a recognized key");
    }
  }

  [[noreturn]] static void fail(const std::string& path, const std::string& what) {
    throw ConfigError("config key '" + path + "' " + what);
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

json barrier_to_json(const BarrierConfig& b) {
  json j{{"kind", b.kind}, {"mu", b.mu}, {"gamma", b.gamma}};
  if (b.kind == "car-obstacle") {
    j["center"] = b.center;
    j["radius"] = b.radius;
    j["car"] = b.car;
  } else if (b.kind == "car-pairs") {
    j["car_radius"] = b.car_radius;
  } else {
    j["low"] = b.low;
    j["high"] = b.high;
  }
  return j;
}

BarrierConfig barrier_from_json(const json& j, const std::string& path) {
  BarrierConfig b;
  Reader r(j, path);
  r.get("kind", b.kind);
  r.get("mu", b.mu);
  r.get("gamma", b.gamma);
  r.get("low", b.low);
  r.get("high", b.high);
  r.get("center", b.center);
  r.get("radius", b.radius);
  r.get("car", b.car);
  r.get("car_radius", b.car_radius);
  r.finish();
  return b;
}

std::string describe_parse_error(const std::string& text, const json::parse_error& e) {
  std::size_t line = 1;
  std::size_t col = 1;
  const std::size_t end = std::min<std::size_t>(e.byte ? e.byte - 1 : 0, text.size());
  for (std::size_t i = 0; i < end; ++i) {
    if (text[i] == '\n') {
      ++line;
      col = 1;
    } else {
      ++col;
    }
  }
  std::ostringstream os;
  os << "line " << line << ", column " << col << ": " << e.what();
  return os.str();
}

Vector to_vector(const std::vector<double>& v) {
  return Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
}

RunConfig base_config(const std::string& task, int horizon, int batch, int iterations, double lr) {
  RunConfig c;
  c.task = task;
  c.train.horizon_steps = horizon;
  c.train.batch_size = batch;
  c.train.iterations = iterations;
  c.train.learning_rate = lr;
  c.train.dt = 0.02;
  c.eval.num_rollouts = batch;
  c.output_dir = "runs/" + task;
  return c;
}

RunConfig cartpole_base(const std::string& task, int iterations) {
  RunConfig c = base_config(task, 75, 128, iterations, 1e-2);
  c.system.kind = "cartpole";
  c.cost.x_goal = {0.0, kPi, 0.0, 0.0};
  c.cost.running_weights = {0.1, 2.0, 0.05, 0.05};
  c.cost.terminal_weights = {1.0, 20.0, 0.5, 0.5};
  c.cost.r = 0.05;
  c.cost.angle_indices = {1};
  return c;
}

// Balancing only cares about the pole; a large r keeps the untrained
// controller gentle so the angle filter is not driven near cos(theta) = 0.
void balance_cost(RunConfig& c) {
  c.cost.running_weights = {0.0, 2.0, 0.0, 0.05};
  c.cost.terminal_weights = {0.0, 20.0, 0.0, 0.5};
  c.cost.r = 5.0;
}

std::vector<double> car_goal(double px, double py, double heading) { return {px, py, heading, 0.0}; }

}  // namespace

RunConfig preset(const std::string& task) {
  if (task == "pendulum-balance") {
    RunConfig c = base_config(task, 75, 128, 201, 1e-2);
    c.system.kind = "pendulum";
    c.barriers.push_back({.kind = "pendulum-box", .mu = 0.05, .gamma = 0.5, .low = 2.0 * kPi / 3.0,
                          .high = 4.0 * kPi / 3.0});
    c.cost.x_goal = {kPi, 0.0};
    c.cost.running_weights = {5.0, 0.1};
    c.cost.terminal_weights = {20.0, 1.0};
    c.cost.r = 0.2;
    c.cost.angle_indices = {0};
    c.x0 = {kPi, 0.0};
    return c;
  }
  if (task == "cartpole-swingup") {
    RunConfig c = cartpole_base(task, 2001);
    c.barriers.push_back({.kind = "cartpole-position", .mu = 0.1, .gamma = 1.0, .low = -5.0, .high = 5.0});
    c.x0 = {0.0, 0.0, 0.0, 0.0};
    return c;
  }
  if (task == "cartpole-balance-1c") {
    RunConfig c = cartpole_base(task, 201);
    c.barriers.push_back(
        {.kind = "cartpole-angle", .mu = 0.1, .gamma = 1.0, .low = kPi / 2.0, .high = 3.0 * kPi / 2.0});
    balance_cost(c);
    c.x0 = {0.0, kPi, 0.0, 0.0};
    return c;
  }
  if (task == "cartpole-balance-2c") {
    RunConfig c = cartpole_base(task, 201);
    c.barriers.push_back(
        {.kind = "cartpole-position", .mu = 0.01, .gamma = 10.0, .low = -10.0, .high = 10.0});
    c.barriers.push_back(
        {.kind = "cartpole-angle", .mu = 10.0, .gamma = 100.0, .low = kPi / 2.0, .high = 3.0 * kPi / 2.0});
    balance_cost(c);
    c.x0 = {0.0, kPi, 0.0, 0.0};
    return c;
  }
  if (task == "car-obstacles") {
    RunConfig c = base_config(task, 150, 128, 1000, 5e-3);
    c.system.kind = "car2d";
    c.system.num_cars = 1;
    c.system.car.sigma = 0.1;
    for (const auto& [ox, oy] : {std::pair{1.0, 1.0}, std::pair{1.0, 0.0}, std::pair{0.0, 2.0}}) {
      c.barriers.push_back(
          {.kind = "car-obstacle", .mu = 0.05, .gamma = 1.0, .center = {ox, oy}, .radius = 0.3});
    }
    c.cost.x_goal = car_goal(2.0, 2.0, 0.0);
    c.cost.running_weights = {0.1, 0.1, 0.0, 0.01};
    c.cost.terminal_weights = {1.0, 1.0, 0.0, 0.1};
    c.cost.r = 1.0;
    c.cost.angle_indices = {2};
    c.x0 = {0.0, 0.0, 0.0, 0.0};
    return c;
  }
  if (task == "car-multi") {
    RunConfig c = base_config(task, 150, 256, 1000, 5e-3);
    c.system.kind = "car2d";
    c.system.num_cars = 4;
    c.system.car.sigma = 0.1;
    c.barriers.push_back({.kind = "car-pairs", .mu = 0.1, .gamma = 1.0, .car_radius = 0.05});
    c.x0 = {0.0, 0.0, kPi / 4.0,  0.1, 2.0, 0.0, 3.0 * kPi / 4.0,  0.1,
            0.0, 2.0, -kPi / 4.0, 0.1, 2.0, 2.0, -3.0 * kPi / 4.0, 0.1};
    const std::array<std::array<double, 2>, 4> goals{{{2.0, 2.0}, {0.0, 2.0}, {2.0, 0.0}, {0.0, 0.0}}};
    for (int k = 0; k < 4; ++k) {
      for (double v : car_goal(goals[k][0], goals[k][1], c.x0[4 * k + 2])) c.cost.x_goal.push_back(v);
      for (double w : {0.1, 0.1, 0.0, 0.01}) c.cost.running_weights.push_back(w);
      for (double w : {1.0, 1.0, 0.0, 0.1}) c.cost.terminal_weights.push_back(w);
      c.cost.angle_indices.push_back(4 * k + 2);
    }
    c.cost.r = 1.0;
    return c;
  }
  std::ostringstream os;
  os << "unknown task '" << task << "'; expected one of:";
  for (const auto& n : task_names()) os << " " << n;
  throw ConfigError(os.str());
}

void RunConfig::validate() const {
  auto fail = [](const std::string& what) { throw ConfigError(what); };
  const SystemPtr sys = build_system(system);
  const auto n_x = static_cast<std::size_t>(sys->state_dim());
  if (x0.size() != n_x) fail("x0 must have " + std::to_string(n_x) + " entries");
  if (cost.x_goal.size() != n_x) fail("cost.x_goal must have " + std::to_string(n_x) + " entries");
  if (cost.running_weights.size() != n_x) fail("cost.running_weights must have n_x entries");
  if (cost.terminal_weights.size() != n_x) fail("cost.terminal_weights must have n_x entries");
  for (double w : cost.running_weights) if (w < 0) fail("cost.running_weights must be >= 0");
  for (double w : cost.terminal_weights) if (w < 0) fail("cost.terminal_weights must be >= 0");
  if (!(cost.r > 0.0)) fail("cost.r must be > 0");
  for (int k : cost.angle_indices) {
    if (k < 0 || static_cast<std::size_t>(k) >= n_x) fail("cost.angle_indices out of range");
  }
  if (!input_scale.empty() && input_scale.size() != n_x) fail("input_scale must be empty or have n_x entries");
  for (const auto& b : barriers) {
    if (!(b.mu >= 0.0)) fail("barrier mu must be >= 0");
    if (!(b.gamma > 0.0)) fail("barrier gamma must be > 0");
  }
  if (eval.num_rollouts < 1) fail("eval.num_rollouts must be >= 1");
  if (verify.num_rollouts < 0) fail("verify.num_rollouts must be >= 0");
  if (!(verify.epsilon >= 0.0)) fail("verify.epsilon must be >= 0");
  try {
    train.validate();
    build_barriers(barriers, system.num_cars);
  } catch (const std::invalid_argument& e) {
    fail(e.what());
  }
}

nlohmann::json to_json(const RunConfig& c) {
  json j;
  j["task"] = c.task;
  json sys{{"kind", c.system.kind}};
  if (c.system.kind == "pendulum") {
    const auto& p = c.system.pendulum;
    sys["mass"] = p.mass;
    sys["length"] = p.length;
    sys["damping"] = p.damping;
    sys["gravity"] = p.gravity;
    sys["sigma"] = p.sigma;
  } else if (c.system.kind == "cartpole") {
    const auto& p = c.system.cartpole;
    sys["cart_mass"] = p.cart_mass;
    sys["pole_mass"] = p.pole_mass;
    sys["length"] = p.length;
    sys["gravity"] = p.gravity;
    sys["sigma"] = p.sigma;
  } else {
    sys["num_cars"] = c.system.num_cars;
    sys["sigma"] = c.system.car.sigma;
  }
  j["system"] = sys;
  j["barriers"] = json::array();
  for (const auto& b : c.barriers) j["barriers"].push_back(barrier_to_json(b));
  j["cost"] = {{"x_goal", c.cost.x_goal},
               {"running_weights", c.cost.running_weights},
               {"terminal_weights", c.cost.terminal_weights},
               {"r", c.cost.r},
               {"angle_indices", c.cost.angle_indices}};
  j["x0"] = c.x0;
  j["input_scale"] = c.input_scale;
  const TrainConfig& t = c.train;
  j["train"] = {{"batch_size", t.batch_size},
                {"iterations", t.iterations},
                {"horizon_steps", t.horizon_steps},
                {"dt", t.dt},
                {"loss_weights", {{"a", t.weights.a}, {"b", t.weights.b}, {"c", t.weights.c}, {"d", t.weights.d}}},
                {"weight_decay", t.weight_decay},
                {"learning_rate", t.learning_rate},
                {"seed", t.seed},
                {"adam", {{"beta1", t.adam.beta1}, {"beta2", t.adam.beta2}, {"epsilon", t.adam.epsilon}}},
                {"qp",
                 {{"tol", t.qp.tol},
                  {"max_iters", t.qp.max_iters},
                  {"regularization", t.qp.regularization},
                  {"s_min", t.qp.s_min},
                  {"step_fraction", t.qp.step_fraction},
                  {"polish", t.qp.polish}}},
                {"threads", t.threads},
                {"deterministic", t.deterministic}};
  j["eval"] = {{"num_rollouts", c.eval.num_rollouts}, {"seed", c.eval.seed}};
  j["verify"] = {{"num_rollouts", c.verify.num_rollouts}, {"epsilon", c.verify.epsilon}};
  j["output_dir"] = c.output_dir;
  return j;
}

RunConfig from_json(const nlohmann::json& j) {
  RunConfig c;
  Reader r(j, "");
  r.get("task", c.task);
  r.object("system", [&](Reader& s) {
    s.get("kind", c.system.kind);
    if (c.system.kind == "pendulum") {
      s.get("mass", c.system.pendulum.mass);
      s.get("length", c.system.pendulum.length);
      s.get("damping", c.system.pendulum.damping);
      s.get("gravity", c.system.pendulum.gravity);
      s.get("sigma", c.system.pendulum.sigma);
    } else if (c.system.kind == "cartpole") {
      s.get("cart_mass", c.system.cartpole.cart_mass);
      s.get("pole_mass", c.system.cartpole.pole_mass);
      s.get("length", c.system.cartpole.length);
      s.get("gravity", c.system.cartpole.gravity);
      s.get("sigma", c.system.cartpole.sigma);
    } else if (c.system.kind == "car2d") {
      s.get("num_cars", c.system.num_cars);
      s.get("sigma", c.system.car.sigma);
    } else {
      Reader::fail(s.child("kind"), "must be one of pendulum, cartpole, car2d");
    }
  });
  if (const json* bs = r.raw("barriers")) {
    if (!bs->is_array()) Reader::fail("barriers", "must be an array");
    for (std::size_t i = 0; i < bs->size(); ++i) {
      c.barriers.push_back(barrier_from_json((*bs)[i], "barriers[" + std::to_string(i) + "]"));
    }
  }
  r.object("cost", [&](Reader& s) {
    s.get("x_goal", c.cost.x_goal);
    s.get("running_weights", c.cost.running_weights);
    s.get("terminal_weights", c.cost.terminal_weights);
    s.get("r", c.cost.r);
    s.get("angle_indices", c.cost.angle_indices);
  });
  r.get("x0", c.x0);
  r.get("input_scale", c.input_scale);
  r.object("train", [&](Reader& s) {
    TrainConfig& t = c.train;
    s.get("batch_size", t.batch_size);
    s.get("iterations", t.iterations);
    s.get("horizon_steps", t.horizon_steps);
    s.get("dt", t.dt);
    s.object("loss_weights", [&](Reader& w) {
      w.get("a", t.weights.a);
      w.get("b", t.weights.b);
      w.get("c", t.weights.c);
      w.get("d", t.weights.d);
    });
    s.get("weight_decay", t.weight_decay);
    s.get("learning_rate", t.learning_rate);
    s.get("seed", t.seed);
    s.object("adam", [&](Reader& a) {
      a.get("beta1", t.adam.beta1);
      a.get("beta2", t.adam.beta2);
      a.get("epsilon", t.adam.epsilon);
    });
    s.object("qp", [&](Reader& q) {
      q.get("tol", t.qp.tol);
      q.get("max_iters", t.qp.max_iters);
      q.get("regularization", t.qp.regularization);
      q.get("s_min", t.qp.s_min);
      q.get("step_fraction", t.qp.step_fraction);
      q.get("polish", t.qp.polish);
    });
    s.get("threads", t.threads);
    s.get("deterministic", t.deterministic);
  });
  r.object("eval", [&](Reader& s) {
    s.get("num_rollouts", c.eval.num_rollouts);
    s.get("seed", c.eval.seed);
  });
  r.object("verify", [&](Reader& s) {
    s.get("num_rollouts", c.verify.num_rollouts);
    s.get("epsilon", c.verify.epsilon);
  });
  r.get("output_dir", c.output_dir);
  r.finish();
  return c;
}

nlohmann::json merge_json(nlohmann::json base, const nlohmann::json& patch) {
  if (!base.is_object() || !patch.is_object()) return patch;
  for (const auto& [key, value] : patch.items()) {
    if (base.contains(key)) {
      base[key] = merge_json(base[key], value);
    } else {
      base[key] = value;
    }
  }
  return base;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  const std::string text = buffer.str();
  json patch;
  try {
    patch = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": " + describe_parse_error(text, e));
  }
  if (!patch.is_object()) throw ConfigError(path.string() + ": top level must be an object");
  json merged = patch;
  if (patch.contains("task")) {
    if (!patch["task"].is_string()) throw ConfigError("config key 'task' must be a string");
    merged = merge_json(to_json(preset(patch["task"].get<std::string>())), patch);
  }
  RunConfig c;
  try {
    c = from_json(merged);
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  c.validate();
  return c;
}

void save_config(const RunConfig& config, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << to_json(config).dump(2) << "\n";
}

SystemPtr build_system(const SystemConfig& config) {
  try {
    if (config.kind == "pendulum") return make_pendulum(config.pendulum);
    if (config.kind == "cartpole") return make_cartpole(config.cartpole);
    if (config.kind == "car2d") return make_car2d(config.num_cars, config.car);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("system: ") + e.what());
  }
  throw ConfigError("system.kind must be one of pendulum, cartpole, car2d (got '" + config.kind + "')");
}

BarrierSet build_barriers(const std::vector<BarrierConfig>& config, int num_cars) {
  BarrierSet out;
  for (const auto& b : config) {
    if (b.kind == "pendulum-box") {
      out.push_back(pendulum_box_barrier(b.low, b.high, b.mu, b.gamma));
    } else if (b.kind == "cartpole-position") {
      out.push_back(cartpole_position_barrier(b.low, b.high, b.mu, b.gamma));
    } else if (b.kind == "cartpole-angle") {
      out.push_back(cartpole_angle_barrier(b.low, b.high, b.mu, b.gamma));
    } else if (b.kind == "car-obstacle") {
      out.push_back(car_obstacle_barrier(b.center[0], b.center[1], b.radius, b.mu, b.gamma, b.car, num_cars));
    } else if (b.kind == "car-pairs") {
      for (auto& p : all_car_pair_barriers(num_cars, b.car_radius, b.mu, b.gamma)) out.push_back(p);
    } else {
      throw ConfigError("unknown barrier kind '" + b.kind + "'");
    }
  }
  return out;
}

ControlProblem build_problem(const RunConfig& config) {
  config.validate();
  ControlProblem p;
  p.system = build_system(config.system);
  p.barriers = build_barriers(config.barriers, config.system.num_cars);
  const int n_u = p.system->control_dim();
  p.cost.x_goal = to_vector(config.cost.x_goal);
  p.cost.running_weights = to_vector(config.cost.running_weights);
  p.cost.terminal_weights = to_vector(config.cost.terminal_weights);
  p.cost.R = config.cost.r * Matrix::Identity(n_u, n_u);
  p.cost.angle_indices = config.cost.angle_indices;
  p.x0 = to_vector(config.x0);
  if (!config.input_scale.empty()) p.input_scale = to_vector(config.input_scale);
  return p;
}

}  // namespace safe_fbsde
