#include "racerl/nn.hpp"

#include <cmath>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>

#include "racerl/errors.hpp"

namespace racerl::nn {

namespace {

constexpr char kMagic[8] = {'R', 'R', 'L', 'N', 'E', 'T', '0', '1'};
constexpr std::uint32_t kFormatVersion = 1;

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

void activate(Activation act, Matrix& m) {
  switch (act) {
    case Activation::relu:
      m = m.cwiseMax(0.0);
      break;
    case Activation::tanh:
      m = m.array().tanh();
      break;
    case Activation::sigmoid:
      m = m.unaryExpr([](double v) { return sigmoid(v); });
      break;
    case Activation::linear:
      break;
  }
}

// d(output)/d(preactivation), expressed through the output.
Matrix activation_derivative(Activation act, const Matrix& out) {
  switch (act) {
    case Activation::relu:
      return (out.array() > 0.0).cast<double>().matrix();
    case Activation::tanh:
      return (1.0 - out.array().square()).matrix();
    case Activation::sigmoid:
      return (out.array() * (1.0 - out.array())).matrix();
    case Activation::linear:
      break;
  }
  return Matrix::Ones(out.rows(), out.cols());
}

void check_columns(const Matrix& m, int rows, const char* what) {
  if (m.rows() != rows) {
    throw ShapeError(std::string(what) + ": expected " + std::to_string(rows) + " rows, got " +
                     std::to_string(m.rows()));
  }
}

template <class T>
void write_pod(std::ostream& out, const T& value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <class T>
T read_pod(std::istream& in) {
  T value{};
  in.read(reinterpret_cast<char*>(&value), sizeof(T));
  if (!in) throw std::runtime_error("checkpoint truncated");
  return value;
}

void write_matrix(std::ostream& out, const Matrix& m) {
  write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(m.rows()));
  write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(m.cols()));
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) write_pod<double>(out, m(r, c));
}

Matrix read_matrix(std::istream& in) {
  const auto rows = read_pod<std::uint32_t>(in);
  const auto cols = read_pod<std::uint32_t>(in);
  Matrix m(rows, cols);
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = read_pod<double>(in);
  return m;
}

}  // namespace

const char* to_string(Activation a) {
  switch (a) {
    case Activation::relu:
      return "relu";
    case Activation::tanh:
      return "tanh";
    case Activation::sigmoid:
      return "sigmoid";
    case Activation::linear:
      return "linear";
  }
  return "linear";
}

Activation activation_from_string(const std::string& name) {
  if (name == "relu") return Activation::relu;
  if (name == "tanh") return Activation::tanh;
  if (name == "sigmoid") return Activation::sigmoid;
  if (name == "linear") return Activation::linear;
  throw ConfigError("unknown activation '" + name + "'");
}

LstmState LstmState::zeros(int hidden_size) {
  return {Vector::Zero(hidden_size), Vector::Zero(hidden_size)};
}

int NetworkParams::input_size() const {
  if (lstm) return lstm->input_size();
  return layers.empty() ? 0 : layers.front().inputs();
}

int NetworkParams::output_size() const {
  if (!layers.empty()) return layers.back().outputs();
  return lstm ? lstm->hidden_size() : 0;
}

std::size_t NetworkParams::parameter_count() const {
  std::size_t n = 0;
  for (const auto& b : blocks(*this)) n += b.values.size();
  return n;
}

std::vector<ParamBlock> blocks(NetworkParams& params) {
  std::vector<ParamBlock> out;
  auto add = [&](auto& m, int layer) {
    out.push_back({std::span<double>(m.data(), static_cast<std::size_t>(m.size())), layer});
  };
  if (params.lstm) {
    add(params.lstm->input_weight, -1);
    add(params.lstm->hidden_weight, -1);
    add(params.lstm->bias, -1);
  }
  for (std::size_t i = 0; i < params.layers.size(); ++i) {
    add(params.layers[i].weight, static_cast<int>(i));
    add(params.layers[i].bias, static_cast<int>(i));
  }
  return out;
}

std::vector<ConstParamBlock> blocks(const NetworkParams& params) {
  std::vector<ConstParamBlock> out;
  for (const auto& b : blocks(const_cast<NetworkParams&>(params))) out.push_back({b.values, b.layer});
  return out;
}

bool same_shape(const NetworkParams& a, const NetworkParams& b) {
  if (a.layers.size() != b.layers.size() || a.lstm.has_value() != b.lstm.has_value()) return false;
  for (std::size_t i = 0; i < a.layers.size(); ++i) {
    const auto& la = a.layers[i];
    const auto& lb = b.layers[i];
    if (la.weight.rows() != lb.weight.rows() || la.weight.cols() != lb.weight.cols() ||
        la.bias.size() != lb.bias.size() || la.activation != lb.activation)
      return false;
  }
  if (a.lstm) {
    if (a.lstm->input_weight.rows() != b.lstm->input_weight.rows() ||
        a.lstm->input_weight.cols() != b.lstm->input_weight.cols() ||
        a.lstm->hidden_weight.cols() != b.lstm->hidden_weight.cols())
      return false;
  }
  return true;
}

NetworkParams zeros_like(const NetworkParams& params) {
  NetworkParams z = params;
  for (auto& b : blocks(z)) std::fill(b.values.begin(), b.values.end(), 0.0);
  return z;
}

bool all_finite(const NetworkParams& params) {
  for (const auto& b : blocks(params))
    for (double v : b.values)
      if (!std::isfinite(v)) return false;
  return true;
}

NetworkParams make_mlp(int inputs, std::span<const LayerSpec> specs, std::mt19937_64& rng,
                       double final_scale) {
  NetworkParams net;
  int fan_in = inputs;
  for (std::size_t i = 0; i < specs.size(); ++i) {
    const bool last = i + 1 == specs.size();
    const double bound = last ? final_scale : 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    DenseLayer layer;
    layer.weight = Matrix::NullaryExpr(specs[i].outputs, fan_in, [&]() { return dist(rng); });
    layer.bias = Vector::NullaryExpr(specs[i].outputs, [&]() { return dist(rng); });
    layer.activation = specs[i].activation;
    net.layers.push_back(std::move(layer));
    fan_in = specs[i].outputs;
  }
  return net;
}

LstmParams make_lstm(int inputs, int hidden, std::mt19937_64& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(hidden));
  std::uniform_real_distribution<double> dist(-bound, bound);
  LstmParams cell;
  cell.input_weight = Matrix::NullaryExpr(4 * hidden, inputs, [&]() { return dist(rng); });
  cell.hidden_weight = Matrix::NullaryExpr(4 * hidden, hidden, [&]() { return dist(rng); });
  cell.bias = Vector::NullaryExpr(4 * hidden, [&]() { return dist(rng); });
  cell.bias.segment(hidden, hidden).array() += 1.0;  // forget-gate bias
  return cell;
}

// ---------------------------------------------------------------------------

Matrix forward(const NetworkParams& params, const Matrix& input, ForwardCache* cache) {
  if (params.layers.empty()) throw ShapeError("forward: network has no dense layers");
  check_columns(input, params.layers.front().inputs(), "forward input");
  if (cache) {
    cache->inputs.clear();
    cache->outputs.clear();
  }
  Matrix x = input;
  for (const auto& layer : params.layers) {
    if (x.rows() != layer.inputs()) throw ShapeError("forward: incompatible adjacent layers");
    Matrix y = layer.weight * x;
    y.colwise() += layer.bias;
    activate(layer.activation, y);
    if (cache) {
      cache->inputs.push_back(std::move(x));
      cache->outputs.push_back(y);
    }
    x = std::move(y);
  }
  return x;
}

Vector forward(const NetworkParams& params, const Vector& input) {
  Matrix in = input;
  return forward(params, in, nullptr).col(0);
}

Gradients backward(const NetworkParams& params, const ForwardCache& cache,
                   const Matrix& output_gradient, bool want_param_gradients) {
  const std::size_t n = params.layers.size();
  if (cache.inputs.size() != n || cache.outputs.size() != n)
    throw ShapeError("backward: cache does not match network");
  check_columns(output_gradient, params.output_size(), "backward output gradient");
  if (output_gradient.cols() != cache.outputs.back().cols())
    throw ShapeError("backward: batch size mismatch");

  Gradients g;
  if (want_param_gradients) {
    g.params.layers.resize(n);
  }
  Matrix delta = output_gradient;
  for (std::size_t i = n; i-- > 0;) {
    const auto& layer = params.layers[i];
    const Matrix pre = delta.cwiseProduct(activation_derivative(layer.activation, cache.outputs[i]));
    if (want_param_gradients) {
      g.params.layers[i].weight = pre * cache.inputs[i].transpose();
      g.params.layers[i].bias = pre.rowwise().sum();
      g.params.layers[i].activation = layer.activation;
    }
    delta = layer.weight.transpose() * pre;
  }
  g.input = std::move(delta);
  return g;
}

// ---------------------------------------------------------------------------

std::pair<Vector, LstmState> lstm_step(const LstmParams& cell, const Vector& input,
                                       const LstmState& state) {
  const int h = cell.hidden_size();
  if (input.size() != cell.input_size()) throw ShapeError("lstm_step: input size mismatch");
  if (state.hidden.size() != h || state.cell.size() != h)
    throw ShapeError("lstm_step: state size mismatch");
  const Vector z = cell.input_weight * input + cell.hidden_weight * state.hidden + cell.bias;
  const Vector i = z.segment(0, h).unaryExpr([](double v) { return sigmoid(v); });
  const Vector f = z.segment(h, h).unaryExpr([](double v) { return sigmoid(v); });
  const Vector o = z.segment(2 * h, h).unaryExpr([](double v) { return sigmoid(v); });
  const Vector g = z.segment(3 * h, h).array().tanh();
  LstmState next;
  next.cell = f.cwiseProduct(state.cell) + i.cwiseProduct(g);
  next.hidden = o.cwiseProduct(Vector(next.cell.array().tanh()));
  return {next.hidden, next};
}

Matrix lstm_unroll(const LstmParams& cell, std::span<const Matrix> inputs, LstmCache* cache) {
  if (inputs.empty()) throw ShapeError("lstm_unroll: empty sequence");
  const int h = cell.hidden_size();
  const Eigen::Index batch = inputs.front().cols();
  Matrix hidden = Matrix::Zero(h, batch);
  Matrix c = Matrix::Zero(h, batch);
  if (cache) cache->steps.clear();
  for (const Matrix& x : inputs) {
    check_columns(x, cell.input_size(), "lstm_unroll input");
    if (x.cols() != batch) throw ShapeError("lstm_unroll: batch size changes across steps");
    Matrix z = cell.input_weight * x + cell.hidden_weight * hidden;
    z.colwise() += cell.bias;
    Matrix i = z.topRows(h).unaryExpr([](double v) { return sigmoid(v); });
    Matrix f = z.middleRows(h, h).unaryExpr([](double v) { return sigmoid(v); });
    Matrix o = z.middleRows(2 * h, h).unaryExpr([](double v) { return sigmoid(v); });
    Matrix g = z.bottomRows(h).array().tanh();
    Matrix c_next = f.cwiseProduct(c) + i.cwiseProduct(g);
    Matrix c_tanh = c_next.array().tanh();
    Matrix h_next = o.cwiseProduct(c_tanh);
    if (cache) {
      cache->steps.push_back({x, hidden, c, std::move(i), std::move(f), std::move(o), std::move(g),
                              c_next, c_tanh});
    }
    hidden = std::move(h_next);
    c = std::move(c_next);
  }
  return hidden;
}

LstmGradients lstm_backward(const LstmParams& cell, const LstmCache& cache,
                            const Matrix& final_hidden_gradient) {
  const int h = cell.hidden_size();
  if (cache.steps.empty()) throw ShapeError("lstm_backward: empty cache");
  check_columns(final_hidden_gradient, h, "lstm_backward gradient");

  LstmGradients g;
  g.params.input_weight = Matrix::Zero(cell.input_weight.rows(), cell.input_weight.cols());
  g.params.hidden_weight = Matrix::Zero(cell.hidden_weight.rows(), cell.hidden_weight.cols());
  g.params.bias = Vector::Zero(cell.bias.size());
  g.inputs.resize(cache.steps.size());

  Matrix dh = final_hidden_gradient;
  Matrix dc = Matrix::Zero(h, dh.cols());
  for (std::size_t t = cache.steps.size(); t-- > 0;) {
    const auto& s = cache.steps[t];
    const Matrix d_out = dh.cwiseProduct(s.cell_tanh);
    dc += dh.cwiseProduct(s.out_gate).cwiseProduct(
        Matrix((1.0 - s.cell_tanh.array().square()).matrix()));
    const Matrix d_in = dc.cwiseProduct(s.candidate);
    const Matrix d_forget = dc.cwiseProduct(s.cell_prev);
    const Matrix d_cand = dc.cwiseProduct(s.in_gate);

    Matrix dz(4 * h, dh.cols());
    dz.topRows(h) = d_in.array() * s.in_gate.array() * (1.0 - s.in_gate.array());
    dz.middleRows(h, h) = d_forget.array() * s.forget_gate.array() * (1.0 - s.forget_gate.array());
    dz.middleRows(2 * h, h) = d_out.array() * s.out_gate.array() * (1.0 - s.out_gate.array());
    dz.bottomRows(h) = d_cand.array() * (1.0 - s.candidate.array().square());

    g.params.input_weight += dz * s.input.transpose();
    g.params.hidden_weight += dz * s.hidden_prev.transpose();
    g.params.bias += dz.rowwise().sum();
    g.inputs[t] = cell.input_weight.transpose() * dz;

    dh = cell.hidden_weight.transpose() * dz;
    dc = dc.cwiseProduct(s.forget_gate);
  }
  return g;
}

Matrix forward_sequence(const NetworkParams& params, std::span<const Matrix> inputs,
                        SequenceCache* cache) {
  if (!params.lstm) throw ShapeError("forward_sequence: network has no LSTM cell");
  Matrix h = lstm_unroll(*params.lstm, inputs, cache ? &cache->lstm : nullptr);
  if (params.layers.empty()) return h;
  return forward(params, h, cache ? &cache->dense : nullptr);
}

SequenceGradients backward_sequence(const NetworkParams& params, const SequenceCache& cache,
                                    const Matrix& output_gradient) {
  if (!params.lstm) throw ShapeError("backward_sequence: network has no LSTM cell");
  SequenceGradients out;
  Matrix dh = output_gradient;
  if (!params.layers.empty()) {
    Gradients dense = backward(params, cache.dense, output_gradient);
    out.params = std::move(dense.params);
    dh = std::move(dense.input);
  }
  LstmGradients lg = lstm_backward(*params.lstm, cache.lstm, dh);
  out.params.lstm = std::move(lg.params);
  out.inputs = std::move(lg.inputs);
  return out;
}

// ---------------------------------------------------------------------------

AdamState make_adam_state(const NetworkParams& params, const AdamConfig& config) {
  AdamState s;
  s.first_moment = zeros_like(params);
  s.second_moment = zeros_like(params);
  s.config = config;
  return s;
}

void adam_update(NetworkParams& params, const NetworkParams& gradients, AdamState& state) {
  if (!same_shape(params, gradients) || !same_shape(params, state.first_moment))
    throw ShapeError("adam_update: parameter, gradient and moment shapes differ");
  auto p = blocks(params);
  const auto g = blocks(gradients);
  auto m = blocks(state.first_moment);
  auto v = blocks(state.second_moment);

  for (const auto& b : g)
    for (double x : b.values)
      if (!std::isfinite(x)) {
        throw NumericError("adam_update: non-finite gradient in " +
                               (b.layer < 0 ? std::string("lstm cell")
                                            : "layer " + std::to_string(b.layer)),
                           b.layer);
      }

  const auto& c = state.config;
  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double correction1 = 1.0 - std::pow(c.beta1, t);
  const double correction2 = 1.0 - std::pow(c.beta2, t);
  for (std::size_t k = 0; k < p.size(); ++k) {
    for (std::size_t i = 0; i < p[k].values.size(); ++i) {
      const double grad = g[k].values[i];
      double& m1 = m[k].values[i];
      double& m2 = v[k].values[i];
      m1 = c.beta1 * m1 + (1.0 - c.beta1) * grad;
      m2 = c.beta2 * m2 + (1.0 - c.beta2) * grad * grad;
      const double m_hat = m1 / correction1;
      const double v_hat = m2 / correction2;
      p[k].values[i] -= c.learning_rate * m_hat / (std::sqrt(v_hat) + c.epsilon);
    }
  }
}

void soft_update(const NetworkParams& source, NetworkParams& target, double tau) {
  if (!(tau >= 0.0 && tau <= 1.0)) throw DomainError("soft_update: tau must lie in [0, 1]");
  if (!same_shape(source, target)) throw ShapeError("soft_update: shapes differ");
  const auto s = blocks(source);
  auto t = blocks(target);
  for (std::size_t k = 0; k < s.size(); ++k)
    for (std::size_t i = 0; i < s[k].values.size(); ++i)
      t[k].values[i] = tau * s[k].values[i] + (1.0 - tau) * t[k].values[i];
}

// ---------------------------------------------------------------------------

void write_params(std::ostream& out, const NetworkParams& params) {
  out.write(kMagic, sizeof(kMagic));
  write_pod<std::uint32_t>(out, kFormatVersion);
  write_pod<std::uint8_t>(out, params.lstm ? 1 : 0);
  if (params.lstm) {
    write_matrix(out, params.lstm->input_weight);
    write_matrix(out, params.lstm->hidden_weight);
    write_matrix(out, params.lstm->bias);
  }
  write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(params.layers.size()));
  for (const auto& layer : params.layers) {
    write_pod<std::uint8_t>(out, static_cast<std::uint8_t>(layer.activation));
    write_matrix(out, layer.weight);
    write_matrix(out, layer.bias);
  }
  if (!out) throw std::runtime_error("write_params: stream error");
}

NetworkParams read_params(std::istream& in) {
  char magic[sizeof(kMagic)];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw std::runtime_error("read_params: bad magic");
  const auto version = read_pod<std::uint32_t>(in);
  if (version != kFormatVersion)
    throw std::runtime_error("read_params: unsupported version " + std::to_string(version));
  NetworkParams params;
  if (read_pod<std::uint8_t>(in) != 0) {
    LstmParams cell;
    cell.input_weight = read_matrix(in);
    cell.hidden_weight = read_matrix(in);
    cell.bias = read_matrix(in).col(0);
    params.lstm = std::move(cell);
  }
  const auto n = read_pod<std::uint32_t>(in);
  for (std::uint32_t i = 0; i < n; ++i) {
    DenseLayer layer;
    const auto act = read_pod<std::uint8_t>(in);
    if (act > static_cast<std::uint8_t>(Activation::linear))
      throw std::runtime_error("read_params: bad activation tag");
    layer.activation = static_cast<Activation>(act);
    layer.weight = read_matrix(in);
    layer.bias = read_matrix(in).col(0);
    params.layers.push_back(std::move(layer));
  }
  return params;
}

}  // namespace racerl::nn
